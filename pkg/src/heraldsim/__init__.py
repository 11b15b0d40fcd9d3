"""Simulation and analysis of doubly-heralded single-photon absorption by a trapped ion."""
from .analysis import (
    CoincidenceMetrics,
    FitResult,
    compute_metrics,
    expected_shape,
    fit_peak,
    herald_histogram,
    postselect,
)
from .config import RunConfig
from .ionphysics import IonParams, IonState, Outcome
from .report import Report, build_report, write_report
from .sequence import CycleRecord, CycleRecords, SequenceParams, Truth, classify_cycle, run_experiment
from .source import DetectorParams, SourceParams
from .timetag import Channel, Histogram, TagStream, TimeTag, cross_correlate, merge_streams, read_stream, write_stream

__version__ = "0.1.0"
