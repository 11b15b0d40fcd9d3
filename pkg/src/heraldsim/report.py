"""End-to-end analysis of a simulated (or recorded) run and its file outputs."""
from __future__ import annotations

import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .analysis import (
    CoincidenceMetrics,
    FitResult,
    compute_metrics,
    dark_exposure_fraction,
    fit_peak,
    postselect,
)
from .config import RunConfig
from .errors import AnalysisError, InvalidParam
from .sequence import CycleRecords
from .timetag import PMT_CHANNELS, Channel, Histogram, TagStream, cross_correlate

# published reference values the report compares against
PUBLISHED_VALUES = {
    "coincidences": 89.0,
    "interaction_time_s": 24540.0,
    "background_raw": 37.1,
    "sbr_raw": 2.4,
    "snr_raw": 14.6,
    "background_post": 2.3,
    "background_post_fine": 0.14,
    "sbr_gain": 16.0,
    "snr_gain": 4.1,
    "tau_plus_ns": 7.2,
    "tau_minus_ns": 7.0,
}


class Outputs:
    """Stage files in a scratch directory and move them into place only on commit."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out_dir))
        self.names: list[str] = []

    def path(self, name: str) -> Path:
        self.names.append(name)
        return self.tmp / name

    def commit(self) -> list[Path]:
        done = []
        for name in self.names:
            target = self.out_dir / name
            os.replace(self.tmp / name, target)
            done.append(target)
        shutil.rmtree(self.tmp, ignore_errors=True)
        return done

    def discard(self) -> None:
        shutil.rmtree(self.tmp, ignore_errors=True)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.commit()
        else:
            self.discard()
        return False


@dataclass
class Report:
    histograms: dict[str, Histogram]
    metrics: dict[str, CoincidenceMetrics | None]
    fit: FitResult | None
    interaction_time_s: float
    dark_exposure: float
    notes: list[str] = field(default_factory=list)

    def simulated_values(self) -> dict[str, float | None]:
        raw, post = self.metrics.get("raw"), self.metrics.get("post")
        fine = self.metrics.get("post_fine")

        def ratio(a, b):
            if a is None or b is None or b == 0:
                return None
            return a / b

        return {
            "coincidences": raw.signal if raw else None,
            "interaction_time_s": self.interaction_time_s,
            "background_raw": raw.background_per_bin if raw else None,
            "sbr_raw": raw.sbr if raw else None,
            "snr_raw": raw.snr if raw else None,
            "background_post": post.background_per_bin if post else None,
            "background_post_fine": fine.background_per_bin if fine else None,
            "sbr_gain": ratio(post.sbr if post else None, raw.sbr if raw else None),
            "snr_gain": ratio(post.snr if post else None, raw.snr if raw else None),
            "tau_plus_ns": self.fit.tau_plus / 1000 if self.fit else None,
            "tau_minus_ns": self.fit.tau_minus / 1000 if self.fit else None,
        }

    def to_dict(self) -> dict:
        out = {}
        for name, m in self.metrics.items():
            out[name] = (
                None
                if m is None
                else {
                    "signal": m.signal,
                    "background_per_bin": m.background_per_bin,
                    "sbr": m.sbr,
                    "snr": m.snr,
                    "no_peak": not m.has_peak,
                }
            )
        out["fit"] = None if self.fit is None else fit_dict(self.fit)
        out["interaction_time_s"] = self.interaction_time_s
        out["dark_exposure_fraction"] = self.dark_exposure
        out["comparison"] = [
            {"quantity": k, "simulated": v, "reference": PUBLISHED_VALUES[k]}
            for k, v in self.simulated_values().items()
        ]
        out["notes"] = list(self.notes)
        return out

    def to_text(self) -> str:
        lines = []
        for name, m in self.metrics.items():
            if m is None:
                lines.append(f"{name}.metrics = undefined")
                continue
            lines += [
                f"{name}.signal = {m.signal:.6g}",
                f"{name}.background_per_bin = {m.background_per_bin:.6g}",
                f"{name}.sbr = {m.sbr:.6g}",
                f"{name}.snr = {m.snr:.6g}",
            ]
            if not m.has_peak:
                lines.append(f"{name}.flag = no peak")
        if self.fit is None:
            lines.append("fit = n/a")
        else:
            lines += [f"fit.{k} = {v:.6g}" for k, v in fit_dict(self.fit).items()]
        lines.append(f"interaction_time_s = {self.interaction_time_s:.6g}")
        lines.append(f"dark_exposure_fraction = {self.dark_exposure:.6g}")
        lines += [f"note = {n}" for n in self.notes]
        return "\n".join(lines) + "\n"

    def comparison_table(self) -> str:
        rows = ["quantity,simulated,reference"]
        for k, v in self.simulated_values().items():
            rows.append(f"{k},{'' if v is None else f'{v:.6g}'},{PUBLISHED_VALUES[k]:g}")
        return "\n".join(rows) + "\n"


def fit_dict(fit: FitResult) -> dict:
    return {
        "tau_minus_ps": fit.tau_minus,
        "tau_plus_ps": fit.tau_plus,
        "amplitude": fit.amplitude,
        "offset": fit.offset,
        "log_likelihood": fit.log_likelihood,
    }


def _try_metrics(hist: Histogram, notes: list[str], name: str) -> CoincidenceMetrics | None:
    try:
        m = compute_metrics(hist)
    except (AnalysisError, InvalidParam) as exc:
        notes.append(f"{name}: {exc}")
        return None
    if not m.has_peak:
        notes.append(f"{name}: no peak (signal <= 0)")
    return m


def build_report(tags: TagStream, records: CycleRecords, config: RunConfig) -> Report:
    """Correlate raw and post-selected tags on both grids, compute metrics and fit the peak."""
    corr = config.correlation
    post = postselect(tags, records)
    f_min, f_max = corr.fine_grid
    grids = {
        "raw": (tags, corr.bin_width_ps, corr.t_min_ps, corr.t_max_ps),
        "post": (post, corr.bin_width_ps, corr.t_min_ps, corr.t_max_ps),
        "raw_fine": (tags, corr.fine_bin_width_ps, f_min, f_max),
        "post_fine": (post, corr.fine_bin_width_ps, f_min, f_max),
    }
    hists = {
        name: cross_correlate(s, Channel.APD854, PMT_CHANNELS, w, lo, hi)
        for name, (s, w, lo, hi) in grids.items()
    }
    notes: list[str] = []
    metrics = {name: _try_metrics(h, notes, name) for name, h in hists.items()}
    try:
        fit = fit_peak(hists["post_fine"])
    except (AnalysisError, InvalidParam) as exc:
        notes.append(f"fit: {exc}")
        fit = None
    exposure = dark_exposure_fraction(records)
    return Report(
        histograms=hists,
        metrics=metrics,
        fit=fit,
        interaction_time_s=records.interaction_time(),
        dark_exposure=exposure if math.isfinite(exposure) else 0.0,
        notes=notes,
    )


def write_report(report: Report, out: Outputs, config: RunConfig, figures: bool = True) -> None:
    prov = config.provenance()
    for name, h in report.histograms.items():
        h.to_csv(out.path(f"hist_{name}.csv"), prov)
    out.path("report.txt").write_text(f"# {prov}\n" + report.to_text())
    doc = {"provenance": prov, **report.to_dict()}
    out.path("report.json").write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    out.path("comparison.csv").write_text(f"# {prov}\n" + report.comparison_table())
    if figures:
        from .plotting import plot_coincidences, plot_peak

        plot_coincidences(report.histograms["raw"], report.histograms["post"], out.path("coincidences.png"))
        plot_peak(report.histograms["post_fine"], report.fit, out.path("peak_fit.png"))
