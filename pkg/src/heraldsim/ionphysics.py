"""Classical level-population model of the 40Ca+ ion.

The ion is tracked as a single level at a time; every transition is a
random jump. Scalar functions act on one ion, the ``*_array`` variants on
an array of level codes (one per cycle) and share the same rules.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidParam, InvalidState, InvalidTransition

PS_PER_S = 10**12


class IonState(enum.IntEnum):
    S12_m_minus_half = 0
    D52_m_minus_5half = 1
    D52_m_plus_3half = 2
    P32_m_minus_3half = 3
    D32_shelf = 4


S = IonState.S12_m_minus_half
D_PREP = IonState.D52_m_minus_5half
D_AUX = IonState.D52_m_plus_3half
P = IonState.P32_m_minus_3half
D_SHELF = IonState.D32_shelf

D52_LEVELS = (D_PREP, D_AUX)
ALLOWED_729 = {(S, D_PREP), (D_PREP, S), (S, D_AUX), (D_AUX, S)}


class Outcome(enum.Enum):
    BRIGHT = "BRIGHT"
    DARK = "DARK"
    SKIPPED = "SKIPPED"


@dataclass(frozen=True)
class IonParams:
    tau_P: float = 7.2e-9
    tau_D: float = 1.17
    branch_to_S: float = 0.935
    p_prep_fail: float = 0.01
    p_pulse_error: float = 0.0

    def __post_init__(self):
        for name in ("branch_to_S", "p_prep_fail", "p_pulse_error"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidParam(f"ion.{name} must lie in [0, 1], got {v}")
        for name in ("tau_P", "tau_D"):
            if not getattr(self, name) > 0:
                raise InvalidParam(f"ion.{name} must be positive")


def absorb_photon(
    state: IonState, params: IonParams, rng: np.random.Generator
) -> tuple[IonState, Optional[int]]:
    """Absorb one 854 nm photon.

    Only an ion in D5/2(m=-5/2) absorbs. It is excited to P3/2 and either
    Raman-scatters to S1/2 (returning the 393 nm emission delay in ps) or
    falls back to D5/2(m=-5/2) without a herald.
    """
    if state != D_PREP:
        return state, None
    if rng.random() < params.branch_to_S:
        delay = rng.exponential(params.tau_P)
        return S, int(round(delay * PS_PER_S))
    return D_PREP, None


def decay_probability(window: float, params: IonParams) -> float:
    return -math.expm1(-window / params.tau_D)


def sample_decay_times(
    n: int, window: float, params: IonParams, rng: np.random.Generator
) -> np.ndarray:
    """Decay time (ps from window start) for ``n`` ions sitting in D5/2, -1 if none.

    Decay happens with probability 1 - exp(-window/tau_D); its time follows the
    exponential hazard truncated to the window.
    """
    if window < 0:
        raise InvalidParam("window must be nonnegative")
    u = rng.random(n)
    p = decay_probability(window, params)
    out = np.full(n, -1, dtype=np.int64)
    hit = u < p
    if hit.any():
        # u / p is uniform on [0, 1) given a decay; invert the truncated CDF
        t = -params.tau_D * np.log1p(-u[hit])
        out[hit] = np.minimum(np.floor(t * PS_PER_S), window * PS_PER_S - 1).astype(np.int64)
    return out


def spontaneous_decay(
    state: IonState, window: float, params: IonParams, rng: np.random.Generator
) -> tuple[IonState, Optional[int]]:
    if state not in D52_LEVELS:
        return state, None
    t = int(sample_decay_times(1, window, params, rng)[0])
    if t < 0:
        return state, None
    return S, t


def pi_pulse(
    state: IonState,
    from_level: IonState,
    to_level: IonState,
    params: IonParams,
    rng: np.random.Generator,
) -> IonState:
    """Coherent 729 nm pi-pulse: swaps the populations of ``from_level`` and ``to_level``.

    Any other level (D3/2 in particular) is not addressed. With probability
    ``p_pulse_error`` an addressed ion stays where it was.
    """
    if (from_level, to_level) not in ALLOWED_729:
        raise InvalidTransition(f"no 729 nm pi-pulse couples {from_level.name} -> {to_level.name}")
    if state not in (from_level, to_level):
        return state
    if params.p_pulse_error and rng.random() < params.p_pulse_error:
        return state
    return to_level if state == from_level else from_level


def pi_pulse_array(
    levels: np.ndarray,
    from_level: IonState,
    to_level: IonState,
    params: IonParams,
    rng: np.random.Generator,
) -> np.ndarray:
    if (from_level, to_level) not in ALLOWED_729:
        raise InvalidTransition(f"no 729 nm pi-pulse couples {from_level.name} -> {to_level.name}")
    up = levels == from_level
    down = levels == to_level
    if params.p_pulse_error:
        ok = rng.random(len(levels)) >= params.p_pulse_error
        up &= ok
        down &= ok
    out = levels.copy()
    out[up] = to_level
    out[down] = from_level
    return out


def shelve_397(state: IonState) -> IonState:
    return D_SHELF if state == S else state


def shelve_397_array(levels: np.ndarray) -> np.ndarray:
    return np.where(levels == S, np.int8(D_SHELF), levels).astype(levels.dtype)


def fluorescence_measure(state: IonState) -> Outcome:
    """BRIGHT when the 397/866 nm cooling lasers scatter (S1/2 or D3/2), else DARK."""
    if state == P:
        raise InvalidState("P3/2 cannot persist until the state measurement")
    return Outcome.BRIGHT if state in (S, D_SHELF) else Outcome.DARK


def fluorescence_measure_array(levels: np.ndarray) -> np.ndarray:
    """Boolean DARK flag per ion."""
    if (levels == P).any():
        raise InvalidState("P3/2 cannot persist until the state measurement")
    return (levels == D_PREP) | (levels == D_AUX)
