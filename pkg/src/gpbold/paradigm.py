"""Experimental paradigms, the double-gamma HRF and GP prior mean functions.

Times are in seconds. The sampling grid covers ``n_time + presample`` scans;
scan ``i`` (0-based) sits at ``(i - presample) * tr`` seconds, so the first
estimation scan is at time 0 and presample scans are at negative times.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import gamma

from .errors import DegenerateInputError


@dataclass(frozen=True)
class Event:
    onset: float
    duration: float


@dataclass
class Paradigm:
    """Stimulus events per stimulus type on a TR grid.

    Parameters
    ----------
    stimuli : list of list of Event
        One event list per stimulus type.
    tr : float
        Repetition time in seconds.
    n_time : int
        Number of estimation scans ``T``.
    presample : int
        Number of presample scans ``K`` preceding the estimation window.
    """

    stimuli: list[list[Event]]
    tr: float
    n_time: int
    presample: int = 0

    def __post_init__(self):
        self.stimuli = [[e if isinstance(e, Event) else Event(*e) for e in events]
                        for events in self.stimuli]
        if len(self.stimuli) < 1:
            raise ValueError("paradigm needs at least one stimulus type")
        if self.tr <= 0:
            raise ValueError(f"tr must be positive, got {self.tr}")
        if self.n_time < 1:
            raise ValueError(f"n_time must be >= 1, got {self.n_time}")
        if self.presample < 0:
            raise ValueError(f"presample must be >= 0, got {self.presample}")
        end = self.n_time * self.tr
        for m, events in enumerate(self.stimuli):
            for e in events:
                if e.onset < 0 or e.duration < 0 or e.onset + e.duration > end + 1e-9:
                    raise ValueError(f"stimulus {m}: event {e} outside [0, {end}] s")

    @property
    def n_stimuli(self) -> int:
        return len(self.stimuli)

    @property
    def n_total(self) -> int:
        return self.n_time + self.presample

    def times(self) -> np.ndarray:
        """Scan times in seconds for the full grid, presample included."""
        return (np.arange(self.n_total) - self.presample) * self.tr

    def boxcars(self, oversampling: int = 1) -> np.ndarray:
        """Event-count indicator, shape ``(n_total * oversampling, M)``.

        Each event switches on ``max(1, round(duration / dt))`` consecutive
        samples starting at ``round(onset / dt)``. Overlapping events add.
        """
        dt = self.tr / oversampling
        n = self.n_total * oversampling
        offset = self.presample * oversampling
        box = np.zeros((n, self.n_stimuli))
        for m, events in enumerate(self.stimuli):
            for e in events:
                start = offset + int(round(e.onset / dt))
                width = max(1, int(round(e.duration / dt)))
                box[start:min(start + width, n), m] += 1.0
        return box

    def shifted(self, seconds: float) -> "Paradigm":
        stim = [[Event(e.onset + seconds, e.duration) for e in events] for events in self.stimuli]
        return Paradigm(stim, self.tr, self.n_time, self.presample)

    def to_dict(self) -> dict:
        return {
            "tr": self.tr,
            "n_time": self.n_time,
            "presample": self.presample,
            "stimuli": [[{"onset": e.onset, "duration": e.duration} for e in events]
                        for events in self.stimuli],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Paradigm":
        stim = [[Event(float(e["onset"]), float(e["duration"])) for e in events]
                for events in d["stimuli"]]
        return cls(stim, float(d["tr"]), int(d["n_time"]), int(d.get("presample", 0)))

    @classmethod
    def from_json(cls, path) -> "Paradigm":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def block_paradigm(n_time=150, tr=1.0, on=15.0, off=15.0, presample=0, first_onset=0.0):
    """Single-stimulus on/off block design filling ``n_time`` scans."""
    events = []
    t = first_onset
    while t + on <= n_time * tr + 1e-9:
        events.append(Event(t, on))
        t += on + off
    return Paradigm([events], tr, n_time, presample)


@dataclass(frozen=True)
class HrfParams:
    """Double-gamma shape. Defaults are the canonical SPM values."""

    peak_delay: float = 6.0
    undershoot_delay: float = 16.0
    peak_dispersion: float = 1.0
    undershoot_dispersion: float = 1.0
    undershoot_ratio: float = 1.0 / 6.0
    kernel_length: float = 32.0

    def __post_init__(self):
        if self.peak_dispersion <= 0 or self.undershoot_dispersion <= 0:
            raise ValueError("HRF dispersions must be positive")
        if self.kernel_length <= 0:
            raise ValueError("HRF kernel_length must be positive")
        if self.peak_delay <= 0 or self.undershoot_delay <= 0:
            raise ValueError("HRF delays must be positive")


def double_gamma(t, params: HrfParams = HrfParams()):
    """Difference of two gamma densities; zero for ``t < 0``.

    Shapes are ``delay / dispersion`` and scales are ``dispersion``, so each
    component peaks near ``delay - dispersion`` seconds.
    """
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("double_gamma needs finite times")
    p = params
    peak = gamma.pdf(t, p.peak_delay / p.peak_dispersion, scale=p.peak_dispersion)
    under = gamma.pdf(t, p.undershoot_delay / p.undershoot_dispersion,
                      scale=p.undershoot_dispersion)
    out = peak - p.undershoot_ratio * under
    return np.where(t < 0, 0.0, out)


def sampled_hrf(tr: float, params: HrfParams = HrfParams(), oversampling: int = 1) -> np.ndarray:
    dt = tr / oversampling
    return double_gamma(np.arange(0.0, params.kernel_length, dt), params)


@dataclass
class MeanFunction:
    """Prior mean columns ``f_0,m`` on the full scan grid, shape ``(T + K, M)``."""

    values: np.ndarray
    standardized: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]

    @property
    def n_stimuli(self) -> int:
        return self.values.shape[1]

    def column(self, m: int) -> np.ndarray:
        return self.values[:, m]


def standardize_columns(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    sd = x.std(axis=0)
    if np.any(sd == 0):
        raise DegenerateInputError(
            f"cannot standardize constant columns {np.flatnonzero(sd == 0).tolist()}")
    return (x - x.mean(axis=0)) / sd


def build_mean_function(paradigm: Paradigm, params: HrfParams = HrfParams(),
                        standardize: bool = True, oversampling: int = 1) -> MeanFunction:
    """Convolve each stimulus boxcar with the sampled HRF on the scan grid.

    With ``oversampling > 1`` the convolution runs on a finer grid and is
    decimated back to scan times (scaled by ``1 / oversampling`` to keep
    the TR-resolution amplitude).
    """
    box = paradigm.boxcars(oversampling)
    hrf = sampled_hrf(paradigm.tr, params, oversampling)
    n = box.shape[0]
    cols = [np.convolve(box[:, m], hrf)[:n] for m in range(box.shape[1])]
    values = np.column_stack(cols)[::oversampling] / oversampling
    if standardize:
        values = standardize_columns(values)
    return MeanFunction(values, standardized=standardize)
