"""Synthetic parcels and the ROC study comparing the GP and fixed models.

A dataset is one parcel of ``n_voxels`` voxels on a 15 s on / 15 s off block
design. Active voxels carry the identified (unit sup-norm) canonical
response with amplitude 1; every voxel gets random polynomial trends and
AR(3) noise whose innovation sd is ``1 / cnr``.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .ar import simulate_ar
from .baselines import fit_fixed
from .evaluation import t_ratio
from .gibbs import ParcelData, SamplerSettings, default_spec, run_chain
from .identify import identified
from .kernel import KernelHyper
from .paradigm import HrfParams, MeanFunction, Paradigm, block_paradigm, build_mean_function, \
    standardize_columns

log = logging.getLogger(__name__)


@dataclass
class SimulationConfig:
    n_time: int = 150
    tr: float = 1.0
    n_voxels: int = 100
    n_active: int = 20
    ar_rho: tuple = (0.4, 0.1, 0.05)
    cnr: float = 5.0
    trend_sd: tuple = (2.0, 1.0, 0.5, 0.25)
    block_on: float = 15.0
    block_off: float = 15.0
    hrf: HrfParams = field(default_factory=HrfParams)

    @property
    def presample(self) -> int:
        return len(self.ar_rho)

    def paradigm(self) -> Paradigm:
        return block_paradigm(self.n_time, self.tr, self.block_on, self.block_off,
                              presample=self.presample)


@dataclass
class SimulationTruth:
    active_mask: np.ndarray
    true_b: np.ndarray
    true_rho: np.ndarray
    true_bold: np.ndarray
    trend_coeffs: np.ndarray
    cnr: float

    @property
    def sigma(self) -> float:
        return 1.0 / self.cnr

    def to_dict(self) -> dict:
        return {
            "active_mask": self.active_mask.astype(int).tolist(),
            "true_b": self.true_b.tolist(),
            "true_rho": self.true_rho.tolist(),
            "true_bold": self.true_bold.tolist(),
            "trend_coeffs": self.trend_coeffs.tolist(),
            "cnr": self.cnr,
            "sigma": self.sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationTruth":
        return cls(np.asarray(d["active_mask"], bool), np.asarray(d["true_b"], float),
                   np.asarray(d["true_rho"], float), np.asarray(d["true_bold"], float),
                   np.asarray(d["trend_coeffs"], float), float(d["cnr"]))


def trend_regressors(n_total: int) -> np.ndarray:
    """Constant plus standardized linear, quadratic and cubic trends."""
    t = np.arange(n_total, dtype=float)
    t = (t - t.mean()) / t.std()
    poly = standardize_columns(np.column_stack([t, t ** 2, t ** 3]))
    return np.column_stack([np.ones(n_total), poly])


def true_bold(cfg: SimulationConfig) -> np.ndarray:
    f = build_mean_function(cfg.paradigm(), cfg.hrf, standardize=True).values
    return identified(f, f)


def generate_dataset(cfg: SimulationConfig, rng: np.random.Generator, parcel_id: str = "0"):
    bold = true_bold(cfg)
    n_total = bold.shape[0]
    active = np.zeros(cfg.n_voxels, dtype=bool)
    active[rng.choice(cfg.n_voxels, cfg.n_active, replace=False)] = True
    b = active.astype(float)[None, :]
    z = trend_regressors(n_total)
    coeffs = rng.standard_normal((z.shape[1], cfg.n_voxels)) * np.asarray(cfg.trend_sd)[:, None]
    sigma = 1.0 / cfg.cnr
    noise = np.column_stack([simulate_ar(cfg.ar_rho, sigma, n_total, rng)
                             for _ in range(cfg.n_voxels)])
    y = bold @ b + z @ coeffs + noise
    truth = SimulationTruth(active, b, np.asarray(cfg.ar_rho, float), bold, coeffs, cfg.cnr)
    return ParcelData(y, z, cfg.presample, parcel_id), truth


def make_erroneous_mean(true_signal, target_corr: float, paradigm: Paradigm,
                        mistimed: HrfParams = HrfParams(peak_delay=12.0),
                        tol: float = 1e-4, max_iter: int = 200) -> MeanFunction:
    """Standardized blend ``a * true + (1 - a) * g`` with the requested correlation to ``true``.

    ``g`` is the paradigm convolved with a mis-timed HRF; ``a`` is found by
    bisection. The bisection trace is kept in ``extra``.
    """
    if not 0 < target_corr <= 1:
        raise ValueError(f"target correlation must be in (0, 1], got {target_corr}")
    true_signal = standardize_columns(np.asarray(true_signal, float).reshape(-1, 1))[:, 0]
    if target_corr == 1:
        return MeanFunction(true_signal, standardized=True, extra={"alpha": 1.0, "corr": 1.0})
    g = build_mean_function(paradigm, mistimed, standardize=True).values[:, 0]

    def corr(a):
        return float(np.corrcoef(a * true_signal + (1 - a) * g, true_signal)[0, 1])

    lo, hi = 0.0, 1.0
    if not corr(lo) < target_corr < corr(hi) + 1e-15:
        raise ValueError(f"blend cannot reach correlation {target_corr}: mis-timed "
                         f"component already has {corr(lo):.3f}")
    trace = []
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        c = corr(mid)
        trace.append((mid, c))
        if abs(c - target_corr) < tol:
            break
        if c < target_corr:
            lo = mid
        else:
            hi = mid
    else:
        raise ValueError("bisection for the erroneous mean did not converge")
    values = standardize_columns((mid * true_signal + (1 - mid) * g)[:, None])
    return MeanFunction(values, standardized=True,
                        extra={"alpha": mid, "corr": c, "trace": trace})


def prior_mean_for(cfg: SimulationConfig, truth: SimulationTruth, mode: str,
                   target_corr: float = 0.615, mistimed_delay: float = 12.0) -> np.ndarray:
    if mode == "correct":
        return standardize_columns(truth.true_bold)
    if mode == "erroneous":
        mistimed = HrfParams(peak_delay=mistimed_delay)
        return make_erroneous_mean(truth.true_bold, target_corr, cfg.paradigm(), mistimed).values
    raise ValueError(f"unknown prior-mean mode {mode!r}")


@dataclass
class StudyConfig:
    n_datasets: int = 32
    cnr: list = field(default_factory=lambda: [5.0, 7.0])
    lengthscale: list = field(default_factory=lambda: [2.0, 4.0])
    mean_mode: list = field(default_factory=lambda: ["erroneous"])
    models: list = field(default_factory=lambda: ["gp", "fixed"])
    omega2: float = 0.1
    target_corr: float = 0.615
    mistimed_delay: float = 12.0
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    seed: int = 0
    simulation: SimulationConfig = field(default_factory=SimulationConfig)

    def __post_init__(self):
        if self.n_datasets < 1:
            raise ValueError("n_datasets must be >= 1")
        if isinstance(self.sampler, dict):
            self.sampler = SamplerSettings(**self.sampler)
        if isinstance(self.simulation, dict):
            self.simulation = SimulationConfig(**self.simulation)
        for name in ("cnr", "lengthscale", "mean_mode", "models"):
            val = getattr(self, name)
            if not isinstance(val, (list, tuple)):
                setattr(self, name, [val])

    def grid(self):
        return list(itertools.product(self.cnr, self.lengthscale, self.mean_mode))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["simulation"]["hrf"] = asdict(self.simulation.hrf)
        return d


def dataset_seed(seed: int, combo: int, dataset: int) -> list:
    return [int(seed), int(combo), int(dataset)]


def chain_seed(seed: int, combo: int, dataset: int, model_index: int) -> int:
    ss = np.random.SeedSequence([int(seed), int(combo), int(dataset), int(model_index), 1])
    return int(ss.generate_state(1)[0])


def _fit_one(job):
    cfg, combo, cnr, lengthscale, mode, d, model, model_index = job
    sim = replace(cfg.simulation, cnr=cnr)
    rng = np.random.default_rng(dataset_seed(cfg.seed, combo, d))
    data, truth = generate_dataset(sim, rng, parcel_id=f"ds{d:03d}")
    f0 = prior_mean_for(sim, truth, mode, cfg.target_corr, cfg.mistimed_delay)
    sampler = SamplerSettings(cfg.sampler.n_iter, cfg.sampler.burn_in, cfg.sampler.thin,
                              chain_seed(cfg.seed, combo, d, model_index))
    spec = default_spec(data, f0, KernelHyper(lengthscale, cfg.omega2), ar_order=sim.presample,
                        sampler=sampler)
    draws = run_chain(data, spec) if model == "gp" else fit_fixed(data, spec)
    t = t_ratio(draws.b[:, 0, :], 0.0)
    return [{"cnr": cnr, "lengthscale": lengthscale, "mean_mode": mode, "dataset_id": d,
             "model": model, "voxel": j, "t_value": float(t[j]),
             "truth_active": int(truth.active_mask[j])} for j in range(t.size)]


RECORD_FIELDS = ["cnr", "lengthscale", "mean_mode", "dataset_id", "model", "voxel", "t_value",
                 "truth_active"]


def write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow({**r, "t_value": repr(r["t_value"])})


def run_study(config: StudyConfig, out_dir=None, jobs: int = 1) -> list:
    """Fit every (grid cell, dataset, model); returns one record per voxel and fit.

    With ``out_dir`` each fit's records go to their own CSV and the config to
    ``study.json``.
    """
    jobs_list = []
    for combo, (cnr, ls, mode) in enumerate(config.grid()):
        for d in range(config.n_datasets):
            for mi, model in enumerate(config.models):
                jobs_list.append((config, combo, cnr, ls, mode, d, model, mi))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_fit_one, jobs_list))
    else:
        results = [_fit_one(j) for j in jobs_list]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "study.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
        for job, recs in zip(jobs_list, results):
            _, combo, _, _, _, d, model, _ = job
            write_records(out / f"records_c{combo}_ds{d:03d}_{model}.csv", recs)
    return [r for recs in results for r in recs]


def summarize_study(records, thresholds=None) -> dict:
    """Averaged ROC per (grid cell, model) plus the paired GP-vs-fixed comparison.

    Returns ``{(cnr, lengthscale, mean_mode): {"curves": {model: RocCurve},
    "auc_difference": ..., "matched_tpr_gain": ...}}``; the paired entries are
    present only when both ``gp`` and ``fixed`` were fitted.
    """
    from .evaluation import DEFAULT_THRESHOLDS, average_roc, matched_tpr_gain, roc_curve

    thresholds = DEFAULT_THRESHOLDS if thresholds is None else np.asarray(thresholds, float)
    groups = {}
    for r in records:
        key = (r["cnr"], r["lengthscale"], r["mean_mode"])
        groups.setdefault(key, {}).setdefault(r["model"], {}).setdefault(
            r["dataset_id"], []).append(r)
    out = {}
    for key, by_model in groups.items():
        curves = {}
        for model, by_ds in by_model.items():
            per_ds = []
            for d in sorted(by_ds):
                recs = sorted(by_ds[d], key=lambda r: r["voxel"])
                per_ds.append(roc_curve([r["t_value"] for r in recs],
                                        [r["truth_active"] for r in recs], thresholds))
            curves[model] = average_roc(per_ds)
        cell = {"curves": curves}
        if "gp" in curves and "fixed" in curves:
            cell["auc_difference"] = curves["gp"].auc - curves["fixed"].auc
            cell["matched_tpr_gain"] = matched_tpr_gain(curves["gp"], curves["fixed"])
        out[key] = cell
    return out
