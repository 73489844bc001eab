"""``gpbold simulate|fit|evaluate`` command-line front end.

All commands read one JSON config with optional ``simulate``, ``fit`` and
``evaluate`` sections; command-line flags override config values. Output
layout under ``--out``::

    datasets/ds_000/{Y,Z,prior_mean}.csv, paradigm.json, truth.json
    fits/<model>/ds_000/parcel_<id>/{<group>.csv, metadata.json, timing.json}
    fits/<model>/ds_000/index.json
    eval/<model>/ds_000/activity.csv, eval/roc_<model>.csv, eval/roc_summary.json

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .ar import ArPrior
from .baselines import FirSpec, derivative_basis, derivative_spec, fir_latent_model
from .errors import GpBoldError, NumericalError
from .evaluation import DEFAULT_THRESHOLDS, activity_map, average_roc, roc_curve, \
    matched_tpr_gain, scale_global_mean
from .gibbs import (ParcelData, PosteriorDraws, SamplerSettings, default_spec,
                    fixed_latent_model, gp_latent_model, run_gibbs)
from .kernel import KernelHyper
from .paradigm import HrfParams, build_mean_function
from .simulation import SimulationConfig, generate_dataset, prior_mean_for

log = logging.getLogger("gpbold")

MODELS = ("gp", "fixed", "fixed-deriv", "fir")
EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gpbold", description="GP-prior predicted BOLD: simulate, fit, evaluate.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in (("simulate", "write synthetic parcel datasets"),
                           ("fit", "run the Gibbs sampler on every parcel"),
                           ("evaluate", "t-maps, PPMs and ROC curves from fitted draws")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True, help="JSON config file")
        s.add_argument("--out", help="output directory (default: config 'out')")
        s.add_argument("--seed", type=int, help="base seed (default: config 'seed')")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "fit":
            s.add_argument("--model", choices=MODELS, help="model (default: config fit.model)")
            s.add_argument("--jobs", type=int,
                           help="worker processes (default: $GPBOLD_JOBS, then 1)")
            s.add_argument("--data", help="dataset directory or parent of ds_* directories")
        if name == "evaluate":
            s.add_argument("--model", choices=MODELS, action="append",
                           help="restrict to these models (repeatable)")
            s.add_argument("--roc", action=argparse.BooleanOptionalAction, default=None,
                           help="compute ROC curves (needs truth.json)")
    return p


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return cfg


def _seed(args, cfg) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise UsageError("a seed is required (--seed or config 'seed')")
    return int(seed)


def _out(args, cfg) -> Path:
    out = args.out or cfg.get("out")
    if out is None:
        raise UsageError("an output directory is required (--out or config 'out')")
    return Path(out)


def _jobs(args) -> int:
    jobs = args.jobs
    if jobs is None:
        env = os.environ.get("GPBOLD_JOBS")
        try:
            jobs = int(env) if env else 1
        except ValueError:
            raise UsageError(f"GPBOLD_JOBS must be an integer, got {env!r}") from None
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return jobs


def _hrf(d) -> HrfParams:
    return HrfParams(**d) if d else HrfParams()


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# simulate ------------------------------------------------------------------

def cmd_simulate(args, cfg) -> int:
    sec = dict(cfg.get("simulate", {}))
    seed = _seed(args, cfg)
    out = _out(args, cfg) / "datasets"
    n_datasets = int(sec.pop("n_datasets", 1))
    mode = sec.pop("mean_mode", "erroneous")
    target_corr = float(sec.pop("target_corr", 0.615))
    mistimed = float(sec.pop("mistimed_delay", 12.0))
    n_parcels = int(sec.pop("n_parcels", 1))
    sim_kw = sec.pop("simulation", {})
    if sec:
        raise UsageError(f"unknown simulate keys: {sorted(sec)}")
    if "hrf" in sim_kw:
        sim_kw = dict(sim_kw, hrf=_hrf(sim_kw["hrf"]))
    for key in ("ar_rho", "trend_sd"):
        if key in sim_kw:
            sim_kw[key] = tuple(sim_kw[key])
    try:
        sim = SimulationConfig(**sim_kw)
    except TypeError as exc:
        raise UsageError(f"simulate.simulation: {exc}") from None
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {out}: {exc}") from None
    for d in range(n_datasets):
        rng = np.random.default_rng([seed, d])
        data, truth = generate_dataset(sim, rng, parcel_id="0")
        f0 = prior_mean_for(sim, truth, mode, target_corr, mistimed)
        tdict = dict(truth.to_dict(), mean_mode=mode, dataset=d, seed=[seed, d])
        parcels = None
        if n_parcels > 1:
            parcels = [str(k) for k in np.arange(sim.n_voxels) * n_parcels // sim.n_voxels]
        io.save_dataset(out / f"ds_{d:03d}", data.y, data.z, sim.paradigm(), f0, tdict, parcels)
        log.info("wrote %s", out / f"ds_{d:03d}")
    _write_json(out / "simulate.json", {"seed": seed, "n_datasets": n_datasets,
                                        "mean_mode": mode, "target_corr": target_corr,
                                        "mistimed_delay": mistimed, "cnr": sim.cnr})
    return EXIT_OK


# fit -----------------------------------------------------------------------

def _dataset_dirs(root: Path) -> list:
    if (root / "Y.csv").exists():
        return [root]
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "Y.csv").exists())
    if not dirs:
        raise UsageError(f"no datasets (directories with Y.csv) under {root}")
    return dirs


def _parcels(ds) -> list:
    """``[(parcel_id, voxel_indices)]`` in sorted label order."""
    labels = ds["parcels"]
    if labels is None:
        return [("0", np.arange(ds["y"].shape[1]))]
    return [(str(p), np.flatnonzero(labels == p)) for p in sorted(set(labels))]


def _fit_parcel(job) -> dict:
    """Fit one parcel and write its draws; failures come back as a record."""
    out_dir, model, data, f0, sec, seed, extra = job
    try:
        sampler = SamplerSettings(**{**sec.get("sampler", {}), "seed": seed})
        kern = sec.get("kernel", {"lengthscale": 4.0, "variance": 0.1})
        kernels = [KernelHyper.from_dict(kern)] * f0.shape[1]
        priors = dict(sec.get("priors", {}))
        ar_kw = {k: priors.pop(k) for k in ("ar_r", "ar_c2", "ar_zeta") if k in priors}
        spec = default_spec(data, f0, kernels, ar_order=data.presample, sampler=sampler,
                            constant_index=priors.pop("constant_index", 0), **priors)
        if ar_kw:
            spec = replace(spec, ar_prior=ArPrior.shrinkage(
                data.presample, ar_kw.get("ar_r", 0.0), ar_kw.get("ar_c2", 0.5),
                ar_kw.get("ar_zeta", 5.0)))
        meta = dict(extra)
        if model == "gp":
            lm = gp_latent_model(spec, data.n_total, data.presample)
        elif model == "fixed":
            lm = fixed_latent_model(spec)
        elif model == "fixed-deriv":
            lm = fixed_latent_model(spec, design=derivative_basis(f0), name="fixed-deriv")
            meta["primary_rows"] = f0.shape[1]
            spec = derivative_spec(spec)
        else:
            fir_sec = sec.get("fir", {})
            fkern = fir_sec.get("kernel")
            fir = FirSpec(extra["paradigm"], fir_sec.get("filter_length"),
                          KernelHyper.from_dict(fkern) if fkern else KernelHyper(3.0, 0.5),
                          _hrf(sec.get("hrf")))
            lm = fir_latent_model(fir)
            meta["filter_length"] = fir.filter_length
        meta.pop("paradigm", None)
        draws, timing = run_gibbs(data, spec, lm, meta)
        draws.save(out_dir, timing)
        return {"parcel": data.parcel_id, "status": "ok", "seed": seed}
    except (GpBoldError, np.linalg.LinAlgError, ValueError) as exc:
        numerical = isinstance(exc, (NumericalError, np.linalg.LinAlgError))
        kind = "numerical" if numerical else "input"
        return {"parcel": data.parcel_id, "status": "failed", "kind": kind, "seed": seed,
                "error": f"{type(exc).__name__}: {exc}"}


def cmd_fit(args, cfg) -> int:
    sec = dict(cfg.get("fit", {}))
    seed = _seed(args, cfg)
    out = _out(args, cfg)
    model = args.model or sec.get("model", "gp")
    if model not in MODELS:
        raise UsageError(f"unknown model {model!r}; choose from {MODELS}")
    data_root = Path(args.data or sec.get("data") or out / "datasets")
    if not data_root.exists():
        raise UsageError(f"data path {data_root} does not exist")
    jobs = _jobs(args)
    jobs_list, index = [], []
    counter = 0
    for ds_dir in _dataset_dirs(data_root):
        try:
            ds = io.load_dataset(ds_dir)
        except io.DataFormatError as exc:
            raise UsageError(str(exc)) from None
        y = ds["y"]
        if sec.get("scale_global_mean", False):
            y = scale_global_mean(y)
        par = ds["paradigm"]
        f0 = ds["prior_mean"]
        if f0 is None:
            f0 = build_mean_function(par, _hrf(sec.get("hrf")), standardize=True).values
        if f0.shape[0] != y.shape[0]:
            raise UsageError(f"{ds_dir}: prior mean has {f0.shape[0]} rows, Y has {y.shape[0]}")
        ds_out = out / "fits" / model / ds["name"]
        entries = []
        for pid, vox in _parcels(ds):
            data = ParcelData(y[:, vox], ds["z"], par.presample, pid)
            pseed = seed + counter
            extra = {"dataset": ds["name"], "data_path": str(ds_dir), "voxels": vox.tolist(),
                     "base_seed": seed, "parcel_index": counter, "paradigm": par}
            jobs_list.append((ds_out / f"parcel_{pid}", model, data, f0, sec, pseed, extra))
            entries.append(len(jobs_list) - 1)
            counter += 1
        index.append((ds_out, entries))
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(min(jobs, len(jobs_list))) as pool:
            results = list(pool.map(_fit_parcel, jobs_list))
    else:
        results = [_fit_parcel(j) for j in jobs_list]
    failed = [r for r in results if r["status"] != "ok"]
    for ds_out, entries in index:
        ds_out.mkdir(parents=True, exist_ok=True)
        _write_json(ds_out / "index.json", {"model": model, "parcels": [results[i] for i in entries]})
        ds_failed = [results[i] for i in entries if results[i]["status"] != "ok"]
        if ds_failed:
            _write_json(ds_out / "failures.json", ds_failed)
    for r in failed:
        log.error("parcel %s failed: %s", r["parcel"], r["error"])
    if failed:
        return EXIT_NUMERICAL if any(r["kind"] == "numerical" for r in failed) else EXIT_USAGE
    return EXIT_OK


# evaluate ------------------------------------------------------------------

def _write_activity(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("voxel,stimulus,t,ppm\n")
        for j, m, t, p in rows:
            fh.write(f"{j},{m},{t!r},{p!r}\n")


def cmd_evaluate(args, cfg) -> int:
    sec = cfg.get("evaluate", {})
    out = _out(args, cfg)
    fits_root = Path(sec.get("fits") or out / "fits")
    if not fits_root.exists():
        raise UsageError(f"no fits under {fits_root}")
    c = float(sec.get("c", 0.0))
    th = sec.get("thresholds")
    thresholds = DEFAULT_THRESHOLDS if th is None else np.linspace(th["start"], th["stop"], th["num"])
    want_roc = args.roc if args.roc is not None else sec.get("roc", None)
    models = args.model or sec.get("models") or sorted(
        p.name for p in fits_root.iterdir() if p.is_dir() and p.name in MODELS)
    if not models:
        raise UsageError(f"no model directories under {fits_root}")
    eval_dir = out / "eval"
    curves, summary = {}, {"c": c, "thresholds": [float(thresholds[0]), float(thresholds[-1]),
                                                  int(thresholds.size)], "models": {}}
    for model in models:
        mdir = fits_root / model
        if not mdir.exists():
            raise UsageError(f"no fits for model {model!r} under {fits_root}")
        model_curves = []
        for ds_out in sorted(p for p in mdir.iterdir() if (p / "index.json").exists()):
            idx = json.loads((ds_out / "index.json").read_text())
            t_rows, tmap = [], None
            for rec in idx["parcels"]:
                if rec["status"] != "ok":
                    continue
                draws = PosteriorDraws.load(ds_out / f"parcel_{rec['parcel']}")
                meta = draws.metadata
                amap = activity_map(draws.b, c, rec["parcel"], rows=meta.get("primary_rows"))
                vox = np.asarray(meta["voxels"])
                if tmap is None:
                    data_path = Path(meta["data_path"])
                    n_vox = len(io.read_matrix_csv(data_path / "Y.csv")[0])
                    tmap = np.full((amap.t_values.shape[0], n_vox), np.nan)
                tmap[:, vox] = amap.t_values
                t_rows.extend((int(vox[j]), m, t, p) for j, m, t, p in amap.rows())
            if tmap is None:
                continue
            target = eval_dir / model / ds_out.name
            target.mkdir(parents=True, exist_ok=True)
            _write_activity(target / "activity.csv", sorted(t_rows))
            truth_path = data_path / "truth.json"
            if want_roc or (want_roc is None and truth_path.exists()):
                if not truth_path.exists():
                    raise UsageError(f"--roc needs {truth_path}")
                truth = json.loads(truth_path.read_text())
                active = np.asarray(truth["true_b"], float) != 0
                ok = ~np.isnan(tmap)
                model_curves.append(roc_curve(tmap[ok], active[:tmap.shape[0]][ok], thresholds))
        if model_curves:
            curves[model] = average_roc(model_curves)
            cur = curves[model]
            with open(eval_dir / f"roc_{model}.csv", "w") as fh:
                fh.write("threshold,fpr,tpr\n")
                for a, f, t in zip(cur.thresholds, cur.fpr, cur.tpr):
                    fh.write(f"{a!r},{f!r},{t!r}\n")
            summary["models"][model] = {"auc": cur.auc, "n_datasets": len(model_curves)}
    if curves:
        if "gp" in curves and "fixed" in curves:
            gp, fx = curves["gp"], curves["fixed"]
            summary["paired"] = {"auc_difference": gp.auc - fx.auc,
                                 "matched_tpr_gain": matched_tpr_gain(gp, fx)}
        _write_json(eval_dir / "roc_summary.json", summary)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"gpbold: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"gpbold: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
