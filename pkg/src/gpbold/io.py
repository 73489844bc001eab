"""CSV/JSON interchange for datasets and simulation truth.

A dataset directory holds ``Y.csv`` (scans x voxels, presample rows first),
``Z.csv`` (scans x nuisance regressors), ``paradigm.json`` and optionally
``prior_mean.csv``, ``parcels.csv`` (``voxel,parcel``) and ``truth.json``.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .paradigm import Paradigm


class DataFormatError(ValueError):
    pass


def write_matrix_csv(path, x, prefix: str) -> None:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    with open(path, "w") as fh:
        fh.write(",".join(f"{prefix}{i}" for i in range(x.shape[1])) + "\n")
        for row in x:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    """Numeric CSV with a header row; errors name the offending row and column."""
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        for r, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(f"{path}: row {r} has {len(row)} fields, "
                                      f"header has {len(header)}")
            vals = []
            for c, cell in enumerate(row, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataFormatError(
                        f"{path}: row {r}, column {c}: cannot parse {cell!r}") from None
            rows.append(vals)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.asarray(rows)


def read_parcels(path, n_voxels: int) -> np.ndarray:
    labels = np.empty(n_voxels, dtype=object)
    seen = np.zeros(n_voxels, dtype=bool)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for r, row in enumerate(reader, start=2):
            try:
                j = int(row["voxel"])
            except (KeyError, ValueError, TypeError):
                raise DataFormatError(f"{path}: row {r}, column 1: bad voxel index") from None
            if not 0 <= j < n_voxels:
                raise DataFormatError(f"{path}: row {r}: voxel {j} out of range")
            labels[j] = str(row["parcel"])
            seen[j] = True
    if not seen.all():
        raise DataFormatError(f"{path}: voxels {np.flatnonzero(~seen).tolist()} have no parcel")
    return labels


def save_dataset(directory, y, z, paradigm: Paradigm, prior_mean=None, truth: dict | None = None,
                 parcels=None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(d / "Y.csv", y, "v")
    write_matrix_csv(d / "Z.csv", z, "z")
    paradigm.to_json(d / "paradigm.json")
    if prior_mean is not None:
        write_matrix_csv(d / "prior_mean.csv", prior_mean, "f")
    if truth is not None:
        (d / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    if parcels is not None:
        with open(d / "parcels.csv", "w") as fh:
            fh.write("voxel,parcel\n")
            for j, p in enumerate(parcels):
                fh.write(f"{j},{p}\n")
    return d


def load_dataset(directory) -> dict:
    d = Path(directory)
    for name in ("Y.csv", "Z.csv", "paradigm.json"):
        if not (d / name).exists():
            raise FileNotFoundError(f"{d / name} not found")
    y = read_matrix_csv(d / "Y.csv")
    z = read_matrix_csv(d / "Z.csv")
    if y.shape[0] != z.shape[0]:
        raise DataFormatError(f"{d}: Y has {y.shape[0]} rows, Z has {z.shape[0]}")
    paradigm = Paradigm.from_json(d / "paradigm.json")
    if paradigm.n_total != y.shape[0]:
        raise DataFormatError(f"{d}: paradigm covers {paradigm.n_total} scans, Y has {y.shape[0]}")
    out = {"name": d.name, "path": d, "y": y, "z": z, "paradigm": paradigm,
           "prior_mean": None, "parcels": None, "truth": None}
    if (d / "prior_mean.csv").exists():
        out["prior_mean"] = read_matrix_csv(d / "prior_mean.csv")
    if (d / "parcels.csv").exists():
        out["parcels"] = read_parcels(d / "parcels.csv", y.shape[1])
    if (d / "truth.json").exists():
        out["truth"] = json.loads((d / "truth.json").read_text())
    return out
