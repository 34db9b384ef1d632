"""CSV and manifest writers; floats are emitted with 17 significant digits."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FMT = "%.17g"


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return FMT % v
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_paths_csv(path, ensemble) -> None:
    """Rows path,step,t,x_0..x_{m-1} for every stored node."""
    if ensemble.X is None:
        raise ValueError("ensemble was simulated endpoints-only")
    m = ensemble.spec.m
    ts = ensemble.grid.nodes()
    header = ["path", "step", "t"] + [f"x_{i}" for i in range(m)]

    def rows():
        for p in range(ensemble.n_paths):
            for k in range(len(ts)):
                yield (p, k, ts[k], *ensemble.X[p, k])

    write_csv(path, header, rows())


def write_gamma_csv(path, mall) -> None:
    """Rows step,t,gamma_00,gamma_01,... (row-major entries of the shared track)."""
    if not mall.shared:
        raise ValueError("per-path covariance tracks are not exported to CSV")
    m = mall.gamma.shape[-1]
    ts = mall.grid.nodes()
    header = ["step", "t"] + [f"gamma_{i}{j}" for i in range(m) for j in range(m)]
    rows = ((k, ts[k], *mall.gamma[k].ravel()) for k in range(len(ts)))
    write_csv(path, header, rows)


def write_points_csv(path, points, prefix: str = "x") -> None:
    points = np.atleast_2d(points)
    header = [f"{prefix}_{i}" for i in range(points.shape[1])]
    write_csv(path, header, points)


def read_points_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_delta_csv(path, samples) -> None:
    """Divergence-sample dump: path, x_T, delta, ito and correction terms."""
    m = samples.x_T.shape[1]
    header = (["path"] + [f"xT_{i}" for i in range(m)]
              + [f"delta_{k + 1}" for k in range(m)]
              + [f"ito_{k + 1}" for k in range(m)]
              + [f"corr_{k + 1}" for k in range(m)] + ["valid"])
    rows = ((p, *samples.x_T[p], *samples.delta[p], *samples.ito[p],
             *samples.correction[p], int(samples.valid[p]))
            for p in range(len(samples.x_T)))
    write_csv(path, header, rows)


def config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def write_manifest(path, config_doc: dict, files: dict) -> None:
    """Manifest with the config hash; file list is content, not timestamps,
    so reruns produce identical manifests."""
    doc = {"config_hash": config_hash(config_doc), "files": files}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
