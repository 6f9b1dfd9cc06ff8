"""Teacher-student scaling sweep shared by the command line and the acceptance suite."""
from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import datagen, io, training
from .model import ReceptiveFields
from .rng import RngStream

GAP_HEADER = ["arch", "d", "m", "J", "K", "n", "seed", "gap", "excess", "train_risk"]


@dataclass
class ScalingConfig:
    lcn_ws_d: list = field(default_factory=lambda: [50, 100, 200])
    fcn_d: list = field(default_factory=lambda: [10])
    m: int = 10
    K: int = 256
    K_true: int = 20
    n_list: list = field(default_factory=lambda: [128, 256, 512])
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    eta: float = 0.2
    epochs: int = 8000
    sigma2: float = 1.0
    sharpness_every: int = 200
    sharpness_tol: float = 1e-6
    n_test_factor: int = 16

    def cells(self) -> list[tuple[str, int, int, int]]:
        out = [("fcn", d, n, s) for d in self.fcn_d for n in self.n_list for s in self.seeds]
        out += [("lcn-ws", d, n, s) for d in self.lcn_ws_d for n in self.n_list for s in self.seeds]
        return out


def teacher_fields(d: int, m: int) -> ReceptiveFields:
    return ReceptiveFields.disjoint(d, min(m, d))


def cell_name(arch: str, d: int, n: int, seed: int) -> str:
    return f"{arch}_d{d}_n{n}_s{seed}"


def run_cell(cfg: ScalingConfig, arch: str, d: int, n: int, seed: int) -> dict:
    """One teacher-student run; returns the gap row and the trajectory rows."""
    tf = teacher_fields(d, cfg.m)
    base = RngStream(seed)
    teacher = datagen.sample_teacher(tf, cfg.K_true, base.child("teacher"))
    sigma = float(np.sqrt(cfg.sigma2))
    data = datagen.make_regression_dataset(teacher, tf, n, sigma, base, n_test=cfg.n_test_factor * n)
    tc = training.TrainConfig(eta=cfg.eta, epochs=cfg.epochs, K=cfg.K, seed=seed, arch=arch,
                              sharpness_every=cfg.sharpness_every, sharpness_tol=cfg.sharpness_tol)
    fields = tf if arch == "lcn-ws" else None
    res = training.gd_train(fields, data.train, tc)
    row = {"arch": arch, "d": d, "m": res.fields.m, "J": res.fields.J, "K": cfg.K, "n": n,
           "seed": seed, "gap": float("nan"), "excess": float("nan"), "train_risk": float("nan")}
    if not res.record.diverged:
        g = training.gap_estimate(res.params, res.fields, data.train, data.test, sigma)
        row.update(gap=g.gap, excess=g.excess, train_risk=g.train_risk)
    return {"row": row, "trajectory": res.record.rows, "diverged": res.record.diverged,
            "diagnostic": res.record.diagnostic}


def _run_cell_args(args):
    cfg_dict, arch, d, n, seed = args
    return run_cell(ScalingConfig(**cfg_dict), arch, d, n, seed)


def worker_count(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("EOSLAB_THREADS", "1") or 1)
    return max(1, int(threads))


def run_sweep(cfg: ScalingConfig, threads: int | None = None) -> list[dict]:
    """All cells, in the fixed order of :meth:`ScalingConfig.cells` regardless of worker count."""
    cells = cfg.cells()
    workers = worker_count(threads)
    args = [(asdict(cfg), *c) for c in cells]
    if workers == 1:
        return [_run_cell_args(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_cell_args, args))


def fit_slopes(rows: list[dict]) -> dict:
    """Slope of log gap on log n per (arch, d); diverged runs (nan gap) are excluded."""
    out = {}
    keys = sorted({(r["arch"], r["d"]) for r in rows})
    for arch, d in keys:
        pairs = [(r["n"], r["gap"]) for r in rows if r["arch"] == arch and r["d"] == d]
        key = f"{arch}_d{d}"
        try:
            with warnings.catch_warnings(record=True) as w:
                warnings.simplefilter("always")
                fit = training.slope_fit(pairs)
            out[key] = {"arch": arch, "d": d, "slope": fit.slope, "intercept": fit.intercept,
                        "n_points": fit.n_points, "dropped": fit.dropped,
                        "warnings": [str(x.message) for x in w]}
        except ValueError as e:
            out[key] = {"arch": arch, "d": d, "slope": None, "error": str(e)}
    return out


def mean_gap(rows: list[dict], arch: str, d: int, n: int) -> float:
    g = [r["gap"] for r in rows if r["arch"] == arch and r["d"] == d and r["n"] == n]
    g = [x for x in g if np.isfinite(x)]
    return float(np.mean(g)) if g else float("nan")


def write_sweep(out: Path, results: list[dict], trajectories: bool = True) -> list[Path]:
    out = Path(out)
    rows = [r["row"] for r in results]
    paths = [io.write_csv(out / "gap.csv", GAP_HEADER, ([r[h] for h in GAP_HEADER] for r in rows))]
    if trajectories:
        for r in results:
            row = r["row"]
            rec = training.TrajectoryRecord(rows=r["trajectory"])
            paths.append(rec.to_csv(out / "trajectories" /
                                    f"{cell_name(row['arch'], row['d'], row['n'], row['seed'])}.csv"))
    return paths
