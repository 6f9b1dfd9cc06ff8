"""Command-line harness: ``eoslab <subcommand> [--config FILE] [--set KEY=VALUE ...]``.

Configs are JSON objects validated against a per-subcommand schema: unknown
keys and missing required keys are rejected before anything runs. Every
subcommand writes its resolved config and artifact hashes to
``<out>/manifest.json``.

Exit codes: 0 success, 1 a check failed (certificate or interpolation
verification), 2 usage or config error, 3 missing or malformed input file,
4 dataset violates the interpolation assumptions, 5 training diverged.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import (ablation, bounds, datagen, experiments, geometry, interpolator, io, model,
               stability, svgplot, training)
from .model import ReceptiveFields
from .rng import RngStream

REQUIRED = object()
U64 = (1 << 64) - 1

# key -> (type, default); REQUIRED marks mandatory keys
SCHEMAS: dict[str, dict[str, tuple]] = {
    "train": {
        "d": (int, REQUIRED), "m": (int, REQUIRED), "K": (int, REQUIRED), "n": (int, REQUIRED),
        "arch": (str, "lcn-ws"), "eta": (float, 0.2), "epochs": (int, 1000),
        "sharpness_every": (int, 100), "sharpness_tol": (float, 1e-8),
        "sharpness_max_iter": (int, 1000), "certificate": (bool, True), "eval_every": (int, 0),
        "sigma2": (float, 1.0), "K_true": (int, 20), "n_test": (int, None), "seed": (int, 0),
        "dataset": (str, None), "test_dataset": (str, None),
    },
    "scaling": {
        "lcn_ws_d": (list, [50, 100, 200]), "fcn_d": (list, [10]), "m": (int, 10), "K": (int, 256),
        "K_true": (int, 20), "n_list": (list, [128, 256, 512]), "seeds": (list, [0, 1, 2]),
        "eta": (float, 0.2), "epochs": (int, 8000), "sigma2": (float, 1.0),
        "sharpness_every": (int, 200), "sharpness_tol": (float, 1e-6), "n_test_factor": (int, 16),
        "trajectories": (bool, True),
    },
    "interpolate": {
        "dataset": (str, None), "n": (int, 32), "m": (int, 4), "J": (int, 2),
        "zero_fraction": (float, 0.0), "seed": (int, 0), "include_beta": (bool, True),
        "norm_tol": (float, 1e-9),
    },
    "geometry": {
        "source": (str, "synthetic"), "cifar_path": (str, None), "kernel": (int, 3),
        "stride": (int, 1), "padding": (int, 0), "n_patches": (int, 100000),
        "n_images": (int, 10000), "n_dirs": (int, 1000), "n_probe": (int, 2000),
        "grid_points": (int, 51), "synthetic_dim": (int, 27), "synthetic_n": (int, 20000),
        "mean": (list, list(datagen.CIFAR_MEAN)), "std": (list, list(datagen.CIFAR_STD)),
        "seed": (int, 0),
    },
    "cluster-ablation": {
        "J": (int, 16), "m": (int, 8), "n_train": (int, 64), "n_test": (int, 2048),
        "K": (int, 256), "eta": (float, 0.2), "epochs": (int, 10000), "eval_every": (int, 100),
        "E_total": (float, 1.0), "seeds": (list, [0, 1, 2]),
        "archs": (list, list(ablation.ABLATION_ARCHS)),
    },
    "bound": {
        "d": (int, REQUIRED), "m": (int, REQUIRED), "J": (int, REQUIRED), "n": (int, REQUIRED),
        "eta": (float, REQUIRED), "M": (float, REQUIRED), "delta": (float, 0.05), "D": (float, 1.0),
        "c_ep": (float, 1.0), "c_univ": (float, 1.0),
    },
    "certify": {
        "checkpoint": (str, REQUIRED), "dataset": (str, REQUIRED), "eta": (float, None),
        "tol": (float, 1e-10), "max_iter": (int, 20000), "seed": (int, 0),
    },
    "datagen": {
        "kind": (str, "teacher"), "d": (int, 40), "m": (int, 10), "n": (int, 128),
        "K_true": (int, 20), "sigma2": (float, 1.0), "n_test": (int, None), "J": (int, 16),
        "E_total": (float, 1.0), "zero_fraction": (float, 0.0), "seed": (int, 0),
    },
}

HELP = {
    "train": "full-batch GD with sharpness and certificate telemetry",
    "scaling": "teacher-student sweep over n and seeds; gap.csv, slopes.json, log-log SVG",
    "interpolate": "build and verify the flat interpolating network",
    "geometry": "depth and PCA profiles of a patch cloud against a reference cloud",
    "cluster-ablation": "FCN vs unshared LCN vs LCN-WS on clustered-patch data "
                        "(unshared LCN = one bank of K filters per location, GAP over locations)",
    "bound": "order-of-magnitude generalization bound and exponents",
    "certify": "check the sharpness certificate for a checkpoint on a dataset",
    "datagen": "write a synthetic dataset (teacher, clustered, sphere or anchors)",
}


class ConfigError(ValueError):
    pass


class CommandFailure(RuntimeError):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _coerce(cmd: str, key: str, value, typ):
    if value is None:
        return None
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if typ is bool and isinstance(value, bool):
        return value
    if typ is str and isinstance(value, str):
        return value
    if typ is list and isinstance(value, list):
        return value
    raise ConfigError(f"{cmd}: key '{key}' expects {typ.__name__}, got {type(value).__name__} ({value!r})")


def resolve_config(cmd: str, doc: dict) -> dict:
    schema = SCHEMAS[cmd]
    unknown = sorted(set(doc) - set(schema))
    if unknown:
        raise ConfigError(f"{cmd}: unknown config key(s): {', '.join(unknown)}")
    out = {}
    for key, (typ, default) in schema.items():
        if key in doc:
            out[key] = _coerce(cmd, key, doc[key], typ)
        elif default is REQUIRED:
            raise ConfigError(f"{cmd}: missing required config key '{key}'")
        else:
            out[key] = default
    return out


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def load_config(cmd: str, path, overrides: dict, seed: int | None) -> dict:
    doc = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p.resolve()}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON ({e})") from e
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: config must be a JSON object")
    doc.update(overrides)
    if seed is not None:
        if not (0 <= seed <= U64):
            raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {seed}")
        if "seeds" in SCHEMAS[cmd]:
            doc["seeds"] = [seed]
        elif "seed" in SCHEMAS[cmd]:
            doc["seed"] = seed
    return resolve_config(cmd, doc)


def threads_from(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("EOSLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"EOSLAB_THREADS must be an integer, got {env!r}") from None
    return 1


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input file not found: {p.resolve()}")
    return p


def _report(obj: dict) -> dict:
    return {"schema_version": io.SCHEMA_VERSION, **obj}


# --------------------------------------------------------------------------
# subcommands


def cmd_train(cfg: dict, out: Path, threads: int) -> list[Path]:
    d, m = cfg["d"], cfg["m"]
    fields = ReceptiveFields.disjoint(d, m)
    sigma = math.sqrt(cfg["sigma2"])
    arts = []
    if cfg["dataset"]:
        train = io.load_dataset(_existing(cfg["dataset"]))
        test = io.load_dataset(_existing(cfg["test_dataset"])) if cfg["test_dataset"] else None
        if train.d != d:
            raise ConfigError(f"dataset has d={train.d} but config says d={d}")
    else:
        base = RngStream(cfg["seed"])
        teacher = datagen.sample_teacher(fields, cfg["K_true"], base.child("teacher"))
        data = datagen.make_regression_dataset(teacher, fields, cfg["n"], sigma, base,
                                               n_test=cfg["n_test"])
        train, test = data.train, data.test
    tc = training.TrainConfig(eta=cfg["eta"], epochs=cfg["epochs"], K=cfg["K"], seed=cfg["seed"],
                              arch=cfg["arch"], sharpness_every=cfg["sharpness_every"],
                              sharpness_tol=cfg["sharpness_tol"],
                              sharpness_max_iter=cfg["sharpness_max_iter"],
                              certificate=cfg["certificate"], eval_every=cfg["eval_every"])
    res = training.gd_train(fields, train, tc, test=test)
    arts.append(res.record.to_csv(out / "trajectory.csv"))
    if cfg["eval_every"]:
        arts.append(res.record.curve_to_csv(out / "curve.csv"))
    arts.append(model.save_checkpoint(out / "checkpoint.json", res.params, res.fields))
    summary = {"diverged": res.record.diverged, "diagnostic": res.record.diagnostic,
               "final": res.record.rows[-1] if res.record.rows else None}
    if test is not None and test.f_true is not None and not res.record.diverged:
        g = training.gap_estimate(res.params, res.fields, train, test, sigma)
        summary["gap"] = vars(g)
    arts.append(io.write_json(out / "summary.json", _report(summary)))
    if res.record.diverged:
        io.write_manifest(out, cfg, arts)
        raise CommandFailure(f"training diverged: {res.record.diagnostic}", 5)
    return arts


def cmd_scaling(cfg: dict, out: Path, threads: int) -> list[Path]:
    sc = experiments.ScalingConfig(**{k: v for k, v in cfg.items() if k != "trajectories"})
    results = experiments.run_sweep(sc, threads)
    arts = experiments.write_sweep(out, results, cfg["trajectories"])
    rows = [r["row"] for r in results]
    diverged = [experiments.cell_name(r["row"]["arch"], r["row"]["d"], r["row"]["n"], r["row"]["seed"])
                for r in results if r["diverged"]]
    for name in diverged:
        print(f"warning: run {name} diverged and is excluded from the fit", file=sys.stderr)
    slopes = experiments.fit_slopes(rows)
    arts.append(io.write_json(out / "slopes.json", _report({"slopes": slopes, "diverged": diverged})))
    plot = svgplot.Plot(title="generalization gap vs n", xlabel="n", ylabel="gap",
                        logx=True, logy=True)
    for arch, d in sorted({(r["arch"], r["d"]) for r in rows}):
        ns = sorted({r["n"] for r in rows if r["arch"] == arch and r["d"] == d})
        plot.add(f"{arch} d={d}", ns, [experiments.mean_gap(rows, arch, d, n) for n in ns])
    arts.append(svgplot.save(plot, out / "gap_vs_n.svg"))
    return arts


def cmd_interpolate(cfg: dict, out: Path, threads: int) -> list[Path]:
    arts = []
    if cfg["dataset"]:
        ds = io.load_dataset(_existing(cfg["dataset"]))
        m, J = cfg["m"], cfg["J"]
        if ds.d != m * J:
            raise ConfigError(f"dataset has d={ds.d}, expected m*J={m * J}")
        fields = ReceptiveFields.disjoint(ds.d, m)
    else:
        ds, fields = interpolator.random_anchor_dataset(cfg["n"], cfg["m"], cfg["J"],
                                                        RngStream(cfg["seed"]), cfg["zero_fraction"])
        arts.append(io.save_dataset(out / "dataset.csv", ds))
    try:
        anchors = interpolator.find_anchors(ds, fields, cfg["norm_tol"])
    except interpolator.AssumptionError as e:
        arts.append(io.write_json(out / "error.json", _report(
            {"error": "assumption-violated", "message": str(e)})))
        io.write_manifest(out, cfg, arts)
        raise CommandFailure(f"assumption violated: {e}", 4) from e
    params = interpolator.construct(ds, fields, anchors)
    ver = interpolator.verify(params, ds, fields, include_beta=cfg["include_beta"])
    arts.append(model.save_checkpoint(out / "checkpoint.json", params, fields))
    report = {**ver.as_dict(), "K": params.K, "n": ds.n, "J": fields.J, "m": fields.m,
              "D": float(ds.D)}
    arts.append(io.write_json(out / "report.json", _report(report)))
    if not ver.passed:
        io.write_manifest(out, cfg, arts)
        raise CommandFailure("interpolation verification failed", 1)
    return arts


def _profile(name: str, cloud: np.ndarray, cfg: dict, seed_stream: int, out: Path):
    grid = np.linspace(0.0, 0.5, cfg["grid_points"])
    prof = geometry.concentration_curve(cloud, cfg["n_dirs"], cfg["n_probe"], grid,
                                        RngStream(cfg["seed"], seed_stream))
    spec = geometry.variance_spectrum(cloud)
    arts = [prof.to_csv(out / name / "depth.csv"), spec.to_csv(out / name / "spectrum.csv")]
    stats = {"N": int(cloud.shape[0]), "dim": int(cloud.shape[1]), "psi_area": prof.area,
             "top3_explained": spec.top_k(3)}
    return prof, spec, stats, arts


def cmd_geometry(cfg: dict, out: Path, threads: int) -> list[Path]:
    base = RngStream(cfg["seed"])
    if cfg["source"] == "cifar":
        if not cfg["cifar_path"]:
            raise ConfigError("geometry: source 'cifar' needs 'cifar_path'")
        batch = datagen.cifar10_load(cfg["cifar_path"], cfg["mean"], cfg["std"])
        patches = datagen.image_patches(batch, cfg["kernel"], cfg["stride"], cfg["padding"],
                                        cfg["n_patches"], base.child("subsample"))
        n_img = min(cfg["n_images"], batch.count)
        idx = np.sort(base.child("probe").generator().choice(batch.count, n_img, replace=False))
        images = batch.pixels[idx].reshape(n_img, -1)
        clouds = [("patches", patches), ("images", images)]
    elif cfg["source"] == "synthetic":
        k, N = cfg["synthetic_dim"], cfg["synthetic_n"]
        sphere = datagen.sample_sphere(N, k, base.child("train_x"))
        gen = base.child("cluster_signal").generator()
        centers = 3.0 * gen.standard_normal((3, k)) / math.sqrt(k)
        labels = gen.integers(0, 3, N)
        mixture = centers[labels] + 0.3 * gen.standard_normal((N, k)) / math.sqrt(k)
        clouds = [("mixture", mixture), ("sphere", sphere)]
    else:
        raise ConfigError(f"geometry: unknown source {cfg['source']!r} (use 'cifar' or 'synthetic')")
    arts, summary = [], {}
    depth_plot = svgplot.Plot(title="concentration curve", xlabel="T", ylabel="psi(T)")
    spec_plot = svgplot.Plot(title="PCA explained variance", xlabel="components",
                             ylabel="cumulative fraction", logx=True)
    for i, (name, cloud) in enumerate(clouds):
        prof, spec, stats, a = _profile(name, cloud, cfg, 100 + i, out)
        arts += a
        summary[name] = stats
        depth_plot.add(name, prof.grid, prof.psi, markers=False)
        ranks = np.arange(1, len(spec.cumulative) + 1)
        spec_plot.add(name, ranks, spec.cumulative, markers=False)
    first, second = clouds[0][0], clouds[1][0]
    summary["ordering"] = {
        "top3_first_exceeds_second": summary[first]["top3_explained"] > summary[second]["top3_explained"],
        "area_first_exceeds_second": summary[first]["psi_area"] > summary[second]["psi_area"],
    }
    summary["note"] = "depth is a random-direction estimate and upper-bounds the exact half-space depth"
    arts.append(svgplot.save(depth_plot, out / "comparison.svg"))
    arts.append(svgplot.save(spec_plot, out / "spectrum.svg"))
    arts.append(io.write_json(out / "summary.json", _report(summary)))
    return arts


def _ablation_job(args):
    cfg_dict, arch = args
    return ablation.run_arch(arch, ablation.AblationConfig(**cfg_dict))


def cmd_cluster_ablation(cfg: dict, out: Path, threads: int) -> list[Path]:
    jobs = []
    for seed in cfg["seeds"]:
        ac = {k: v for k, v in cfg.items() if k not in ("seeds", "archs")}
        ac["seed"] = seed
        jobs += [(ac, arch) for arch in cfg["archs"]]
    for _, arch in jobs:
        if arch not in ablation.ABLATION_ARCHS:
            raise ConfigError(f"cluster-ablation: unknown arch {arch!r}")
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            runs = list(ex.map(_ablation_job, jobs))
    else:
        runs = [_ablation_job(j) for j in jobs]
    arts = []
    final_rows = []
    for run in runs:
        arts.append(run.record.curve_to_csv(out / "curves" / f"{run.arch}_s{run.seed}.csv"))
        final_rows.append([run.arch, run.seed, run.final_train, run.final_test])
    arts.append(io.write_csv(out / "final.csv", ["arch", "seed", "train_risk", "test_risk"], final_rows))
    per_seed = {}
    for seed in cfg["seeds"]:
        tests = {r.arch: r.final_test for r in runs if r.seed == seed}
        best = min(tests, key=tests.get)
        strict = all(tests["lcn-ws"] < v for a, v in tests.items() if a != "lcn-ws") \
            if "lcn-ws" in tests else False
        per_seed[str(seed)] = {"test_risk": tests, "best": best, "lcn_ws_strictly_best": strict}
    arts.append(io.write_json(out / "summary.json", _report({"per_seed": per_seed})))
    plot = svgplot.Plot(title=f"clustered patches, seed {cfg['seeds'][0]}", xlabel="epoch",
                        ylabel="risk", logy=True)
    for run in runs:
        if run.seed != cfg["seeds"][0]:
            continue
        ep = [c["epoch"] for c in run.record.curve]
        plot.add(f"{run.arch} test", ep, [c["test_risk"] for c in run.record.curve], markers=False)
        plot.add(f"{run.arch} train", ep, [c["train_risk"] for c in run.record.curve],
                 markers=False, dashed=True)
    arts.append(svgplot.save(plot, out / "ablation.svg"))
    return arts


def cmd_bound(cfg: dict, out: Path, threads: int) -> list[Path]:
    tb = bounds.theory_bound(cfg["d"], cfg["m"], cfg["J"], cfg["n"], cfg["eta"], cfg["M"],
                             cfg["delta"], cfg["D"], cfg["c_ep"], cfg["c_univ"])
    rep = _report(tb.as_dict())
    print(json.dumps(rep, indent=2, sort_keys=True))
    return [io.write_json(out / "bound.json", rep)]


def cmd_certify(cfg: dict, out: Path, threads: int) -> list[Path]:
    params, fields = model.load_checkpoint(_existing(cfg["checkpoint"]))
    ds = io.load_dataset(_existing(cfg["dataset"]))
    if ds.d != fields.d:
        raise ConfigError(f"dataset has d={ds.d} but the checkpoint expects d={fields.d}")
    cert = stability.theorem1_certificate(params, fields, ds, eta=cfg["eta"], tol=cfg["tol"],
                                          max_iter=cfg["max_iter"], seed=cfg["seed"])
    rep = _report(cert.as_dict())
    print(json.dumps(rep, indent=2, sort_keys=True))
    arts = [io.write_json(out / "certificate.json", rep)]
    if not cert.holds:
        io.write_manifest(out, cfg, arts)
        raise CommandFailure("certificate does not hold", 1)
    return arts


def cmd_datagen(cfg: dict, out: Path, threads: int) -> list[Path]:
    base = RngStream(cfg["seed"])
    kind = cfg["kind"]
    if kind == "teacher":
        fields = ReceptiveFields.disjoint(cfg["d"], cfg["m"])
        teacher = datagen.sample_teacher(fields, cfg["K_true"], base.child("teacher"))
        data = datagen.make_regression_dataset(teacher, fields, cfg["n"], math.sqrt(cfg["sigma2"]),
                                               base, n_test=cfg["n_test"])
        return [io.save_dataset(out / "train.csv", data.train),
                io.save_dataset(out / "test.csv", data.test),
                model.save_checkpoint(out / "teacher.json", teacher, fields)]
    if kind == "clustered":
        spec = datagen.ClusteredPatchSpec(cfg["J"], cfg["m"], E_total=cfg["E_total"])
        train = datagen.clustered_patch_sample(spec, cfg["n"], base.child("cluster_train"))
        return [io.save_dataset(out / "train.csv", train)]
    if kind == "sphere":
        X = datagen.sample_sphere(cfg["n"], cfg["d"], base.child("train_x"))
        return [io.save_dataset(out / "train.csv", model.Dataset(X, np.zeros(cfg["n"]), R=1.0))]
    if kind == "anchors":
        ds, _ = interpolator.random_anchor_dataset(cfg["n"], cfg["m"], cfg["J"], base,
                                                   cfg["zero_fraction"])
        return [io.save_dataset(out / "train.csv", ds)]
    raise ConfigError(f"datagen: unknown kind {kind!r} (teacher, clustered, sphere, anchors)")


COMMANDS = {
    "train": cmd_train,
    "scaling": cmd_scaling,
    "interpolate": cmd_interpolate,
    "geometry": cmd_geometry,
    "cluster-ablation": cmd_cluster_ablation,
    "bound": cmd_bound,
    "certify": cmd_certify,
    "datagen": cmd_datagen,
}


def _schema_epilog(cmd: str) -> str:
    lines = ["config keys (JSON object):"]
    for key, (typ, default) in SCHEMAS[cmd].items():
        dflt = "required" if default is REQUIRED else f"default {json.dumps(default)}"
        lines.append(f"  {key:<18} {typ.__name__:<6} {dflt}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--out", metavar="DIR", help="output directory (default eoslab-out/<command>)")
    common.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
    common.add_argument("--threads", type=int, metavar="N",
                        help="worker processes for sweeps (fallback: EOSLAB_THREADS, then 1)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key; VALUE is parsed as JSON when possible")
    parser = argparse.ArgumentParser(prog="eoslab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name],
                       epilog=_schema_epilog(name), formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cmd = args.command
    out = Path(args.out) if args.out else Path("eoslab-out") / cmd
    try:
        cfg = load_config(cmd, args.config, _parse_set(args.set), args.seed)
        threads = threads_from(args)
        arts = COMMANDS[cmd](cfg, out, threads)
        io.write_manifest(out, cfg, arts)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, datagen.FormatError, model.CheckpointError, io.DatasetFormatError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return 3
    except CommandFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except ValueError as e:
        print(f"invalid argument: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
