"""File plumbing: atomic writes, CSV tables, dataset text format, manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1
DATASET_MAGIC = "# eoslab-dataset v1"


class DatasetFormatError(ValueError):
    """A dataset file that exists but cannot be parsed."""


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def fmt(x) -> str:
    """Shortest round-trip text for numbers; ints and bools pass through."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row of length {len(row)} does not match header {list(header)}")
        writer.writerow([fmt(x) for x in row])
    return atomic_write_text(path, buf.getvalue())


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, config: dict, artifacts: Sequence) -> Path:
    """Record the resolved config and a hash of every artifact for exact reruns."""
    out_dir = Path(out_dir)
    entries = {}
    for a in artifacts:
        a = Path(a)
        entries[str(a.relative_to(out_dir)) if a.is_relative_to(out_dir) else str(a)] = sha256(a)
    return write_json(out_dir / "manifest.json", {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "artifacts": entries,
    })


def save_dataset(path, dataset, with_f_true: bool = True) -> Path:
    """Columnar text: a magic line, a metadata line, a header, one row per sample.

    ::

        # eoslab-dataset v1
        # n=3 d=2 R=1.0 D=2.0
        x0,x1,y[,f_true]
        ...
    """
    X, y = dataset.X, dataset.y
    n, d = X.shape
    has_f = with_f_true and dataset.f_true is not None
    header = [f"x{c}" for c in range(d)] + ["y"] + (["f_true"] if has_f else [])
    lines = [DATASET_MAGIC, f"# n={n} d={d} R={fmt(dataset.R)} D={fmt(dataset.D)}", ",".join(header)]
    for i in range(n):
        row = [fmt(v) for v in X[i]] + [fmt(y[i])]
        if has_f:
            row.append(fmt(dataset.f_true[i]))
        lines.append(",".join(row))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def load_dataset(path):
    from .model import Dataset

    path = Path(path)
    lines = path.read_text().splitlines()
    if len(lines) < 3 or lines[0].strip() != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: not an eoslab dataset file")
    try:
        meta = dict(tok.split("=", 1) for tok in lines[1].lstrip("# ").split())
        header = lines[2].split(",")
        d = int(meta["d"])
        if header[:d] != [f"x{c}" for c in range(d)] or header[d] != "y":
            raise DatasetFormatError(f"{path}: unexpected header {header}")
        data = np.array([[float(t) for t in ln.split(",")] for ln in lines[3:] if ln.strip()])
    except (KeyError, IndexError, ValueError) as exc:
        if isinstance(exc, DatasetFormatError):
            raise
        raise DatasetFormatError(f"{path}: malformed dataset ({exc})") from exc
    if data.ndim != 2 or data.shape[0] != int(meta["n"]) or data.shape[1] != len(header):
        raise DatasetFormatError(f"{path}: expected {meta['n']} rows of {len(header)} columns")
    f_true = data[:, d + 1] if len(header) > d + 1 else None
    return Dataset(data[:, :d], data[:, d], float(meta["R"]), float(meta["D"]), f_true)
