"""Synthetic data, teacher networks and CIFAR-10 ingestion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Dataset, ModelParams, ReceptiveFields, init_params, predict
from .rng import RngStream, as_generator

CIFAR_RECORD = 3073
CIFAR_SIDE = 32
CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)


class FormatError(ValueError):
    pass


def sample_sphere(n: int, d: int, rng) -> np.ndarray:
    """n points uniform on S^{d-1} (normalized Gaussians)."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    gen = as_generator(rng)
    X = gen.standard_normal((n, d))
    nrm = np.linalg.norm(X, axis=1)
    while np.any(nrm == 0):  # measure-zero, but keep the invariant
        bad = nrm == 0
        X[bad] = gen.standard_normal((int(bad.sum()), d))
        nrm = np.linalg.norm(X, axis=1)
    return X / nrm[:, None]


def sample_teacher(fields: ReceptiveFields, K_true: int, rng) -> ModelParams:
    """Random teacher: filter variance 2/m, output variance 2/K_true, zero biases."""
    if K_true < 1:
        raise ValueError("K_true must be at least 1")
    return init_params(K_true, fields.m, rng)


@dataclass
class RegressionData:
    train: Dataset
    test: Dataset
    sigma: float


def make_regression_dataset(teacher: ModelParams, fields: ReceptiveFields, n: int, sigma: float,
                            rng, n_test: int | None = None) -> RegressionData:
    """Teacher-student data on the sphere with Gaussian label noise.

    ``rng`` must be an :class:`RngStream`; the train inputs, train noise and
    test inputs come from separate child streams so that a larger ``n``
    extends rather than reshuffles the sample.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if not isinstance(rng, RngStream):
        rng = RngStream(int(rng))
    n_test = 16 * n if n_test is None else n_test
    d = fields.d
    X = sample_sphere(n, d, rng.child("train_x"))
    f = predict(teacher, fields, X)
    noise = rng.child("train_noise").generator().standard_normal(n)
    y = f + sigma * noise
    Xt = sample_sphere(n_test, d, rng.child("test_x"))
    ft = predict(teacher, fields, Xt)
    yt = ft + sigma * rng.child("test_noise").generator().standard_normal(n_test)
    return RegressionData(
        Dataset(X, y, R=1.0, f_true=f),
        Dataset(Xt, yt, R=1.0, f_true=ft),
        float(sigma),
    )


# --------------------------------------------------------------------------
# clustered patches


@dataclass
class ClusteredPatchSpec:
    J: int
    m: int
    E_total: float = 1.0
    targets: tuple[float, float] = (1.0, -1.0)
    v_plus: np.ndarray | None = None
    v_minus: np.ndarray | None = None

    def __post_init__(self):
        if self.J < 1 or self.m < 1:
            raise ValueError("J and m must be positive")
        if self.v_plus is None:
            self.v_plus = np.eye(self.m)[0]
        if self.v_minus is None:
            if self.m < 2:
                raise ValueError("orthogonal default directions need m >= 2")
            self.v_minus = np.eye(self.m)[1]
        for name in ("v_plus", "v_minus"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (self.m,) or abs(np.linalg.norm(v) - 1) > 1e-10:
                raise ValueError(f"{name} must be a unit vector in R^{self.m}")
            setattr(self, name, v)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.E_total / (self.J * self.m))

    @property
    def d(self) -> int:
        return self.J * self.m


def clustered_patch_sample(spec: ClusteredPatchSpec, n: int, rng) -> Dataset:
    """Each sample hides one signal patch ``v_c + noise`` among J-1 pure-noise patches."""
    gen = as_generator(rng)
    cls = gen.integers(0, 2, n)  # 0 -> plus, 1 -> minus
    loc = gen.integers(0, spec.J, n)
    X = spec.sigma * gen.standard_normal((n, spec.J, spec.m))
    signal = np.where(cls[:, None] == 0, spec.v_plus[None, :], spec.v_minus[None, :])
    X[np.arange(n), loc] += signal
    y = np.where(cls == 0, spec.targets[0], spec.targets[1]).astype(float)
    return Dataset(X.reshape(n, spec.d), y)


# --------------------------------------------------------------------------
# CIFAR-10 binary batches


@dataclass
class ImageBatch:
    pixels: np.ndarray  # (count, 3, 32, 32), normalized
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))

    @property
    def count(self) -> int:
        return self.pixels.shape[0]


def _parse_cifar_bytes(raw: bytes, source: str) -> tuple[np.ndarray, np.ndarray]:
    size = len(raw)
    if size == 0 or size % CIFAR_RECORD:
        full = size // CIFAR_RECORD
        raise FormatError(
            f"{source}: size {size} is not a multiple of {CIFAR_RECORD}; "
            f"truncated record starts at byte offset {full * CIFAR_RECORD}"
        )
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    return arr[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE), arr[:, 0].copy()


def cifar10_files(path) -> list[Path]:
    path = Path(path)
    if path.is_file():
        return [path]
    if not path.exists():
        raise FileNotFoundError(f"CIFAR-10 path not found: {path.resolve()}")
    files = sorted(path.glob("data_batch_*.bin"))
    if not files:
        files = sorted(p for p in path.glob("*.bin") if p.name != "batches.meta.txt")
    if not files:
        raise FileNotFoundError(f"no CIFAR-10 binary batches (*.bin) under {path.resolve()}")
    return files


def cifar10_load(path, mean=CIFAR_MEAN, std=CIFAR_STD, limit: int | None = None) -> ImageBatch:
    """Parse CIFAR-10 binary batch files (a file or a directory of ``data_batch_*.bin``)."""
    pix, lab = [], []
    total = 0
    for f in cifar10_files(path):
        p, l = _parse_cifar_bytes(f.read_bytes(), str(f))
        pix.append(p)
        lab.append(l)
        total += len(l)
        if limit is not None and total >= limit:
            break
    raw = np.concatenate(pix)[:limit]
    labels = np.concatenate(lab)[:limit]
    mu = np.asarray(mean, dtype=float).reshape(1, 3, 1, 1)
    sd = np.asarray(std, dtype=float).reshape(1, 3, 1, 1)
    return ImageBatch((raw / 255.0 - mu) / sd, labels)


def _window_view(images: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Strided view of shape (count, channels, oh, ow, kernel, kernel); no copy."""
    if padding:
        images = np.pad(images, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    H, W = images.shape[2:]
    if kernel > min(H, W):
        raise ValueError(f"kernel {kernel} exceeds image size {H}x{W}")
    win = np.lib.stride_tricks.sliding_window_view(images, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def patch_windows(images: np.ndarray, kernel: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """All windows, shape (count, n_windows, 3*kernel^2), flattened channel-major then row-major."""
    win = _window_view(images, kernel, stride, padding)
    c, ch, oh, ow = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(c, oh * ow, ch * kernel * kernel)


def image_patches(batch: ImageBatch | np.ndarray, kernel: int = 3, stride: int = 1, padding: int = 0,
                  sample_count: int | None = None, rng=None) -> np.ndarray:
    """Uniformly subsampled patch cloud of shape (sample_count, channels*kernel^2).

    Only the sampled windows are materialized.
    """
    images = batch.pixels if isinstance(batch, ImageBatch) else np.asarray(batch, dtype=float)
    win = _window_view(images, kernel, stride, padding)
    c, ch, oh, ow = win.shape[:4]
    per = oh * ow
    total = c * per
    m = ch * kernel * kernel
    if sample_count is None or sample_count >= total:
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(total, m).copy()
    idx = np.sort(as_generator(rng).choice(total, size=sample_count, replace=False))
    img, pos = np.divmod(idx, per)
    wy, wx = np.divmod(pos, ow)
    return win[img, :, wy, wx].reshape(sample_count, m)
