import numpy as np
import pytest

from eoslab import model
from eoslab.model import Dataset, ModelParams, ReceptiveFields


def random_instance(seed, d=6, m=3, K=3, n=5, fields=None, margin=1e-3, label_scale=1.0):
    """Random (params, fields, dataset) whose pre-activations stay away from the kinks."""
    gen = np.random.default_rng(seed)
    fields = fields or ReceptiveFields.disjoint(d, m)
    for _ in range(200):
        X = gen.standard_normal((n, fields.d))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        X *= gen.uniform(0.3, 1.0, size=(n, 1))
        y = label_scale * gen.standard_normal(n)
        w = gen.standard_normal((K, fields.m))
        b = 0.3 * gen.standard_normal(K)
        v = gen.standard_normal(K)
        params = ModelParams(w, b, v, float(gen.standard_normal()))
        ds = Dataset(X, y, R=1.0)
        if model.is_margin_safe(params, fields, ds, rel=margin):
            return params, fields, ds
    raise RuntimeError("could not draw a margin-safe instance")


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture
def tmp_out(tmp_path):
    return tmp_path / "out"


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report(criterion, ok, detail):
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    line = f"{status} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
