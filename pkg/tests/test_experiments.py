import math

import pytest

from eoslab import experiments, io


def test_cells_order():
    cfg = experiments.ScalingConfig(lcn_ws_d=[5], fcn_d=[3], n_list=[8, 16], seeds=[0, 1])
    cells = cfg.cells()
    assert cells[0] == ("fcn", 3, 8, 0) and cells[-1] == ("lcn-ws", 5, 16, 1)
    assert len(cells) == 8


def row(arch, d, n, gap, seed=0):
    return {"arch": arch, "d": d, "n": n, "gap": gap, "seed": seed}


def test_fit_slopes_exact_power_law():
    rows = [row("lcn-ws", 8, n, 3.0 * n ** -0.5) for n in (16, 32, 64)]
    rows += [row("fcn", 4, n, 2.0) for n in (16, 32, 64)]
    out = experiments.fit_slopes(rows)
    assert out["lcn-ws_d8"]["slope"] == pytest.approx(-0.5, abs=1e-12)
    assert out["fcn_d4"]["slope"] == pytest.approx(0.0, abs=1e-12)


def test_fit_slopes_drops_nan_and_refuses_single_n():
    rows = [row("fcn", 4, 16, 1.0), row("fcn", 4, 32, float("nan"))]
    out = experiments.fit_slopes(rows)
    assert out["fcn_d4"]["slope"] is None and "error" in out["fcn_d4"]


def test_mean_gap_ignores_nan():
    rows = [row("fcn", 4, 16, 1.0), row("fcn", 4, 16, float("nan"), 1), row("fcn", 4, 16, 3.0, 2)]
    assert experiments.mean_gap(rows, "fcn", 4, 16) == 2.0
    assert math.isnan(experiments.mean_gap(rows, "fcn", 4, 32))


def test_sweep_and_write(tmp_path):
    cfg = experiments.ScalingConfig(lcn_ws_d=[6], fcn_d=[], m=3, K=4, K_true=2, n_list=[8],
                                    seeds=[0], epochs=10, sharpness_every=5)
    res = experiments.run_sweep(cfg, threads=1)
    assert len(res) == 1 and not res[0]["diverged"]
    paths = experiments.write_sweep(tmp_path, res)
    header, rows = io.read_csv(paths[0])
    assert header == experiments.GAP_HEADER and rows[0][:3] == ["lcn-ws", "6", "3"]
    assert paths[1].name == "lcn-ws_d6_n8_s0.csv"


def test_worker_count(monkeypatch):
    monkeypatch.setenv("EOSLAB_THREADS", "4")
    assert experiments.worker_count(None) == 4
    assert experiments.worker_count(0) == 1
