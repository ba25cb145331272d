import numpy as np
import pytest

from obd import pipeline
from obd.config import RunConfig
from obd.decomposer import CompressionSpec, Mode, kfac_loss

CFG = RunConfig(fit_steps=40, num_sequences=8, eval_sequences=8)


@pytest.fixture(scope="module")
def cal():
    return pipeline.calibrate(CFG)


def test_calibration_shapes(cal):
    assert cal.pairs["fc1"].c_x.shape == (8, 8)
    assert cal.pairs["fc1"].c_g.shape == (16, 16)
    assert cal.traces.x["fc2"].shape == (16, cal.traces.tokens)


def test_mode_table_reports_consistent_losses(cal):
    table = pipeline.mode_table(cal, CompressionSpec(rank=2))
    assert list(table) == [m.value for m in Mode]
    for layer in ("fc1", "fc2"):
        losses = {m: rec["layers"][layer]["kfac_loss"] for m, rec in table.items()}
        assert losses["obd"] <= min(losses.values()) + 1e-10
    for rec in table.values():
        assert rec["eval"]["loss"] >= 0


def test_compensation_table(cal):
    res = pipeline.compensation_table(cal, "rtn", rank=2, bits=3)
    table = res["table"]
    for layer in ("fc1", "fc2"):
        none = table["none"]["layers"][layer]["kfac_loss"]
        assert table["obd"]["layers"][layer]["kfac_loss"] <= none
        assert table["obd"]["layers"][layer]["kfac_loss"] <= table["plain-svd"]["layers"][layer]["kfac_loss"] + 1e-12
    with pytest.raises(ValueError):
        pipeline.compress_weight(np.ones((2, 4)), "magic")


def test_kv_experiment(cal):
    res = pipeline.kv_experiment(cal, heads=4, v_rank=2, k_rank=3)
    k = res["report"]["k"]
    assert k["metric_error"] == pytest.approx(k["dropped_eigenvalue_sum"], rel=1e-8)
    assert k["code_floats_per_token"] == 3 and k["compression_ratio"] == 1 - 3 / 8
    assert len(res["v_factors"]) == 4


def test_diagnostics_rows(cal):
    rows = pipeline.diagnostics(cal.accumulators)
    lam = [r["value"] for r in rows if r["layer"] == "fc2" and r["quantity"] == "eig_c_g"]
    assert len(lam) == 8 and lam == sorted(lam, reverse=True) and lam[-1] >= -1e-12


def test_ablation_deltas_shape():
    out = pipeline.ablation_deltas(CFG.replace(fit_steps=5), seeds=[0, 1])
    assert set(out) == {m.value for m in Mode} and all(len(v) == 2 for v in out.values())


@pytest.mark.parametrize("layer", ["fc1", "fc2"])
def test_quadratic_model_fidelity(layer):
    from scipy.stats import spearmanr

    from obd.toymodel import evaluate_mean_loss

    full = pipeline.calibrate(RunConfig(), keep_traces=False)
    pair = full.accumulators[layer].finalize(0.0)
    base = evaluate_mean_loss(full.model, full.calib)
    w = getattr(full.model, layer)
    rng = np.random.default_rng(0)
    actual, predicted = [], []
    for _ in range(50):
        d = rng.standard_normal(w.shape)
        d *= rng.uniform(0.1, 1.0) * 0.05 * np.linalg.norm(w) / np.linalg.norm(d)
        actual.append(evaluate_mean_loss(full.model.with_weights(**{layer: w + d}), full.calib) - base)
        predicted.append(kfac_loss(d, pair))
    assert max(np.abs(actual)) <= 0.05 * base
    assert spearmanr(actual, predicted).statistic >= 0.8
