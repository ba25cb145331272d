"""End-to-end toy experiments: calibrate, decompose, compensate, evaluate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .covariance import CovarianceAccumulator, CovariancePair
from .decomposer import (
    ALL_MODES,
    CompressionSpec,
    LowRankFactors,
    compensate,
    decompose,
    kfac_loss,
)
from .factorizations import dampen, sym_eig
from .kvcache import HeadPartition, compress, decompose_v_per_head, fit_k_compressor, metric_error
from .toymodel import (
    LINEAR_LAYERS,
    SyntheticCorpus,
    ToyModel,
    TraceBundle,
    collect_traces,
    evaluate_mean_loss,
    fit,
    init_model,
    perplexity,
    prune_24,
    quantize_rtn,
)

HELD_OUT_SAMPLE_SEED = 1


@dataclass(eq=False)
class Calibration:
    config: RunConfig
    model: ToyModel
    calib: SyntheticCorpus
    held_out: SyntheticCorpus
    traces: TraceBundle
    accumulators: dict[str, CovarianceAccumulator]
    pairs: dict[str, CovariancePair]


def build_corpora(cfg: RunConfig) -> tuple[SyntheticCorpus, SyntheticCorpus]:
    calib = SyntheticCorpus(cfg.vocab_size, cfg.seq_len, cfg.num_sequences, cfg.seed, cfg.concentration)
    return calib, calib.split(HELD_OUT_SAMPLE_SEED, cfg.eval_sequences)


def build_model(cfg: RunConfig, calib: SyntheticCorpus) -> ToyModel:
    model = init_model(cfg.vocab_size, cfg.embed_dim, cfg.hidden, cfg.seed, cfg.tied)
    return fit(model, calib, steps=cfg.fit_steps, lr=cfg.lr) if cfg.fit_steps else model


def calibrate(cfg: RunConfig, keep_traces: bool = True, model: ToyModel | None = None) -> Calibration:
    calib, held_out = build_corpora(cfg)
    if model is None:
        model = build_model(cfg, calib)
    traces, accs = collect_traces(model, calib, cfg.temperature, track_xg=True, keep_traces=keep_traces)
    pairs = {name: acc.finalize(cfg.dampening) for name, acc in accs.items()}
    return Calibration(cfg, model, calib, held_out, traces, accs, pairs)


def decompose_model(
    model: ToyModel, pairs: dict[str, CovariancePair], spec: CompressionSpec
) -> dict[str, LowRankFactors]:
    return {name: decompose(getattr(model, name), pairs[name], spec) for name in LINEAR_LAYERS}


def with_factors(model: ToyModel, products: dict[str, np.ndarray]) -> ToyModel:
    return model.with_weights(**products)


def eval_summary(model: ToyModel, new_model: ToyModel, corpus: SyntheticCorpus) -> dict:
    base = evaluate_mean_loss(model, corpus)
    new = evaluate_mean_loss(new_model, corpus)
    return {
        "base_loss": base,
        "base_perplexity": perplexity(base),
        "loss": new,
        "perplexity": perplexity(new),
        "delta_loss": new - base,
    }


def mode_table(cal: Calibration, spec: CompressionSpec) -> dict[str, dict]:
    """Per-mode layer losses and whole-model loss change at the spec's rank."""
    table = {}
    for mode in ALL_MODES:
        factors = decompose_model(cal.model, cal.pairs, CompressionSpec(spec.rank, spec.ratio, mode))
        new = with_factors(cal.model, {k: f.product() for k, f in factors.items()})
        table[mode.value] = {
            "layers": {k: layer_record(f) for k, f in factors.items()},
            "eval": eval_summary(cal.model, new, cal.held_out),
        }
    return table


def layer_record(f: LowRankFactors) -> dict:
    m, n = f.shape
    return {
        "shape": [m, n],
        "mode": f.mode.value,
        "rank": f.rank,
        "kfac_loss": f.kfac_loss,
        "achieved_ratio": f.achieved_ratio,
    }


def compress_weight(w: np.ndarray, method: str, bits: int = 3) -> np.ndarray:
    if method == "rtn":
        return quantize_rtn(w, bits, per_channel=True)
    if method == "prune24":
        return prune_24(w)
    raise ValueError(f"unknown compression method {method!r}")


def compensation_table(cal: Calibration, method: str, rank: int, bits: int = 3) -> dict:
    """Compressed weights with and without a rank-``rank`` adapter, per mode."""
    model = cal.model
    compressed = {name: compress_weight(getattr(model, name), method, bits) for name in LINEAR_LAYERS}
    out = {
        "none": {
            "layers": {
                name: {"kfac_loss": kfac_loss(getattr(model, name) - compressed[name], cal.pairs[name])}
                for name in LINEAR_LAYERS
            },
            "eval": eval_summary(model, model.with_weights(**compressed), cal.held_out),
        }
    }
    adapters = {}
    for mode in ALL_MODES:
        layers, weights = {}, {}
        for name in LINEAR_LAYERS:
            w = getattr(model, name)
            r = min(rank, *w.shape)
            f = compensate(w, compressed[name], cal.pairs[name], r, mode)
            layers[name] = layer_record(f)
            weights[name] = compressed[name] + f.product()
            adapters[(mode.value, name)] = f
        out[mode.value] = {"layers": layers, "eval": eval_summary(model, model.with_weights(**weights), cal.held_out)}
    return {"table": out, "compressed": compressed, "adapters": adapters}


def head_covariances(g: np.ndarray, part: HeadPartition, dampening: float) -> list[np.ndarray]:
    t = g.shape[1]
    return [dampen(g[rows] @ g[rows].T / t, dampening) for rows in part.slices()]


def kv_experiment(cal: Calibration, heads: int, v_rank: int, k_rank: int) -> dict:
    """Per-head V decomposition of ``fc1`` and key compression of ``fc2`` outputs.

    The toy model has no attention, so ``fc1`` plays the V projection (rows
    split into heads) and the ``fc2`` outputs play post-position-embedding keys,
    with ``H_K`` estimated from their loss gradients.
    """
    cfg = cal.config
    x1, g1 = cal.traces.x["fc1"], cal.traces.g["fc1"]
    w_v = cal.model.fc1
    part = HeadPartition.for_rows(w_v.shape[0], heads)
    c_x = cal.pairs["fc1"].c_x
    c_gs = head_covariances(g1, part, cfg.dampening)
    v_factors = decompose_v_per_head(w_v, c_x, c_gs, part, v_rank)

    x2, g2 = cal.traces.x["fc2"], cal.traces.g["fc2"]
    keys = (cal.model.fc2 @ x2).T  # t x d
    h_k = dampen(g2 @ g2.T / g2.shape[1], cfg.dampening)
    comp = fit_k_compressor(keys, h_k, k_rank)
    err = metric_error(comp, keys, h_k)
    codes = compress(comp, keys)
    return {
        "v_factors": v_factors,
        "compressor": comp,
        "report": {
            "v": {
                "heads": heads,
                "head_dim": part.head_dim,
                "rank": v_rank,
                "head_kfac_loss": [f.kfac_loss for f in v_factors],
            },
            "k": {
                "dim": comp.dim,
                "rank": comp.rank,
                "compression_ratio": comp.compression_ratio,
                "metric_error": err,
                "dropped_eigenvalue_sum": float(np.sum(comp.eigenvalues[comp.rank :])),
                "code_floats_per_token": int(codes.shape[1]),
                "tokens": int(keys.shape[0]),
            },
        },
    }


def diagnostics(accs: dict[str, CovarianceAccumulator]) -> list[dict]:
    """Correlation factor and covariance spectra per layer, as flat CSV rows."""
    rows = []
    for name, acc in accs.items():
        rows.append({"layer": name, "quantity": "rho", "index": 0, "value": acc.correlation_factor()})
        t = max(acc.tokens_seen, 1)
        for label, s in (("eig_c_x", acc.sum_xx / t), ("eig_c_g", acc.sum_gg / t)):
            lam = sym_eig(0.5 * (s + s.T)).lam
            rows.extend({"layer": name, "quantity": label, "index": i, "value": float(v)} for i, v in enumerate(lam))
    return rows


def ablation_deltas(cfg: RunConfig, seeds) -> dict[str, list[float]]:
    """Actual held-out loss change per mode, one entry per seed."""
    out: dict[str, list[float]] = {m.value: [] for m in ALL_MODES}
    for seed in seeds:
        cal = calibrate(cfg.replace(seed=seed), keep_traces=False)
        table = mode_table(cal, cfg.compression_spec())
        for mode, rec in table.items():
            out[mode].append(rec["eval"]["delta_loss"])
    return out
