"""Command-line entry point: ``obd <subcommand> ...``.

A run directory produced by ``collect`` holds::

    config.json            RunConfig used for the run
    model/                 toy model weights (tensor manifest)
    covariances/           finalized, dampened c_x / c_g per layer
    accumulators/          raw sums X X^T, G G^T, X G^T per layer
    traces/                captured X and G per layer
    report.json

Relative paths are resolved against ``$OBD_RUN_ROOT`` when it is set.
Exit codes: 0 success, 1 failed verification, 2 bad configuration or
input files, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

from . import pipeline
from .config import RunConfig
from .covariance import CovarianceAccumulator, CovariancePair
from .decomposer import ALL_MODES, CompressionSpec, Mode
from .errors import ConfigError, ManifestError, NumericalError, ObdError
from .manifest import read_manifest, write_manifest
from .toymodel import LINEAR_LAYERS, ToyModel
from .verify import run_all

RUN_ROOT_ENV = "OBD_RUN_ROOT"


def resolve(path: str | os.PathLike) -> Path:
    p = Path(path)
    root = os.environ.get(RUN_ROOT_ENV)
    return p if p.is_absolute() or not root else Path(root) / p


def write_report(path: Path, report: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def strip_timings(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "timings"}


# -- run directory I/O -------------------------------------------------------


def save_calibration(run: Path, cal: pipeline.Calibration) -> None:
    cfg = cal.config
    run.mkdir(parents=True, exist_ok=True)
    cfg.save(run / "config.json")
    write_manifest(run / "model", cal.model.parameters())
    write_manifest(
        run / "covariances",
        {f"{k}.{part}": getattr(p, part) for k, p in cal.pairs.items() for part in ("c_x", "c_g")},
    )
    write_manifest(
        run / "accumulators",
        {
            f"{k}.{part}": getattr(a, part)
            for k, a in cal.accumulators.items()
            for part in ("sum_xx", "sum_gg", "sum_xg")
        },
    )
    traces = {}
    for k in LINEAR_LAYERS:
        traces[f"{k}.x"] = cal.traces.x[k]
        traces[f"{k}.g"] = cal.traces.g[k]
    write_manifest(run / "traces", traces, dtype=cfg.trace_dtype)


def load_calibration(run: Path) -> pipeline.Calibration:
    if not (run / "config.json").exists():
        raise ConfigError(f"{run} is not a run directory (missing config.json); run `obd collect` first")
    cfg = RunConfig.load(run / "config.json")
    weights = read_manifest(run / "model")
    model = ToyModel(weights["embedding"], weights["fc1"], weights["fc2"], weights.get("head"))
    calib, held_out = pipeline.build_corpora(cfg)
    cov = read_manifest(run / "covariances")
    sums = read_manifest(run / "accumulators")
    traces = read_manifest(run / "traces")
    accs, pairs = {}, {}
    for k in LINEAR_LAYERS:
        x, g = traces[f"{k}.x"], traces[f"{k}.g"]
        acc = CovarianceAccumulator(k, n=x.shape[0], m=g.shape[0], track_xg=True)
        acc.sum_xx, acc.sum_gg, acc.sum_xg = sums[f"{k}.sum_xx"], sums[f"{k}.sum_gg"], sums[f"{k}.sum_xg"]
        acc.tokens_seen = x.shape[1]
        accs[k] = acc
        pairs[k] = CovariancePair(cov[f"{k}.c_x"], cov[f"{k}.c_g"], cfg.dampening, x.shape[1])
    bundle = pipeline.TraceBundle(
        {k: traces[f"{k}.x"] for k in LINEAR_LAYERS}, {k: traces[f"{k}.g"] for k in LINEAR_LAYERS}, accs["fc1"].tokens_seen
    )
    return pipeline.Calibration(cfg, model, calib, held_out, bundle, accs, pairs)


def load_reconstructed(model: ToyModel, factors_dir: Path) -> ToyModel:
    tensors = read_manifest(factors_dir)
    weights = {}
    for k in LINEAR_LAYERS:
        if f"{k}.b" not in tensors:
            continue
        w = tensors[f"{k}.b"] @ tensors[f"{k}.a"]
        if f"{k}.w_hat" in tensors:
            w = tensors[f"{k}.w_hat"] + w
        weights[k] = w
    if not weights:
        raise ConfigError(f"{factors_dir} holds no layer factors")
    return model.with_weights(**weights)


# -- subcommands --------------------------------------------------------------


def config_from_args(args) -> RunConfig:
    base = RunConfig.load(resolve(args.config)) if args.config else RunConfig()
    overrides = {
        key: getattr(args, key)
        for key in (
            "seed", "vocab_size", "embed_dim", "hidden", "fit_steps", "lr", "seq_len",
            "num_sequences", "eval_sequences", "concentration", "dampening", "temperature", "trace_dtype",
        )
        if getattr(args, key) is not None
    }
    if args.untied:
        overrides["tied"] = False
    return base.replace(**overrides)


def cmd_collect(args) -> int:
    t0 = time.perf_counter()
    cfg = config_from_args(args)
    run = resolve(args.out)
    cal = pipeline.calibrate(cfg)
    save_calibration(run, cal)
    layers = {}
    for k, acc in cal.accumulators.items():
        layers[k] = {
            "shape": list(getattr(cal.model, k).shape),
            "tokens": acc.tokens_seen,
            "rho": acc.correlation_factor(),
        }
    report = {
        "command": "collect",
        "config": cfg.to_dict(),
        "layers": layers,
        "calibration_loss": pipeline.evaluate_mean_loss(cal.model, cal.calib),
        "held_out_loss": pipeline.evaluate_mean_loss(cal.model, cal.held_out),
        "mode_table": pipeline.mode_table(cal, cfg.compression_spec()),
        "timings": {"total_s": time.perf_counter() - t0},
    }
    write_report(run / "report.json", report)
    print(f"collected {cal.traces.tokens} tokens per layer into {run}")
    return 0


def spec_from_args(args, cfg: RunConfig) -> CompressionSpec:
    if args.rank is not None:
        return CompressionSpec(rank=args.rank, mode=Mode(args.mode or cfg.mode))
    ratio = args.ratio if args.ratio is not None else cfg.ratio
    if ratio is None:
        return CompressionSpec(rank=cfg.rank, mode=Mode(args.mode or cfg.mode))
    return CompressionSpec(ratio=ratio, mode=Mode(args.mode or cfg.mode))


def cmd_decompose(args) -> int:
    t0 = time.perf_counter()
    run = resolve(args.run)
    cal = load_calibration(run)
    try:
        spec = spec_from_args(args, cal.config)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = resolve(args.out) if args.out else run / f"decompose-{spec.mode.value}"
    factors = pipeline.decompose_model(cal.model, cal.pairs, spec)
    tensors = {}
    for k, f in factors.items():
        tensors[f"{k}.b"] = f.b
        tensors[f"{k}.a"] = f.a
    write_manifest(out, tensors)
    new = pipeline.with_factors(cal.model, {k: f.product() for k, f in factors.items()})
    report = {
        "command": "decompose",
        "seed": cal.config.seed,
        "spec": {"rank": spec.rank, "ratio": spec.ratio, "mode": spec.mode.value},
        "layers": {k: pipeline.layer_record(f) for k, f in factors.items()},
        "eval": pipeline.eval_summary(cal.model, new, cal.held_out),
        "mode_table": pipeline.mode_table(cal, spec),
        "timings": {"total_s": time.perf_counter() - t0},
    }
    write_report(out / "report.json", report)
    for k, f in factors.items():
        print(f"{k}: rank {f.rank}, achieved ratio {f.achieved_ratio:.4f}, kfac loss {f.kfac_loss:.6g}")
    return 0


def cmd_compensate(args) -> int:
    t0 = time.perf_counter()
    run = resolve(args.run)
    cal = load_calibration(run)
    if args.rank < 1:
        raise ConfigError("adapter rank must be >= 1")
    if args.bits < 2:
        raise ConfigError("bits must be >= 2")
    mode = Mode(args.mode)
    out = resolve(args.out) if args.out else run / f"compensate-{args.method}-{mode.value}"
    result = pipeline.compensation_table(cal, args.method, args.rank, args.bits)
    tensors = {}
    for k in LINEAR_LAYERS:
        f = result["adapters"][(mode.value, k)]
        tensors[f"{k}.w_hat"] = result["compressed"][k]
        tensors[f"{k}.b"] = f.b
        tensors[f"{k}.a"] = f.a
    write_manifest(out, tensors)
    report = {
        "command": "compensate",
        "seed": cal.config.seed,
        "method": args.method,
        "bits": args.bits if args.method == "rtn" else None,
        "rank": args.rank,
        "mode": mode.value,
        "mode_table": result["table"],
        "timings": {"total_s": time.perf_counter() - t0},
    }
    write_report(out / "report.json", report)
    for name, rec in result["table"].items():
        print(f"{name:>14}: delta loss {rec['eval']['delta_loss']:.6g}")
    return 0


def cmd_kv_compress(args) -> int:
    t0 = time.perf_counter()
    run = resolve(args.run)
    cal = load_calibration(run)
    out = resolve(args.out) if args.out else run / "kv-compress"
    res = pipeline.kv_experiment(cal, args.heads, args.v_rank, args.k_rank)
    comp = res["compressor"]
    tensors = {"k.l_k": comp.l_k.l, "k.u_r": comp.u_r, "k.reconstruct": comp.reconstruct, "k.eigenvalues": comp.eigenvalues}
    for i, f in enumerate(res["v_factors"]):
        tensors[f"v.head{i}.b"] = f.b
        tensors[f"v.head{i}.a"] = f.a
    write_manifest(out, tensors)
    report = {
        "command": "kv-compress",
        "seed": cal.config.seed,
        **res["report"],
        "mode_table": pipeline.mode_table(cal, cal.config.compression_spec()),
        "timings": {"total_s": time.perf_counter() - t0},
    }
    write_report(out / "report.json", report)
    k = res["report"]["k"]
    print(f"K: rank {k['rank']}/{k['dim']}, metric error {k['metric_error']:.6g}, compression {k['compression_ratio']:.3f}")
    return 0


def cmd_diagnose(args) -> int:
    run = resolve(args.run)
    cal = load_calibration(run)
    rows = pipeline.diagnostics(cal.accumulators)
    out = resolve(args.out) if args.out else run / "diagnostics.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["layer", "quantity", "index", "value"])
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        if row["quantity"] == "rho":
            print(f"{row['layer']}: rho = {row['value']:.4f}")
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    run = resolve(args.run)
    cal = load_calibration(run)
    new = load_reconstructed(cal.model, resolve(args.factors)) if args.factors else cal.model
    summary = pipeline.eval_summary(cal.model, new, cal.held_out)
    report = {
        "command": "eval",
        "seed": cal.config.seed,
        # relative to the run so identical runs in different places give identical reports
        "factors": os.path.relpath(resolve(args.factors), run) if args.factors else None,
        "eval": summary,
        "mode_table": pipeline.mode_table(cal, cal.config.compression_spec()),
        "timings": {"total_s": time.perf_counter() - t0},
    }
    out = resolve(args.out) if args.out else (resolve(args.factors) if args.factors else run) / "eval.json"
    write_report(out, report)
    print(
        f"loss {summary['base_loss']:.6f} -> {summary['loss']:.6f} "
        f"(delta {summary['delta_loss']:.6g}), perplexity {summary['base_perplexity']:.4f} -> {summary['perplexity']:.4f}"
    )
    return 0


def cmd_verify(args) -> int:
    results = run_all(scale=args.scale, seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return 0 if all(r.passed for r in results) else 1


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="obd", description="Curvature-aware low-rank decomposition on a toy model.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="build toy model and corpus, capture traces and covariances")
    p.add_argument("--out", required=True, help="run directory to create")
    p.add_argument("--config", help="JSON RunConfig; flags below override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--untied", action="store_true", help="use a separate output head")
    p.add_argument("--fit-steps", type=int, help="Adam steps fitting the toy model (0 = random model)")
    p.add_argument("--lr", type=float)
    p.add_argument("--seq-len", type=int)
    p.add_argument("--num-sequences", type=int)
    p.add_argument("--eval-sequences", type=int)
    p.add_argument("--concentration", type=float, help="Dirichlet concentration of the Markov chain rows")
    p.add_argument("--dampening", type=float, help="fraction of the mean diagonal added to each covariance")
    p.add_argument("--temperature", type=float, help="logit temperature for gradient capture, e.g. 0.5, 1, 2")
    p.add_argument("--trace-dtype", choices=["f32", "f64"])
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("decompose", help="factor every linear layer at a rank or compression ratio")
    p.add_argument("--run", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--ratio", type=float, help="parameter reduction 1 - r(m+n)/(mn), in [0, 1)")
    group.add_argument("--rank", type=int)
    p.add_argument("--mode", choices=[m.value for m in ALL_MODES])
    p.add_argument("--out")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("compensate", help="quantize or 2:4-prune, then fit low-rank adapters")
    p.add_argument("--run", required=True)
    p.add_argument("--method", choices=["rtn", "prune24"], default="rtn")
    p.add_argument("--bits", type=int, default=3)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--mode", choices=[m.value for m in ALL_MODES], default="obd", help="adapter written to disk")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser("kv-compress", help="per-head V decomposition and whitened-PCA key compressor")
    p.add_argument("--run", required=True)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--v-rank", type=int, default=2)
    p.add_argument("--k-rank", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_kv_compress)

    p = sub.add_parser("diagnose", help="write per-layer correlation factor and covariance spectra as CSV")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("eval", help="mean loss and perplexity of the original vs reconstructed model")
    p.add_argument("--run", required=True)
    p.add_argument("--factors", help="output directory of decompose or compensate")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the oracle equivalence and optimality checks")
    p.add_argument("--scale", type=int, default=1, help="multiply instance counts")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ManifestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (ObdError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
