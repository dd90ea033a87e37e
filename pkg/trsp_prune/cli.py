"""
Command-line entry point: ``trsp <command> [options]``.

Every command writes a ``manifest.json`` into its output directory that holds the effective
configuration, the command arguments, the derived seeds and the run events; ``trsp replay``
re-runs a command from that file alone.
"""

import argparse
import logging
import os.path
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import RunConfig, load_config, replace_section
from .core import ops
from .core.enums import GatePlacement, NormType, StrategyKind
from .core.errors import ConfigError, InvariantViolation, NumericalError, TrspError
from .core.gradcheck import gradient_check
from .core.run_context import RunContext, create_run_context
from .core.runlog import RunLog
from .data.corpus import CalibrationSet, Corpus, fingerprint, load_corpus
from .data.tokenizer import Tokenizer
from .evaluation.benchmark import benchmark
from .evaluation.experiments import (
    COMPARE_COLUMNS,
    SWEEP_COLUMNS,
    compare_strategies,
    lambda_grid,
    ratio_sweep,
)
from .evaluation.metrics import cosine_similarity_trace, perplexity
from .evaluation.report import (
    read_json,
    write_curve_csv,
    write_grid_csv,
    write_json,
    write_rows,
    write_similarity_csv,
)
from .model.checkpoint import Checkpoint, read_checkpoint, save_checkpoint
from .model.training import pretrain
from .model.transformer import ModelState, clear_mask, forward, mask_layer, prune
from .pruning.pipeline import calibration_for, run_strategy
from .pruning.trsp import difference_penalty, stage1_loss

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
IDENTITY_TOLERANCE = 1e-9

# argparse destination -> config key
OVERRIDE_KEYS = {
    "seed": "run.seed",
    "out": "run.out",
    "corpus": "data.corpus",
    "calibration_corpus": "data.calibration_corpus",
    "tokenizer": "data.tokenizer",
    "n_layers": "model.n_layers",
    "d_model": "model.d_model",
    "n_heads": "model.n_heads",
    "max_seq_len": "model.max_seq_len",
    "gate_placement": "model.gate_placement",
    "steps": "pretrain.steps",
    "lr": "pretrain.lr",
    "ratio": "prune.ratio",
    "strategy": "prune.strategy",
    "mode": "prune.mode",
    "regularize": "prune.regularize",
    "n_calibration": "prune.n_calibration",
    "lambda1": "stage1.lambda1",
    "stage1_steps": "stage1.steps",
    "joint_weights": "stage1.joint_weights",
    "reinit_gates": "stage1.reinit_gates",
    "criterion": "stage1.criterion",
    "lambda2": "stage2.lambda2",
    "norm": "stage2.norm",
    "stage2_steps": "stage2.steps",
    "stride": "eval.stride",
    "batch": "bench.batch",
    "gen_len": "bench.gen_len",
    "prompt_len": "bench.prompt_len",
    "repeats": "bench.repeats",
}

# command-specific arguments recorded in the manifest
COMMAND_ARGUMENTS = (
    "checkpoint",
    "reference",
    "split",
    "lambda1s",
    "lambda2s",
    "ratios",
    "strategies",
    "bench",
    "n_samples",
)


@dataclass
class Invocation:
    """One command with its configuration, seeds and event log."""

    command: str
    config: RunConfig
    arguments: Dict[str, Any] = field(default_factory=dict)
    progress: bool = False
    context: Optional[RunContext] = None
    run_log: RunLog = field(default_factory=RunLog)

    def __post_init__(self):
        if self.context is None:
            self.context = create_run_context(self.config.run.seed, self.command)

    @property
    def out(self) -> Path:
        path = Path(self.config.run.out)
        path.mkdir(parents=True, exist_ok=True)
        return path


def _require_file(path: Optional[str], name: str) -> str:
    if not path:
        raise ConfigError(f"{name} is required")
    if not os.path.isfile(path):
        raise ConfigError(f"{name}: file {path} does not exist")
    return os.path.abspath(path)


def _load_checkpoint(path: Optional[str], name: str = "--checkpoint") -> Checkpoint:
    return read_checkpoint(_require_file(path, name))


def _checkpoint_tokenizer(ckpt: Checkpoint) -> Optional[Tokenizer]:
    return Tokenizer.from_dict(ckpt.tokenizer) if ckpt.tokenizer else None


def _load_corpus(inv: Invocation, tokenizer: Optional[Tokenizer] = None) -> Corpus:
    data = inv.config.data
    path = _require_file(data.corpus, "data.corpus (--corpus)")
    return load_corpus(path, data.tokenizer, data.fractions, tokenizer)


def _calibration(inv: Invocation, state: ModelState, corpus: Corpus) -> CalibrationSet:
    data = inv.config.data
    source = corpus
    if data.calibration_corpus:
        path = _require_file(data.calibration_corpus, "data.calibration_corpus")
        source = load_corpus(path, data.tokenizer, data.fractions, corpus.tokenizer)
    return calibration_for(state, source, inv.config.prune, inv.context)


def _eval_kwargs(config: RunConfig) -> dict:
    return {
        "seq_len": config.eval.seq_len or None,
        "stride": config.eval.stride or None,
        "batch_size": config.eval.batch_size,
    }


def cmd_pretrain(inv: Invocation) -> dict:
    """Train the dense baseline and write its checkpoint and loss curve."""
    corpus = _load_corpus(inv)
    config = replace(inv.config.model, vocab_size=corpus.tokenizer.vocab_size)
    state = ModelState.initialize(config, seed=inv.context.seed_for("init"))
    result = pretrain(
        state,
        corpus,
        inv.config.pretrain,
        seed=inv.context.seed_for("pretrain"),
        run_log=inv.run_log,
        progress=inv.progress,
    )
    ppl = perplexity(state, corpus.validation, **_eval_kwargs(inv.config))

    path = inv.out / "dense.ckpt"
    meta = {
        "command": "pretrain",
        "seed": inv.config.run.seed,
        "corpus": corpus.name,
        "corpus_hash": fingerprint(corpus.tokens),
        "steps_run": result.steps_run,
    }
    size = save_checkpoint(state, path, corpus.tokenizer.to_dict(), meta)
    inv.run_log.record("checkpoint_write", "pretrain", path=str(path), bytes=size)
    curve = write_curve_csv(inv.out / "loss_curve.csv", result.curve)
    print(f"validation perplexity: {ppl:.4f}")
    return {
        "checkpoint": str(path),
        "loss_curve": str(curve),
        "validation_ppl": ppl,
        "steps_run": result.steps_run,
        "stopped_early": result.stopped_early,
    }


def cmd_prune(inv: Invocation) -> dict:
    """Select, regularize and remove layers of a checkpoint."""
    ckpt = _load_checkpoint(inv.arguments.get("checkpoint"))
    corpus = _load_corpus(inv, _checkpoint_tokenizer(ckpt))
    calib = _calibration(inv, ckpt.state, corpus)
    cfg = inv.config
    outcome = run_strategy(
        ckpt.state,
        corpus,
        cfg.prune,
        cfg.stage1,
        cfg.stage2,
        calib=calib,
        context=inv.context,
        eval_config=cfg.eval,
        run_log=inv.run_log,
        progress=inv.progress,
    )
    report = outcome.report

    path = inv.out / "pruned.ckpt"
    meta = {
        "command": "prune",
        "seed": cfg.run.seed,
        "prune_set": outcome.prune_set.to_dict(),
        "source": ckpt.meta,
    }
    size = save_checkpoint(outcome.state, path, ckpt.tokenizer, meta)
    inv.run_log.record("checkpoint_write", "prune", path=str(path), bytes=size)
    report_path = write_json(inv.out / "report.json", report.to_dict())
    similarity = write_similarity_csv(inv.out / "similarity.csv", report)
    print(
        f"pruned layers {outcome.prune_set.indices}: "
        f"{report.n_layers_before} -> {report.n_layers_after} layers, "
        f"ppl {report.ppl_before:.4f} -> {report.ppl:.4f}"
    )
    return {
        "checkpoint": str(path),
        "report": str(report_path),
        "similarity": str(similarity),
        "prune_set": outcome.prune_set.indices,
        "n_pruned": len(outcome.prune_set),
        "ppl": report.ppl,
    }


def cmd_eval(inv: Invocation) -> dict:
    """Perplexity of a checkpoint, optionally relative to a reference checkpoint."""
    ckpt = _load_checkpoint(inv.arguments.get("checkpoint"))
    corpus = _load_corpus(inv, _checkpoint_tokenizer(ckpt))
    split = corpus.split(inv.arguments.get("split") or "test")
    result = {
        "ppl": perplexity(ckpt.state, split, **_eval_kwargs(inv.config)),
        "n_layers": ckpt.state.n_layers,
        "layer_ids": ckpt.state.layer_ids,
        "split_hash": fingerprint(split),
    }
    if inv.arguments.get("reference"):
        ref = _load_checkpoint(inv.arguments["reference"], "--reference")
        result["reference_ppl"] = perplexity(ref.state, split, **_eval_kwargs(inv.config))
        result["ppl_delta"] = result["ppl"] - result["reference_ppl"]
    write_json(inv.out / "eval.json", result)
    line = f"ppl {result['ppl']:.4f} ({result['n_layers']} layers)"
    if "ppl_delta" in result:
        line += f", delta vs reference {result['ppl_delta']:+.4f}"
    print(line)
    return result


def cmd_bench(inv: Invocation) -> dict:
    """Throughput and latency of a checkpoint, optionally against a reference."""
    bench = inv.config.bench
    ckpt = _load_checkpoint(inv.arguments.get("checkpoint"))

    def run(state: ModelState) -> dict:
        return benchmark(
            state,
            bench.batch,
            bench.gen_len,
            bench.prompt_len,
            bench.repeats,
            bench.warmup,
            bench.seed,
        ).to_dict()

    result = {"model": run(ckpt.state)}
    if inv.arguments.get("reference"):
        ref = _load_checkpoint(inv.arguments["reference"], "--reference")
        result["reference"] = run(ref.state)
        result["throughput_ratio"] = (
            result["model"]["tokens_per_second"] / result["reference"]["tokens_per_second"]
        )
        result["latency_ratio"] = result["model"]["latency_ms"] / result["reference"]["latency_ms"]
    write_json(inv.out / "bench.json", result)
    print(
        f"{result['model']['tokens_per_second']:.1f} tokens/s, "
        f"prompt latency {result['model']['latency_ms']:.2f} ms"
    )
    return result


def cmd_grid(inv: Invocation) -> dict:
    """Perplexity over a lambda1 x lambda2 grid."""
    ckpt = _load_checkpoint(inv.arguments.get("checkpoint"))
    corpus = _load_corpus(inv, _checkpoint_tokenizer(ckpt))
    cfg = inv.config
    grid = lambda_grid(
        ckpt.state,
        corpus,
        inv.arguments.get("lambda1s") or [cfg.stage1.lambda1],
        inv.arguments.get("lambda2s") or [cfg.stage2.lambda2],
        cfg.prune.ratio,
        cfg.stage1,
        cfg.stage2,
        cfg.prune.mode,
        calib=_calibration(inv, ckpt.state, corpus),
        context=inv.context,
        prune_config=cfg.prune,
        eval_config=cfg.eval,
        run_log=inv.run_log,
        progress=inv.progress,
    )
    path = write_grid_csv(inv.out / "grid.csv", grid.lambda1s, grid.lambda2s, grid.ppl)
    write_json(inv.out / "grid_reports.json", [r.to_dict() for r in grid.reports])
    best = grid.best()
    print(f"best cell lambda1={best['lambda1']:g} lambda2={best['lambda2']:g}: {best['ppl']:.4f}")
    return {"grid": str(path), "ppl": grid.ppl, "best": best}


def _strategies(inv: Invocation, default: Sequence[StrategyKind]) -> List[StrategyKind]:
    return [StrategyKind(s) for s in (inv.arguments.get("strategies") or default)]


def cmd_compare(inv: Invocation) -> dict:
    """TRSP against every baseline on identical seeds and data."""
    ckpt = _load_checkpoint(inv.arguments.get("checkpoint"))
    corpus = _load_corpus(inv, _checkpoint_tokenizer(ckpt))
    cfg = inv.config
    rows = compare_strategies(
        ckpt.state,
        corpus,
        cfg.prune.ratio,
        _strategies(inv, list(StrategyKind)),
        cfg.stage1,
        cfg.stage2,
        calib=_calibration(inv, ckpt.state, corpus),
        context=inv.context,
        prune_config=cfg.prune,
        eval_config=cfg.eval,
        bench_config=cfg.bench if inv.arguments.get("bench") else None,
        run_log=inv.run_log,
        progress=inv.progress,
    )
    path = write_rows(inv.out / "compare.csv", COMPARE_COLUMNS, rows)
    for row in rows:
        print(f"{row['rank']}. {row['strategy']:<12} ppl {row['ppl']:.4f}  [{row['prune_set']}]")
    return {"table": str(path), "rows": rows}


def cmd_sweep(inv: Invocation) -> dict:
    """Perplexity over pruning ratios for one or more strategies."""
    ckpt = _load_checkpoint(inv.arguments.get("checkpoint"))
    corpus = _load_corpus(inv, _checkpoint_tokenizer(ckpt))
    cfg = inv.config
    rows = ratio_sweep(
        ckpt.state,
        corpus,
        inv.arguments.get("ratios") or [cfg.prune.ratio],
        _strategies(inv, [StrategyKind.TRSP]),
        cfg.stage1,
        cfg.stage2,
        calib=_calibration(inv, ckpt.state, corpus),
        context=inv.context,
        prune_config=cfg.prune,
        eval_config=cfg.eval,
        run_log=inv.run_log,
        progress=inv.progress,
    )
    path = write_rows(inv.out / "sweep.csv", SWEEP_COLUMNS, rows)
    return {"table": str(path), "rows": rows}


def _gradient_checks(inv: Invocation, state: ModelState, batch: np.ndarray) -> dict:
    cfg = inv.config
    n_samples = inv.arguments.get("n_samples") or 50
    seed = inv.context.seed_for("gradcheck")
    layers = state.layer_ids[:1]
    params = state.parameters()

    def stage2_loss(norm: NormType):
        def loss():
            lm, penalty = difference_penalty(state, batch, layers, norm)
            return ops.add(lm, ops.scale(penalty, cfg.stage2.lambda2))

        return loss

    checks = {
        "stage1": lambda: stage1_loss(state, batch, cfg.stage1.lambda1)[0],
        "stage2_l1": stage2_loss(NormType.L1),
        "stage2_l2": stage2_loss(NormType.L2),
    }
    return {
        name: gradient_check(fn, params, n_samples=n_samples, seed=seed).max_rel_error
        for name, fn in checks.items()
    }


def _identity_checks(inv: Invocation, state: ModelState, batch: np.ndarray) -> dict:
    ones = state.copy()
    ones.reset_gates()
    gated = forward(ones, batch).logits.data
    ungated = forward(ones, batch, apply_gates=False).logits.data
    result = {
        "gate_identity_bitwise": bool(np.array_equal(gated, ungated)),
        "gate_identity_max_diff": float(np.abs(gated - ungated).max()),
    }
    if state.n_layers > 1:
        rng = inv.context.rng("diagnose")
        size = max(1, state.n_layers // 4)
        chosen = [int(i) for i in rng.choice(state.layer_ids, size=size, replace=False)]
        masked = state.copy()
        for idx in chosen:
            mask_layer(masked, idx)
        diff = np.abs(
            forward(prune(state, chosen), batch).logits.data - forward(masked, batch).logits.data
        ).max()
        result.update({"prune_set": chosen, "prune_mask_max_diff": float(diff)})
    return result


def cmd_diagnose(inv: Invocation) -> dict:
    """Gradient checks, identity checks and similarity traces on a checkpoint."""
    ckpt = _load_checkpoint(inv.arguments.get("checkpoint"))
    corpus = _load_corpus(inv, _checkpoint_tokenizer(ckpt))
    state = clear_mask(ckpt.state.copy())
    calib = _calibration(inv, state, corpus)
    batch = calib.tokens[:2, : min(16, calib.seq_len)]

    gradients = _gradient_checks(inv, state, batch)
    identity = _identity_checks(inv, state, batch)
    trace = cosine_similarity_trace(state, calib)
    result = {
        "gradient_check": gradients,
        "identity": identity,
        "similarity": {str(k): v for k, v in trace.values.items()},
        "zero_norm_vectors": sum(trace.zero_norm.values()),
    }
    write_json(inv.out / "diagnose.json", result)
    for name, error in gradients.items():
        print(f"gradient check {name}: max relative error {error:.2e}")

    failures = [n for n, e in gradients.items() if e > GRADCHECK_TOLERANCE]
    if identity["gate_identity_max_diff"] > IDENTITY_TOLERANCE:
        failures.append("gate identity")
    if identity.get("prune_mask_max_diff", 0.0) > IDENTITY_TOLERANCE:
        failures.append("prune/mask equivalence")
    if ckpt.state.config.gate_placement is GatePlacement.STREAM:
        if not identity["gate_identity_bitwise"]:
            failures.append("bitwise gate identity")
    if failures:
        raise InvariantViolation(f"Diagnostics failed: {', '.join(failures)}")
    return result


COMMANDS: Dict[str, Callable[[Invocation], dict]] = {
    "pretrain": cmd_pretrain,
    "prune": cmd_prune,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "grid": cmd_grid,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "diagnose": cmd_diagnose,
}


def write_manifest(inv: Invocation, outputs: dict, status: str = "success") -> Path:
    manifest = {
        "version": __version__,
        "command": inv.command,
        "status": status,
        "arguments": inv.arguments,
        "config": inv.config.to_dict(),
        "context": inv.context.to_dict(),
        "events": inv.run_log.to_list(),
        "outputs": outputs,
    }
    return write_json(inv.out / "manifest.json", manifest)


def run_invocation(inv: Invocation) -> dict:
    """
    Execute a command and write its manifest.

    A numerical abort is recorded in the run log and in a manifest with status "failure"
    before the error propagates.
    """
    logger.info("Running %s (seed %d)", inv.command, inv.config.run.seed)
    try:
        outputs = COMMANDS[inv.command](inv)
    except NumericalError as e:
        inv.run_log.record("numerical_abort", inv.command, status="failure", op=e.op)
        write_manifest(inv, {"error": str(e)}, status="failure")
        raise
    write_manifest(inv, outputs)
    return outputs


def replay(manifest_path: str, out: Optional[str] = None, progress: bool = False) -> dict:
    """Re-run the command recorded in a manifest, writing into ``out``."""
    manifest = read_json(_require_file(manifest_path, "MANIFEST"))
    try:
        command = manifest["command"]
        config = RunConfig.from_dict(manifest["config"])
        arguments = dict(manifest.get("arguments", {}))
    except KeyError as e:
        raise ConfigError(f"Manifest {manifest_path} lacks {e}") from e
    if command not in COMMANDS:
        raise ConfigError(f"Manifest {manifest_path} names unknown command {command!r}")
    target = out or os.path.join(os.path.dirname(os.path.abspath(manifest_path)), "replay")
    config = replace_section(config, "run", out=target)
    return run_invocation(Invocation(command, config, arguments, progress))


def _global_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="INI file with settings (see default.ini)")
    parent.add_argument("--seed", type=int, help="Root seed")
    parent.add_argument("--out", help="Output directory")
    parent.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity",
    )
    parent.add_argument("--quiet", action="store_true", help="Disable progress bars")
    return parent


def _data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--corpus", help="UTF-8 text corpus")
    parser.add_argument("--calibration-corpus", help="Draw calibration windows from this file")
    parser.add_argument("--tokenizer", choices=["byte", "char"])
    parser.add_argument("--stride", type=int, help="Perplexity window stride")


def _pruning_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", required=False, help="Dense checkpoint")
    parser.add_argument("--ratio", type=float, help="Share of layers to prune")
    parser.add_argument("--mode", choices=["iterative", "one_shot"])
    parser.add_argument("--n-calibration", type=int, help="Calibration sequences")
    parser.add_argument("--stage1-steps", type=int)
    parser.add_argument("--stage2-steps", type=int)
    parser.add_argument("--norm", choices=["l1", "l2"])
    parser.add_argument("--criterion", choices=["magnitude", "raw"])
    parser.add_argument(
        "--no-stage2", dest="regularize", action="store_const", const=False, default=None
    )
    parser.add_argument(
        "--gates-only", dest="joint_weights", action="store_const", const=False, default=None
    )
    parser.add_argument("--reinit-gates", action="store_const", const=True, default=None)


def build_parser() -> argparse.ArgumentParser:
    parent = _global_flags()
    parser = argparse.ArgumentParser(
        prog="trsp", description="Two-stage regularization-based structured layer pruning"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    strategy_choices = [k.value for k in StrategyKind]

    p = sub.add_parser("pretrain", parents=[parent], help="Train the dense baseline")
    _data_flags(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--n-layers", type=int)
    p.add_argument("--d-model", type=int)
    p.add_argument("--n-heads", type=int)
    p.add_argument("--max-seq-len", type=int)
    p.add_argument("--gate-placement", choices=["stream", "delta"])

    p = sub.add_parser("prune", parents=[parent], help="Prune layers of a checkpoint")
    _data_flags(p)
    _pruning_flags(p)
    p.add_argument("--strategy", choices=strategy_choices)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)

    p = sub.add_parser("eval", parents=[parent], help="Perplexity of a checkpoint")
    _data_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--reference", help="Checkpoint to report the perplexity delta against")
    p.add_argument("--split", choices=["train", "validation", "test"])

    p = sub.add_parser("bench", parents=[parent], help="Throughput and latency")
    p.add_argument("--checkpoint")
    p.add_argument("--reference", help="Checkpoint to compare speed against")
    p.add_argument("--batch", type=int)
    p.add_argument("--gen-len", type=int)
    p.add_argument("--prompt-len", type=int)
    p.add_argument("--repeats", type=int)

    p = sub.add_parser("grid", parents=[parent], help="Lambda1 x lambda2 perplexity grid")
    _data_flags(p)
    _pruning_flags(p)
    p.add_argument("--lambda1", dest="lambda1s", type=float, nargs="+")
    p.add_argument("--lambda2", dest="lambda2s", type=float, nargs="+")

    p = sub.add_parser("compare", parents=[parent], help="TRSP against the baselines")
    _data_flags(p)
    _pruning_flags(p)
    p.add_argument("--strategies", nargs="+", choices=strategy_choices)
    p.add_argument("--bench", action="store_true", help="Also measure throughput")

    p = sub.add_parser("sweep", parents=[parent], help="Perplexity over pruning ratios")
    _data_flags(p)
    _pruning_flags(p)
    p.add_argument("--ratios", type=float, nargs="+")
    p.add_argument("--strategies", nargs="+", choices=strategy_choices)

    p = sub.add_parser("diagnose", parents=[parent], help="Gradient and identity checks")
    _data_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--n-calibration", type=int)
    p.add_argument("--n-samples", type=int, help="Entries per gradient check")

    p = sub.add_parser("replay", parents=[parent], help="Re-run a command from its manifest")
    p.add_argument("manifest", help="manifest.json written by an earlier command")
    return parser


def invocation_from_args(args: argparse.Namespace) -> Invocation:
    values = vars(args)
    overrides = {key: values.get(dest) for dest, key in OVERRIDE_KEYS.items()}
    config = load_config(args.config, overrides)
    for section, key in (("data", "corpus"), ("data", "calibration_corpus")):
        path = getattr(getattr(config, section), key)
        if path:
            config = replace_section(config, section, **{key: os.path.abspath(path)})
    arguments = {k: values[k] for k in COMMAND_ARGUMENTS if values.get(k) is not None}
    for key in ("checkpoint", "reference"):
        if key in arguments:
            arguments[key] = os.path.abspath(arguments[key])
    progress = not args.quiet and sys.stderr.isatty()
    return Invocation(args.command, config, arguments, progress)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the command line.

    Returns:
        Exit code: 0 success, 2 configuration, 3 data, 4 numerical failure, 5 invariant
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "replay":
            replay(args.manifest, args.out, progress=not args.quiet and sys.stderr.isatty())
        else:
            run_invocation(invocation_from_args(args))
    except TrspError as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
