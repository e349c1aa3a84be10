"""Command-line front door.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
failure (including training divergence). All files land inside the
directory given by --out; nothing else is written.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import emulation, online, selftest
from .config import ConfigError, parse_config
from .datasets import DatasetSpec, generate_dataset
from .experiments import (
    activation_growth_experiment,
    decay_sweep,
    equilibrium_experiment,
    gradient_bias_experiment,
    write_bias_csv,
    write_equilibrium_csv,
    write_growth_csv,
    write_sweep_csv,
)
from .net import DivergenceError, TrainConfig, train, write_metrics_csv
from .tensor import FeatureMap, make_rng

USAGE_EXIT, CONFIG_EXIT, RUNTIME_EXIT = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="onlinenorm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="out", help="output directory for CSV files")
        p.add_argument("--seed", type=int, default=None, help="seed override")

    p = sub.add_parser("train", help="train an MLP per a config file")
    p.add_argument("--config", default=None, help="flat key = value config file")
    common(p)

    p = sub.add_parser("grad-bias", help="gradient bias versus batch size")
    p.add_argument("--samples", type=int, default=2048)
    p.add_argument("--batch-sizes", default="2,4,8,16,32,64")
    p.add_argument("--reps", type=int, default=10)
    common(p)

    p = sub.add_parser("growth", help="activation growth under perturbed statistics")
    p.add_argument("--depth", type=int, default=64)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--sigma-down", type=float, default=0.05)
    p.add_argument("--layer-scaling", action="store_true")
    common(p)

    p = sub.add_parser("equilibrium", help="weight-norm equilibrium of one normalized unit")
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=1e-3)
    p.add_argument("--steps", type=int, default=20000)
    common(p)

    p = sub.add_parser("sweep", help="decay-factor grid sweep")
    p.add_argument("--config", default=None)
    p.add_argument("--alpha-f-grid", default="0.9,0.99,0.999,0.9999")
    p.add_argument("--alpha-b-grid", default="0.9,0.99,0.999,0.9999")
    common(p)

    p = sub.add_parser("emulate-check", help="streaming vs group emulation deviation")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.99)
    p.add_argument("--steps", type=int, default=128)
    common(p)

    sub.add_parser("selftest", help="run the invariant suite")
    return parser


def _load_config(path: str | None, seed: int | None) -> tuple[TrainConfig, DatasetSpec]:
    if path is None:
        cfg, spec = TrainConfig(), DatasetSpec()
    else:
        cfg, spec = parse_config(Path(path).read_text(encoding="utf-8"))
    if seed is not None:
        cfg.seed = seed
    return cfg, spec


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}: {exc}") from None


def _cmd_train(args) -> int:
    cfg, spec = _load_config(args.config, args.seed)
    data = generate_dataset(spec, cfg.seed)
    train_set, val_set = data.split(0.2, cfg.seed)
    records, _ = train(cfg, train_set, val_set)
    out = _outdir(args)
    write_metrics_csv(out / "metrics.csv", records)
    last = records[-1]
    print(f"trained {cfg.epochs} epochs: loss {last.loss:.4f} accuracy {last.accuracy:.4f}")
    return 0


def _cmd_grad_bias(args) -> int:
    seed = args.seed if args.seed is not None else 0
    sizes = [int(v) for v in args.batch_sizes.split(",") if v.strip()]
    report = gradient_bias_experiment(
        seed, dataset_size=args.samples, batch_sizes=sizes, repetitions=args.reps
    )
    out = _outdir(args)
    write_bias_csv(out / "grad_bias.csv", report)
    for b, m, s in report.as_rows():
        print(f"batch {b:5d}: angle {m:7.3f} deg (std {s:.3f})")
    return 0


def _cmd_growth(args) -> int:
    seed = args.seed if args.seed is not None else 0
    profile = activation_growth_experiment(
        depth=args.depth,
        width=args.width,
        noise=args.noise,
        sigma_down=args.sigma_down,
        layer_scaling=args.layer_scaling,
        seed=seed,
    )
    out = _outdir(args)
    write_growth_csv(out / "growth.csv", profile)
    print(
        f"depth {args.depth}: log-RMS slope {profile.log_rms_slope():.4f}, "
        f"max/min RMS {profile.rms.max() / profile.rms.min():.3f}"
    )
    return 0


def _cmd_equilibrium(args) -> int:
    seed = args.seed if args.seed is not None else 0
    result = equilibrium_experiment(args.eta, args.l2, args.steps, seed)
    out = _outdir(args)
    write_equilibrium_csv(out / "equilibrium.csv", result)
    print(f"final-quartile ratio {result.final_quartile_ratio():.4f}")
    return 0


def _cmd_sweep(args) -> int:
    cfg, spec = _load_config(args.config, args.seed)
    data = generate_dataset(spec, cfg.seed)
    result = decay_sweep(_grid(args.alpha_f_grid), _grid(args.alpha_b_grid), cfg, data)
    out = _outdir(args)
    write_sweep_csv(out / "sweep.csv", result)
    finite = result.final_loss[~result.diverged]
    print(f"{result.final_loss.size} cells, best loss {finite.min():.4f}")
    return 0


def _cmd_emulate_check(args) -> int:
    rng = make_rng(args.seed if args.seed is not None else 0)
    steps = args.steps - args.steps % args.n
    xs = rng.uniform(-1.0, 1.0, size=steps)
    mus, vars_ = emulation.emulate_stream(xs, args.n, args.alpha)
    state = online.OnlineNormState(1, alpha_f=args.alpha, alpha_b=0.99)
    worst = 0.0
    for t, x in enumerate(xs):
        online.forward_sample(state, FeatureMap([x]))
        worst = max(worst, abs(state.mu[0] - mus[t]), abs(state.var[0] - vars_[t]))
    print(f"max streaming/batched deviation over {steps} steps: {worst:.3e}")
    return 0 if worst <= 1e-10 else RUNTIME_EXIT


def _cmd_selftest(_args) -> int:
    results = selftest.run_selftest()
    failed = 0
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        suffix = f" ({detail})" if detail else ""
        print(f"{status} {name}{suffix}")
        failed += not ok
    return 0 if failed == 0 else RUNTIME_EXIT


_DISPATCH = {
    "train": _cmd_train,
    "grad-bias": _cmd_grad_bias,
    "growth": _cmd_growth,
    "equilibrium": _cmd_equilibrium,
    "sweep": _cmd_sweep,
    "emulate-check": _cmd_emulate_check,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    try:
        return _DISPATCH[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_EXIT
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_EXIT
    except (DivergenceError, ValueError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
