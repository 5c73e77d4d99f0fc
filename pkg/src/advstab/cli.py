"""Command-line front end.

Subcommands: gap, vs-n, transfer, free-trades, stability, bounds, check.
A JSON config file supplies the experiment fields; flags override the
common ones. Outputs land in --out as report.json / trace.csv /
plotdata_*.csv. Exit code 0 on success; failures print a machine-readable
error object to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .bounds import BoundInputs, RegionSampler, estimate_constants, estimate_psi, bound_fast, bound_free, bound_vanilla
from .checks import run_all_checks
from .experiments import (
    ExperimentConfig,
    run_free_trades_comparison,
    run_gap_experiment,
    run_transfer_experiment,
    run_vs_n_experiment,
)
from .reportio import emit_report
from .rng import stream
from .stability import coupled_run, make_neighbor
from .synth import SyntheticSpec, draw_replacement, make_synthetic
from .threat import AttackConfig, PerturbationSet
from .trainers import FAST, FREE, FREE_TRADES, TRADES_SEQ, VANILLA, StepSchedule, TrainConfig, train

_DEFAULT_CONFIG = {
    "model": {"kind": "mlp", "hidden_dim": 16, "class_count": 2, "bounded_loss": False},
    "data": {"kind": "two_gaussians", "n_train": 500, "n_test": 1000, "dim": 20, "noise": 1.0, "seed": 1, "separation": 2.0},
    "train": {
        "algorithm": "free",
        "norm": "l2",
        "eps": 0.5,
        "schedule": {"kind": "constant", "c": 0.2, "m": 4},
        "batch_size": 25,
        "total_iterations": 400,
        "seed": 11,
        "attack_lr": None,
        "fast_step": None,
        "free_steps": 4,
        "trades_lambda": None,
        "inner_attack": {"steps": 10, "step_size": None, "restarts": 1, "init": "uniform"},
    },
    "eval": {"attack": {"steps": 10, "step_size": None, "restarts": 1, "init": "uniform"}, "seed": 9999, "checkpoint_every": None},
    "trials": 2,
    "budget_axis": "updates",
}


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _attack_from(d: dict) -> AttackConfig:
    return AttackConfig(
        steps=d.get("steps", 10),
        step_size=d.get("step_size"),
        restarts=d.get("restarts", 1),
        init=d.get("init", "uniform"),
    )


def config_from_dict(raw: dict) -> ExperimentConfig:
    cfg = _merge(_DEFAULT_CONFIG, raw)
    data = SyntheticSpec(**cfg["data"])
    t = cfg["train"]
    pset = PerturbationSet(t["norm"], t["eps"], cfg["data"]["dim"])
    sched = StepSchedule(**t["schedule"])
    train_cfg = TrainConfig(
        algorithm=t["algorithm"],
        pset=pset,
        schedule=sched,
        batch_size=t["batch_size"],
        total_iterations=t["total_iterations"],
        seed=t["seed"],
        attack_lr=t.get("attack_lr"),
        fast_step=t.get("fast_step"),
        free_steps=t.get("free_steps", 4),
        trades_lambda=t.get("trades_lambda"),
        inner_attack=_attack_from(t.get("inner_attack", {})),
    )
    ev = cfg["eval"]
    return ExperimentConfig(
        model_kind=cfg["model"]["kind"],
        hidden_dim=cfg["model"].get("hidden_dim", 16),
        class_count=cfg["model"].get("class_count", 2),
        bounded_loss=cfg["model"].get("bounded_loss", False),
        data=data,
        train=train_cfg,
        eval_attack=_attack_from(ev.get("attack", {})),
        eval_seed=ev.get("seed", 9999),
        checkpoint_every=ev.get("checkpoint_every"),
        trials=cfg.get("trials", 1),
        budget_axis=cfg.get("budget_axis", "updates"),
    )


def _load_config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text())
    cfg = config_from_dict(raw)
    train_over = {}
    if args.seed is not None:
        train_over["seed"] = args.seed
    if args.algorithm is not None:
        train_over["algorithm"] = args.algorithm
    if args.iterations is not None:
        train_over["total_iterations"] = args.iterations
    if train_over:
        cfg = replace(cfg, train=replace(cfg.train, **train_over))
    if args.trials is not None:
        cfg = replace(cfg, trials=args.trials)
    return cfg


def _emit(reports, out: str):
    paths = emit_report(reports, "json", out)
    paths += emit_report(reports, "csv", out)
    for p in paths:
        print(p)


def cmd_gap(args) -> int:
    cfg = _load_config(args)
    report = run_gap_experiment(cfg)
    _emit([report], args.out)
    print(f"mean final accuracy gap: {report.mean_final_acc_gap():.4f} +- {report.std_final_acc_gap():.4f}")
    return 0


def cmd_vs_n(args) -> int:
    cfg = _load_config(args)
    n_values = [int(v) for v in args.n_values.split(",")]
    res = run_vs_n_experiment(cfg, n_values)
    _emit(res.reports, args.out)
    payload = {
        "algorithm": res.algorithm,
        "n_values": res.n_values,
        "mean_gaps": [float(g) for g in res.mean_gaps()],
        "loglog_slope": res.slope,
        "loglog_slope_se": res.slope_se,
        "spearman": res.spearman,
        "predicted_rate": res.predicted_rate,
    }
    target = Path(args.out) / "vs_n_summary.json"
    target.write_text(json.dumps(payload, indent=2))
    print(target)
    print(json.dumps(payload, indent=2))
    return 0


def cmd_transfer(args) -> int:
    cfg_a = _load_config(args)
    raw_b = json.loads(Path(args.config_b).read_text()) if args.config_b else {}
    cfg_b = config_from_dict(_merge(json.loads(Path(args.config).read_text()) if args.config else {}, raw_b))
    res = run_transfer_experiment(cfg_a, cfg_b)
    payload = {
        "accuracy": {f"{s}->{t}": v for (s, t), v in res.accuracy.items()},
        "clean_accuracy": res.clean_accuracy,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "report.json"
    target.write_text(json.dumps(payload, indent=2))
    print(target)
    print(json.dumps(payload, indent=2))
    return 0


def cmd_free_trades(args) -> int:
    cfg = _load_config(args)
    lam = cfg.train.trades_lambda if cfg.train.trades_lambda is not None else 1.0 / 6.0
    seq = replace(cfg, train=replace(cfg.train, algorithm=TRADES_SEQ, trades_lambda=lam, free_steps=1))
    sim = replace(cfg, train=replace(cfg.train, algorithm=FREE_TRADES, trades_lambda=lam))
    res = run_free_trades_comparison(seq, sim)
    _emit([res.sequential, res.simultaneous], args.out)
    print(f"gap(sequential) - gap(simultaneous) = {res.gap_difference():.4f}")
    return 0


def cmd_stability(args) -> int:
    cfg = _load_config(args)
    train_ds, _ = make_synthetic(cfg.data)
    model = cfg.build_model()
    tc = cfg.effective_train_config()
    pairs = args.pairs
    rows = []
    for k in range(pairs):
        replacement = draw_replacement(cfg.data, k)
        pair = make_neighbor(train_ds, k % train_ds.n, replacement)
        trace = coupled_run(model, pair, tc.with_seed(tc.seed + k))
        rows.append(
            {
                "pair": k,
                "final_d_w": float(trace.d_w[-1]),
                "first_divergence_step": trace.first_divergence_step(),
                "encounters": int((trace.s_count > 0).sum()),
                "min_grad_delta_norm": float(trace.min_grad_delta.min()),
            }
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "report.json"
    target.write_text(json.dumps({"algorithm": tc.algorithm, "pairs": rows}, indent=2))
    print(target)
    print(json.dumps(rows[: min(3, len(rows))], indent=2))
    return 0


def cmd_bounds(args) -> int:
    cfg = _load_config(args)
    train_ds, test_ds = make_synthetic(cfg.data)
    model = cfg.build_model()
    tc = cfg.effective_train_config()
    w, trace = train(model, train_ds, tc)
    sampler = RegionSampler.from_envelope(trace.w_low, trace.w_high, tc.pset, train_ds)
    psi_est = estimate_psi(trace)
    consts = estimate_constants(model, sampler, stream(cfg.eval_seed, 31), probes=args.probes, psi=psi_est.psi)
    inputs = BoundInputs(
        n=train_ds.n,
        b=tc.batch_size,
        T=tc.total_iterations,
        m=tc.free_steps,
        c=tc.schedule.c,
        eps=tc.pset.radius,
        constants=consts,
        alpha_delta=tc.resolved_attack_lr,
        fast_step=tc.resolved_fast_step,
    )
    payload = {
        "constants": {
            "lipschitz": consts.lipschitz,
            "lipschitz_w": consts.lipschitz_w,
            "beta": consts.beta,
            "psi": consts.psi,
            "psi_degenerate": psi_est.degenerate,
            "region": consts.region,
        },
        "bounds": {
            "vanilla": bound_vanilla(inputs).to_dict(),
            "free": bound_free(inputs).to_dict(),
            "fast": bound_fast(inputs).to_dict(),
        },
        "schedule_vanishing": tc.schedule.vanishing,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "report.json"
    target.write_text(json.dumps(payload, indent=2))
    print(target)
    print(json.dumps(payload["bounds"], indent=2))
    return 0


def cmd_check(args) -> int:
    results = run_all_checks()
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advstab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--algorithm", choices=[VANILLA, FREE, FAST, FREE_TRADES, TRADES_SEQ], default=None)
        p.add_argument("--iterations", type=int, default=None)

    p = sub.add_parser("gap", help="generalization-gap curve for one algorithm")
    common(p)
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("vs-n", help="gap against training-set size at fixed iterations")
    common(p)
    p.add_argument("--n-values", default="250,500,1000,2000")
    p.set_defaults(func=cmd_vs_n)

    p = sub.add_parser("transfer", help="transferred attacks between two independently trained models")
    common(p)
    p.add_argument("--config-b", help="JSON overrides for the second model")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("free-trades", help="sequential vs simultaneous TRADES comparison")
    common(p)
    p.set_defaults(func=cmd_free_trades)

    p = sub.add_parser("stability", help="coupled runs on neighboring datasets")
    common(p)
    p.add_argument("--pairs", type=int, default=5)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("bounds", help="estimate constants and evaluate the closed-form bounds")
    common(p)
    p.add_argument("--probes", type=int, default=1500)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("check", help="run the verification suites")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # machine-readable failure
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
