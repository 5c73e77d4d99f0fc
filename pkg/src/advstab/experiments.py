"""Experiment orchestration: generalization-gap curves, gap-vs-n sweeps,
transferred attacks, and the sequential-vs-simultaneous TRADES comparison.

Fairness rules. Every algorithm inside one experiment is evaluated by the
identical attack (same steps, step size, restarts, and evaluation seed),
and trial k of every algorithm shares training seed ``train.seed + k``, so
comparisons are paired. Reports echo the full configuration; re-running a
config reproduces every number bit-exactly.

Compute accounting. A vanilla step with a K-iteration inner attack costs
K + 1 gradient evaluations while a free update costs one; reports carry the
oracle-call counts, and ``budget_axis="oracle_calls"`` rescales the
iteration budget so algorithms match on evaluations instead of updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import BoundInputs, RegionSampler, bound_fast, bound_free, bound_vanilla, estimate_constants, estimate_psi
from .errors import ConfigError, DimensionError
from .models import SmoothModel, make_model
from .rng import stream
from .synth import SyntheticSpec, make_synthetic
from .threat import AttackConfig, empirical_robust_risk, pgd_attack_batch
from .trainers import FAST, FREE, FREE_TRADES, TRADES_SEQ, VANILLA, TrainConfig, train

__all__ = [
    "ExperimentConfig",
    "CheckpointStat",
    "TrialResult",
    "GapReport",
    "VsNReport",
    "TransferReport",
    "PairedGapReport",
    "run_gap_experiment",
    "run_vs_n_experiment",
    "run_transfer_experiment",
    "run_free_trades_comparison",
]

_EVAL_STREAM = 7


@dataclass(frozen=True)
class ExperimentConfig:
    model_kind: str
    data: SyntheticSpec
    train: TrainConfig
    eval_attack: AttackConfig = field(default_factory=AttackConfig)
    eval_seed: int = 9999
    checkpoint_every: int | None = None  # None: one epoch analog, n_train // batch_size
    trials: int = 1
    hidden_dim: int = 16
    class_count: int = 2
    bounded_loss: bool = False
    budget_axis: str = "updates"  # or "oracle_calls"
    attach_bounds: bool = True

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.budget_axis not in ("updates", "oracle_calls"):
            raise ConfigError("budget_axis must be 'updates' or 'oracle_calls'")
        if self.data.dim != self.train.pset.dim:
            raise DimensionError("data dim and perturbation set dim disagree")

    def build_model(self) -> SmoothModel:
        return make_model(
            self.model_kind,
            input_dim=self.data.dim,
            class_count=self.class_count,
            hidden_dim=self.hidden_dim,
            bounded=self.bounded_loss,
        )

    def resolved_checkpoint(self) -> int:
        if self.checkpoint_every is not None:
            if self.checkpoint_every < 1:
                raise ConfigError("checkpoint_every must be >= 1")
            return self.checkpoint_every
        return max(1, self.data.n_train // self.train.batch_size)

    def effective_train_config(self) -> TrainConfig:
        """Apply the budget axis: on the oracle-call axis, iteration budgets
        shrink by each algorithm's per-update gradient cost."""
        cfg = self.train
        if self.budget_axis == "updates":
            return cfg
        per_update = {
            VANILLA: cfg.inner_attack.steps + 1,
            TRADES_SEQ: cfg.inner_attack.steps + 1,
            FAST: 2,
            FREE: 1,
            FREE_TRADES: 1,
        }[cfg.algorithm]
        T = cfg.total_iterations // per_update
        if cfg.algorithm in (FREE, FREE_TRADES):
            T = max(cfg.free_steps, T - (T % cfg.free_steps))
        return replace(cfg, total_iterations=max(1, T))


@dataclass
class CheckpointStat:
    iteration: int
    train_risk: float
    train_acc: float
    test_risk: float
    test_acc: float

    @property
    def acc_gap(self) -> float:
        return self.train_acc - self.test_acc

    @property
    def risk_gap(self) -> float:
        return self.test_risk - self.train_risk

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "train_risk": self.train_risk,
            "train_acc": self.train_acc,
            "test_risk": self.test_risk,
            "test_acc": self.test_acc,
            "acc_gap": self.acc_gap,
            "risk_gap": self.risk_gap,
        }


@dataclass
class TrialResult:
    seed: int
    checkpoints: list
    oracle_calls: int
    forward_calls: int
    min_grad_delta_norm: float
    grad_degenerate: bool

    @property
    def final(self) -> CheckpointStat:
        return self.checkpoints[-1]


@dataclass
class GapReport:
    algorithm: str
    config: dict
    trials: list
    bounds: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def final_acc_gaps(self) -> np.ndarray:
        return np.array([t.final.acc_gap for t in self.trials])

    def final_risk_gaps(self) -> np.ndarray:
        return np.array([t.final.risk_gap for t in self.trials])

    def mean_final_acc_gap(self) -> float:
        return float(self.final_acc_gaps().mean())

    def std_final_acc_gap(self) -> float:
        gaps = self.final_acc_gaps()
        return float(gaps.std(ddof=1)) if gaps.size > 1 else 0.0

    def checkpoint_table(self):
        """(iteration, mean, stderr) rows per metric across trials."""
        iters = [c.iteration for c in self.trials[0].checkpoints]
        out = []
        for j, it in enumerate(iters):
            row = {"iteration": it}
            for name in ("train_risk", "train_acc", "test_risk", "test_acc", "acc_gap", "risk_gap"):
                vals = np.array([getattr(t.checkpoints[j], name) for t in self.trials])
                row[f"{name}_mean"] = float(vals.mean())
                row[f"{name}_stderr"] = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            out.append(row)
        return out


def _config_echo(cfg: ExperimentConfig) -> dict:
    t = cfg.train
    return {
        "model_kind": cfg.model_kind,
        "hidden_dim": cfg.hidden_dim,
        "class_count": cfg.class_count,
        "bounded_loss": cfg.bounded_loss,
        "data": {
            "kind": cfg.data.kind,
            "n_train": cfg.data.n_train,
            "n_test": cfg.data.n_test,
            "dim": cfg.data.dim,
            "noise": cfg.data.noise,
            "seed": cfg.data.seed,
            "separation": cfg.data.separation,
        },
        "train": {
            "algorithm": t.algorithm,
            "norm": t.pset.norm,
            "eps": t.pset.radius,
            "schedule": {"kind": t.schedule.kind, "c": t.schedule.c, "m": t.schedule.m},
            "batch_size": t.batch_size,
            "total_iterations": t.total_iterations,
            "seed": t.seed,
            "attack_lr": t.attack_lr,
            "fast_step": t.fast_step,
            "free_steps": t.free_steps,
            "trades_lambda": t.trades_lambda,
            "inner_attack": {
                "steps": t.inner_attack.steps,
                "step_size": t.inner_attack.step_size,
                "restarts": t.inner_attack.restarts,
                "init": t.inner_attack.init,
            },
        },
        "eval_attack": {
            "steps": cfg.eval_attack.steps,
            "step_size": cfg.eval_attack.step_size,
            "restarts": cfg.eval_attack.restarts,
            "init": cfg.eval_attack.init,
        },
        "eval_seed": cfg.eval_seed,
        "checkpoint_every": cfg.resolved_checkpoint(),
        "trials": cfg.trials,
        "budget_axis": cfg.budget_axis,
    }


def _evaluate(model, w, train_ds, test_ds, pset, attack, eval_seed, iteration) -> CheckpointStat:
    train_risk, train_acc = empirical_robust_risk(model, w, train_ds, pset, attack, stream(eval_seed, _EVAL_STREAM, iteration, 0))
    test_risk, test_acc = empirical_robust_risk(model, w, test_ds, pset, attack, stream(eval_seed, _EVAL_STREAM, iteration, 1))
    return CheckpointStat(iteration=iteration, train_risk=train_risk, train_acc=train_acc, test_risk=test_risk, test_acc=test_acc)


def _checkpoint_marks(tc: TrainConfig, cadence: int) -> list:
    T = tc.total_iterations
    marks = list(range(cadence, T + 1, cadence))
    if not marks or marks[-1] != T:
        marks.append(T)
    if tc.algorithm in (FREE, FREE_TRADES):
        m = tc.free_steps
        marks = sorted({max(m, mk - (mk % m)) for mk in marks})
    return marks


def run_gap_experiment(cfg: ExperimentConfig) -> GapReport:
    """Train with the configured algorithm over the trial seeds, evaluating
    train/test attacked risk and accuracy at every checkpoint with the fixed
    evaluation adversary; attach bound evaluations when the schedule is a
    vanishing one."""
    train_ds, test_ds = make_synthetic(cfg.data)
    model = cfg.build_model()
    tc = cfg.effective_train_config()
    if tc.total_iterations < 1:
        raise ConfigError("gap experiments need at least one training iteration")
    cadence = cfg.resolved_checkpoint()
    report = GapReport(algorithm=tc.algorithm, config=_config_echo(cfg), trials=[])

    for k in range(cfg.trials):
        trial_cfg = tc.with_seed(tc.seed + k)
        marks = _checkpoint_marks(trial_cfg, cadence)
        w, trace = train(model, train_ds, trial_cfg, snapshot_at=marks)
        checkpoints = [
            _evaluate(model, trace.snapshots[mk], train_ds, test_ds, trial_cfg.pset, cfg.eval_attack, cfg.eval_seed, mk)
            for mk in marks
        ]
        min_gd = trace.min_grad_delta_norm()
        report.trials.append(
            TrialResult(
                seed=trial_cfg.seed,
                checkpoints=checkpoints,
                oracle_calls=trace.oracle_calls,
                forward_calls=trace.forward_calls,
                min_grad_delta_norm=min_gd,
                grad_degenerate=not (min_gd > 0.0),
            )
        )

    if cfg.attach_bounds:
        _attach_bounds(cfg, report, model, train_ds)
    return report


def _attach_bounds(cfg: ExperimentConfig, report: GapReport, model, train_ds):
    tc = cfg.effective_train_config()
    if not tc.schedule.vanishing:
        report.notes.append("bounds_not_applicable: constant step schedule")
        return
    if tc.pset.norm != "l2":
        report.notes.append("bounds_not_applicable: bounds are stated for L2 balls")
        return
    try:
        # constants over the envelope of the last trial's run
        w, trace = train(model, train_ds, tc.with_seed(tc.seed))
        sampler = RegionSampler.from_envelope(trace.w_low, trace.w_high, tc.pset, train_ds)
        psi = estimate_psi(trace).psi
        consts = estimate_constants(model, sampler, stream(cfg.eval_seed, 31), probes=800, psi=psi)
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
        builders = {VANILLA: bound_vanilla, TRADES_SEQ: bound_vanilla, FREE: bound_free, FREE_TRADES: bound_free, FAST: bound_fast}
        rep = builders[tc.algorithm](inputs)
        gap = float(np.mean(report.final_risk_gaps()))
        report.bounds.append(rep.with_measured_gap(gap))
        report.notes.append(
            "constants: L={:.6g} L_w={:.6g} beta={:.6g} psi={:.6g}".format(
                consts.lipschitz, consts.lipschitz_w, consts.beta, consts.psi
            )
        )
    except Exception as exc:  # estimation must not sink the experiment
        report.notes.append(f"bounds_attachment_failed: {exc}")


@dataclass
class VsNReport:
    algorithm: str
    n_values: list
    reports: list
    slope: float
    slope_se: float
    spearman: float
    predicted_rate: str = ""

    def mean_gaps(self) -> np.ndarray:
        return np.array([r.mean_final_acc_gap() for r in self.reports])


# predicted asymptotic decay of the gap in n at fixed iteration count; the
# simultaneous variant's exponent is the full -1, the sequential one's sits
# between -1 and 0 depending on its stability exponent
_PREDICTED_RATES = {
    VANILLA: "n^(-lambda/(lambda+1)) with lambda = beta*c (exponent in (-1, 0))",
    TRADES_SEQ: "n^(-lambda/(lambda+1)) with lambda = beta*c (exponent in (-1, 0))",
    FAST: "n^(-1) at fixed iteration count",
    FREE: "n^(-1) at fixed iteration count",
    FREE_TRADES: "n^(-1) at fixed iteration count",
}


def run_vs_n_experiment(cfg: ExperimentConfig, n_values) -> VsNReport:
    """One gap experiment per training-set size at fixed T, plus the fitted
    log-log slope of the mean gap against n and its Spearman correlation."""
    n_values = list(n_values)
    if any(n < cfg.train.batch_size for n in n_values):
        raise ConfigError("every n must be at least the batch size")
    reports = []
    for n in n_values:
        sub = replace(cfg, data=replace(cfg.data, n_train=int(n)))
        reports.append(run_gap_experiment(sub))
    gaps = np.array([r.mean_final_acc_gap() for r in reports])
    slope, slope_se = _loglog_slope(np.array(n_values, dtype=float), gaps)
    spearman = _spearman(np.array(n_values, dtype=float), gaps)
    return VsNReport(
        algorithm=cfg.train.algorithm,
        n_values=n_values,
        reports=reports,
        slope=slope,
        slope_se=slope_se,
        spearman=spearman,
        predicted_rate=_PREDICTED_RATES[cfg.train.algorithm],
    )


def _loglog_slope(n_values: np.ndarray, gaps: np.ndarray):
    if np.any(gaps <= 0):
        return float("nan"), float("nan")
    x = np.log(n_values)
    y = np.log(gaps)
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, res, _, _ = np.linalg.lstsq(A, y, rcond=None)
    dof = len(x) - 2
    if dof > 0 and res.size:
        s2 = float(res[0]) / dof
        cov = s2 * np.linalg.inv(A.T @ A)
        return float(coef[0]), float(np.sqrt(cov[0, 0]))
    return float(coef[0]), float("nan")


def _spearman(x: np.ndarray, y: np.ndarray) -> float:
    from scipy.stats import spearmanr

    if np.unique(x).size < 2 or np.unique(y).size < 2:
        return float("nan")  # rank correlation undefined for constant input
    return float(spearmanr(x, y).statistic)


@dataclass
class TransferReport:
    accuracy: dict  # (source, target) -> robust accuracy, averaged over trials
    per_trial: list
    clean_accuracy: dict

    def entry(self, source: str, target: str) -> float:
        return self.accuracy[(source, target)]


def _require_fair_evaluation(cfg_a: ExperimentConfig, cfg_b: ExperimentConfig):
    if cfg_a.eval_attack != cfg_b.eval_attack or cfg_a.eval_seed != cfg_b.eval_seed:
        raise ConfigError("compared configs must share the evaluation adversary and its seed")


def run_transfer_experiment(cfg_a: ExperimentConfig, cfg_b: ExperimentConfig) -> TransferReport:
    """Train two models independently and evaluate each against attacks
    crafted on itself (white-box) and on the other (transfer), on the shared
    test set. Keys of the 2x2 table are ('a'|'b', 'a'|'b')."""
    if cfg_a.data != cfg_b.data:
        raise ConfigError("transfer experiments must share the data spec")
    if cfg_a.data.dim != cfg_b.data.dim:
        raise DimensionError("models must share the input dimension")
    _require_fair_evaluation(cfg_a, cfg_b)
    train_ds, test_ds = make_synthetic(cfg_a.data)
    model_a, model_b = cfg_a.build_model(), cfg_b.build_model()
    pset = cfg_a.train.pset
    attack = cfg_a.eval_attack
    trials = min(cfg_a.trials, cfg_b.trials)
    per_trial = []
    for k in range(trials):
        wa, _ = train(model_a, train_ds, cfg_a.effective_train_config().with_seed(cfg_a.train.seed + k))
        wb, _ = train(model_b, train_ds, cfg_b.effective_train_config().with_seed(cfg_b.train.seed + k))
        X, y = test_ds.X, test_ds.y
        entry = {}
        deltas = {}
        for tag, model, w in (("a", model_a, wa), ("b", model_b, wb)):
            D, _, _ = pgd_attack_batch(model, w, X, y, pset, attack, stream(cfg_a.eval_seed, _EVAL_STREAM, k, 2))
            deltas[tag] = D
        for src in ("a", "b"):
            for dst, model, w in (("a", model_a, wa), ("b", model_b, wb)):
                preds = model.predict_batch(w, X, deltas[src])
                entry[(src, dst)] = float((preds == y).mean())
        entry[("clean", "a")] = float((model_a.predict_batch(wa, X) == y).mean())
        entry[("clean", "b")] = float((model_b.predict_batch(wb, X) == y).mean())
        per_trial.append(entry)
    accuracy = {
        key: float(np.mean([e[key] for e in per_trial]))
        for key in [("a", "a"), ("a", "b"), ("b", "a"), ("b", "b")]
    }
    clean = {tag: float(np.mean([e[("clean", tag)] for e in per_trial])) for tag in ("a", "b")}
    return TransferReport(accuracy=accuracy, per_trial=per_trial, clean_accuracy=clean)


@dataclass
class PairedGapReport:
    sequential: GapReport
    simultaneous: GapReport

    def gap_difference(self) -> float:
        """Mean final accuracy gap, sequential minus simultaneous."""
        return self.sequential.mean_final_acc_gap() - self.simultaneous.mean_final_acc_gap()


def run_free_trades_comparison(cfg_sequential: ExperimentConfig, cfg_simultaneous: ExperimentConfig) -> PairedGapReport:
    """Sequential TRADES (full inner attack per step) against the
    simultaneous free variant, paired trial for trial."""
    if cfg_sequential.train.algorithm != TRADES_SEQ:
        raise ConfigError("first config must use the sequential TRADES algorithm")
    if cfg_simultaneous.train.algorithm != FREE_TRADES:
        raise ConfigError("second config must use the free TRADES algorithm")
    _require_fair_evaluation(cfg_sequential, cfg_simultaneous)
    return PairedGapReport(
        sequential=run_gap_experiment(cfg_sequential),
        simultaneous=run_gap_experiment(cfg_simultaneous),
    )
