"""Coupled runs on neighboring datasets and growth-recursion verification.

A neighboring pair is two datasets of equal size that differ at exactly one
index. A coupled run advances a trajectory on each dataset in lockstep,
consuming bit-identical randomness from the training plan: one shared
initialization, one shared batch-index stream, shared perturbation
initializations, and shared attack restarts. Before the first step whose
batch contains the differing index, the two trajectories are the same
float-for-float, so every recorded divergence is exactly zero.

The verifiers check the per-step divergence recursions path-wise against
estimated constants inflated by a configurable factor:

  vanilla   d_t <= (1 + a*beta) d_{t-1} + 2*eps*a*beta     (differing index absent)
  fast      d_t <= (1 + a*beta*(1 + s*eps*psi*beta)) d_{t-1}
  free      [dw; dd]_{i+1} <= H [dw; dd]_i                  per inner iteration,
            with H = [[1+a*beta, a*beta], [ad*eps*psi*beta, 1+ad*eps*psi*beta]]

where a is the weight step size, s the single-step attack size, ad the
perturbation ascent rate, and psi the reciprocal of the smallest observed
perturbation-gradient norm. Steps whose batch contains the differing index
k times gain the source terms (2k/b)*a*L (weights) and (2k/b)*ad*eps*psi*L
(perturbations); batches are drawn with replacement, so k can exceed one.
Path-wise checks on the absent steps are deterministic consequences of
valid constants; the checks on encounter steps additionally rely on the
joint Lipschitz estimate. Deflating the constants must produce violations,
otherwise the verifier is vacuous.

The free verifier also checks the per-outer-step contraction of
d_t + offset against the closed-form factor (r + (1 + a(r+1))^m)/(r+1)
of the m-th power of H, with offset = 2kL/(b*beta) on encounter steps.
All of this is stated for L2 balls; the verifiers refuse L-inf traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, TraceError
from .models import Dataset, LabeledSample, SmoothModel
from .rng import stream
from .threat import AttackConfig, PerturbationSet, pgd_attack_batch
from .trainers import (
    FAST,
    FREE,
    FREE_TRADES,
    STREAM_ATTACK,
    STREAM_DELTA,
    STREAM_INIT,
    TRADES_SEQ,
    VANILLA,
    StepSchedule,
    TrainConfig,
    batch_indices,
    fast_batch_step,
    free_inner_iteration,
    step_size,
    vanilla_batch_step,
)

__all__ = [
    "NeighborPair",
    "StabilityTrace",
    "GrowthReport",
    "make_neighbor",
    "coupled_run",
    "verify_growth_vanilla",
    "verify_growth_free",
    "verify_growth_fast",
    "verify_stepwise_expectation",
    "estimate_uniform_stability",
    "closed_form_contraction",
]


@dataclass(frozen=True)
class NeighborPair:
    """Two datasets of equal size differing at exactly one index."""

    data_a: Dataset
    data_b: Dataset
    differing_index: int
    replaced_sample: LabeledSample


def make_neighbor(dataset: Dataset, index: int, replacement: LabeledSample) -> NeighborPair:
    """The neighbor of ``dataset`` obtained by replacing one sample."""
    if not 0 <= index < dataset.n:
        raise IndexError(f"index {index} out of range for dataset of size {dataset.n}")
    return NeighborPair(
        data_a=dataset,
        data_b=dataset.replace_sample(index, replacement),
        differing_index=index,
        replaced_sample=replacement,
    )


@dataclass
class StabilityTrace:
    """Divergence records from one coupled run.

    ``d_w[t]`` is the weight distance after outer step t (``d_w[0] = 0``);
    ``s_count[t-1]`` is how many times the differing index appeared in the
    step-t batch. Free runs also carry per-inner-iteration weight and mean
    per-sample perturbation distances, shape (steps, m+1) with column 0
    holding the post-initialization state.
    """

    algorithm: str
    seed: int
    n: int
    b: int
    eps: float
    norm: str
    n_steps: int
    m: int
    alpha_w: np.ndarray  # (n_steps,)
    d_w: np.ndarray  # (n_steps + 1,)
    s_count: np.ndarray  # (n_steps,)
    min_grad_delta: np.ndarray  # (n_steps,), min over both runs
    w_final_a: np.ndarray
    w_final_b: np.ndarray
    alpha_delta: float | None = None
    fast_step: float | None = None
    d_w_inner: np.ndarray | None = None  # (n_steps, m + 1)
    d_delta_inner: np.ndarray | None = None  # (n_steps, m + 1)
    schedule: StepSchedule | None = None

    def first_divergence_step(self) -> int | None:
        hits = np.nonzero(self.d_w[1:] > 0.0)[0]
        return int(hits[0] + 1) if hits.size else None

    def to_records(self):
        for t in range(self.n_steps):
            yield {
                "step": t + 1,
                "alpha_w": float(self.alpha_w[t]),
                "d_w": float(self.d_w[t + 1]),
                "d_delta": float(self.d_delta_inner[t, -1]) if self.d_delta_inner is not None else "",
                "s_in_batch": int(self.s_count[t]),
                "min_grad_delta_norm": float(self.min_grad_delta[t]),
            }


def _mean_row_distance(Da: np.ndarray, Db: np.ndarray) -> float:
    return float(np.linalg.norm(Da - Db, axis=1).mean())


def coupled_run(model: SmoothModel, pair: NeighborPair, cfg: TrainConfig, batch_plan: np.ndarray | None = None) -> StabilityTrace:
    """Advance two trajectories in lockstep through one randomness plan.

    ``batch_plan`` (n_steps, b) overrides the batch-index stream, which lets
    tests pin exactly when the differing index is drawn.
    """
    if pair.data_a.n != pair.data_b.n:
        raise DimensionError("neighboring datasets must have equal size")
    lam = cfg.trades_lambda if cfg.algorithm in (FREE_TRADES, TRADES_SEQ) else None
    n, b = pair.data_a.n, cfg.batch_size
    if b > n:
        raise ConfigError(f"batch_size {b} exceeds dataset size {n}")
    m = cfg.free_steps if cfg.algorithm in (FREE, FREE_TRADES) else 1
    n_steps = cfg.total_iterations // m
    if batch_plan is not None:
        batch_plan = np.asarray(batch_plan, dtype=np.int64)
        if batch_plan.shape != (n_steps, b):
            raise ConfigError(f"batch_plan must have shape ({n_steps}, {b})")

    wa = model.init_params(stream(cfg.seed, STREAM_INIT))
    wb = wa.copy()

    alpha_w = np.zeros(n_steps)
    d_w = np.zeros(n_steps + 1)
    s_count = np.zeros(n_steps, dtype=np.int64)
    min_gd = np.full(n_steps, np.inf)
    inner_w = inner_d = None
    if cfg.algorithm in (FREE, FREE_TRADES):
        inner_w = np.zeros((n_steps, m + 1))
        inner_d = np.zeros((n_steps, m + 1))

    for t in range(1, n_steps + 1):
        idx = batch_plan[t - 1] if batch_plan is not None else batch_indices(cfg.seed, t, n, b)
        s_count[t - 1] = int((idx == pair.differing_index).sum())
        Xa, ya = pair.data_a.X[idx], pair.data_a.y[idx]
        Xb, yb = pair.data_b.X[idx], pair.data_b.y[idx]
        aw = step_size(cfg.schedule, t)
        alpha_w[t - 1] = aw

        if cfg.algorithm in (VANILLA, TRADES_SEQ):
            wa, sa = vanilla_batch_step(
                model, Xa, ya, wa, aw, cfg.pset, cfg.inner_attack, stream(cfg.seed, STREAM_ATTACK, t), lam=lam
            )
            wb, sb = vanilla_batch_step(
                model, Xb, yb, wb, aw, cfg.pset, cfg.inner_attack, stream(cfg.seed, STREAM_ATTACK, t), lam=lam
            )
            min_gd[t - 1] = min(sa["min_grad_delta_norm"], sb["min_grad_delta_norm"])
        elif cfg.algorithm == FAST:
            delta0 = cfg.pset.sample_uniform(stream(cfg.seed, STREAM_DELTA, t), size=b)
            wa, sa = fast_batch_step(model, Xa, ya, wa, aw, cfg.resolved_fast_step, cfg.pset, delta0)
            wb, sb = fast_batch_step(model, Xb, yb, wb, aw, cfg.resolved_fast_step, cfg.pset, delta0)
            min_gd[t - 1] = min(sa["min_grad_delta_norm"], sb["min_grad_delta_norm"])
        else:  # free / free-TRADES, per-iteration granularity
            deltas = cfg.pset.sample_uniform(stream(cfg.seed, STREAM_DELTA, t), size=b)
            da, db = deltas.copy(), deltas.copy()
            inner_w[t - 1, 0] = np.linalg.norm(wa - wb)
            inner_d[t - 1, 0] = _mean_row_distance(da, db)
            lo = np.inf
            for i in range(1, m + 1):
                wa, da, sa = free_inner_iteration(model, Xa, ya, wa, da, aw, cfg.resolved_attack_lr, cfg.pset, lam=lam)
                wb, db, sb = free_inner_iteration(model, Xb, yb, wb, db, aw, cfg.resolved_attack_lr, cfg.pset, lam=lam)
                inner_w[t - 1, i] = np.linalg.norm(wa - wb)
                inner_d[t - 1, i] = _mean_row_distance(da, db)
                lo = min(lo, sa["min_grad_delta_norm"], sb["min_grad_delta_norm"])
            min_gd[t - 1] = lo

        d_w[t] = np.linalg.norm(wa - wb)

    return StabilityTrace(
        algorithm=cfg.algorithm,
        seed=cfg.seed,
        n=n,
        b=b,
        eps=cfg.pset.radius,
        norm=cfg.pset.norm,
        n_steps=n_steps,
        m=m,
        alpha_w=alpha_w,
        d_w=d_w,
        s_count=s_count,
        min_grad_delta=min_gd,
        w_final_a=wa,
        w_final_b=wb,
        alpha_delta=cfg.resolved_attack_lr if cfg.algorithm in (FREE, FREE_TRADES) else None,
        fast_step=cfg.resolved_fast_step if cfg.algorithm == FAST else None,
        d_w_inner=inner_w,
        d_delta_inner=inner_d,
        schedule=cfg.schedule,
    )


# ---------------------------------------------------------------------------
# growth verification
# ---------------------------------------------------------------------------

# multiplicative and absolute guards against pure float roundoff in the
# path-wise comparisons; violations must beat both to count
_REL_GUARD = 1e-9
_ABS_GUARD = 1e-15


@dataclass
class GrowthReport:
    """Path-wise recursion check results, split by whether the differing
    index was in the step's batch (absent vs encounter steps)."""

    algorithm: str
    checked_absent: int = 0
    checked_encounter: int = 0
    violations_absent: int = 0
    violations_encounter: int = 0
    max_ratio_absent: float = 0.0
    max_ratio_encounter: float = 0.0
    hypothesis_excluded: int = 0
    stepwise_checked: int = 0
    stepwise_violations: int = 0
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations_absent == 0

    def _tally(self, actual: float, bound: float, encounter: bool):
        ratio = actual / bound if bound > 0 else (0.0 if actual == 0.0 else np.inf)
        violated = actual > bound * (1.0 + _REL_GUARD) + _ABS_GUARD
        if encounter:
            self.checked_encounter += 1
            self.violations_encounter += int(violated)
            self.max_ratio_encounter = max(self.max_ratio_encounter, ratio)
        else:
            self.checked_absent += 1
            self.violations_absent += int(violated)
            self.max_ratio_absent = max(self.max_ratio_absent, ratio)


def _require_l2(trace: StabilityTrace):
    if trace.norm != "l2":
        raise ConfigError("growth recursions are stated for L2 perturbation sets")


def _check_constants(**kwargs):
    for name, value in kwargs.items():
        if value is None or value <= 0:
            raise ConfigError(f"estimated constant {name} must be positive, got {value}")


def verify_growth_vanilla(trace: StabilityTrace, beta_hat: float, L_hat: float, eps: float, schedule: StepSchedule | None = None) -> GrowthReport:
    """Check, for every step, the divergence growth bound with the supplied
    constants; encounter steps use the mixed batch-split bound."""
    _require_l2(trace)
    _check_constants(beta_hat=beta_hat, L_hat=L_hat)
    if trace.algorithm not in (VANILLA, TRADES_SEQ):
        raise TraceError(f"expected a vanilla-style trace, got {trace.algorithm!r}")
    rep = GrowthReport(algorithm=trace.algorithm)
    b = trace.b
    for t in range(1, trace.n_steps + 1):
        a = trace.alpha_w[t - 1]
        prev, cur = trace.d_w[t - 1], trace.d_w[t]
        k = int(trace.s_count[t - 1])
        smooth = (1.0 + a * beta_hat) * prev + 2.0 * eps * a * beta_hat
        if k == 0:
            rep._tally(cur, smooth, encounter=False)
        else:
            bound = ((b - k) / b) * smooth + (k / b) * (prev + 2.0 * a * L_hat)
            rep._tally(cur, bound, encounter=True)
    return rep


def verify_growth_fast(
    trace: StabilityTrace,
    beta_hat: float,
    L_hat: float,
    psi_hat: float,
    eps: float,
    fast_step: float | None = None,
    schedule: StepSchedule | None = None,
) -> GrowthReport:
    """Fast-variant growth check: the expansion factor gains the
    single-step attack term; no additive source off the encounter steps."""
    _require_l2(trace)
    _check_constants(beta_hat=beta_hat, L_hat=L_hat, psi_hat=psi_hat)
    if trace.algorithm != FAST:
        raise TraceError(f"expected a fast trace, got {trace.algorithm!r}")
    s = trace.fast_step if fast_step is None else fast_step
    rep = GrowthReport(algorithm=trace.algorithm)
    inflate = 1.0 + s * eps * psi_hat * beta_hat
    for t in range(1, trace.n_steps + 1):
        a = trace.alpha_w[t - 1]
        prev, cur = trace.d_w[t - 1], trace.d_w[t]
        k = int(trace.s_count[t - 1])
        if trace.min_grad_delta[t - 1] < 1.0 / psi_hat:
            rep.hypothesis_excluded += 1
            continue
        bound = (1.0 + a * beta_hat * inflate) * prev + (2.0 * k / trace.b) * a * L_hat
        rep._tally(cur, bound, encounter=k > 0)
    return rep


def closed_form_contraction(alpha: float, r: float, m: int) -> float:
    """Top-left entry of the m-th power of the 2x2 expansion matrix:
    (r + (1 + alpha*(r+1))^m) / (r + 1)."""
    return (r + (1.0 + alpha * (r + 1.0)) ** m) / (r + 1.0)


def verify_growth_free(
    trace: StabilityTrace,
    beta_hat: float,
    L_hat: float,
    psi_hat: float,
    eps: float,
    alpha_delta: float | None = None,
    schedule: StepSchedule | None = None,
    m: int | None = None,
) -> GrowthReport:
    """Free-variant checks: the per-inner-iteration two-row inequality with
    the expansion matrix, plus the per-outer-step closed-form contraction of
    the offset weight distance. Needs per-iteration granularity."""
    _require_l2(trace)
    _check_constants(beta_hat=beta_hat, L_hat=L_hat, psi_hat=psi_hat)
    if trace.algorithm not in (FREE, FREE_TRADES):
        raise TraceError(f"expected a free trace, got {trace.algorithm!r}")
    if trace.d_w_inner is None or trace.d_delta_inner is None:
        raise TraceError("free growth verification needs per-iteration records")
    ad = trace.alpha_delta if alpha_delta is None else alpha_delta
    m = trace.m if m is None else m
    rep = GrowthReport(algorithm=trace.algorithm)
    row_d = ad * eps * psi_hat * beta_hat

    for t in range(1, trace.n_steps + 1):
        if trace.min_grad_delta[t - 1] < 1.0 / psi_hat:
            rep.hypothesis_excluded += 1
            continue
        a = trace.alpha_w[t - 1]
        k = int(trace.s_count[t - 1])
        enc = k > 0
        src_w = (2.0 * k / trace.b) * a * L_hat
        src_d = (2.0 * k / trace.b) * ad * eps * psi_hat * L_hat
        for i in range(m):
            dw, dd = trace.d_w_inner[t - 1, i], trace.d_delta_inner[t - 1, i]
            bound_w = (1.0 + a * beta_hat) * dw + a * beta_hat * dd + src_w
            bound_d = row_d * dw + (1.0 + row_d) * dd + src_d
            rep._tally(trace.d_w_inner[t - 1, i + 1], bound_w, encounter=enc)
            rep._tally(trace.d_delta_inner[t - 1, i + 1], bound_d, encounter=enc)

        # per-outer-step contraction of the offset weight distance, using
        # the sharp closed-form factor (below any c/t relaxation of it)
        alpha = a * beta_hat
        r = ad * eps * psi_hat / a
        factor = closed_form_contraction(alpha, r, m)
        off = (2.0 * k / trace.b) * L_hat / beta_hat
        lhs = trace.d_w[t] + off
        rhs = factor * (trace.d_w[t - 1] + off)
        rep.stepwise_checked += 1
        if lhs > rhs * (1.0 + _REL_GUARD) + _ABS_GUARD:
            rep.stepwise_violations += 1
    return rep


def verify_stepwise_expectation(
    traces,
    beta_hat: float,
    L_hat: float,
    psi_hat: float,
    eps: float,
) -> dict:
    """Monte-Carlo check of the expectation-level per-step contraction for a
    family of free coupled runs sharing (n, b, m, schedule):

        mean[d_t] + 2L/(n beta) <= factor_t * (mean[d_{t-1}] + 2L/(n beta))

    with factor_t = 1 + (beta c / t) (1 + a beta + ad eps psi beta)^(m-1),
    allowing three standard errors of the step-t mean on the left side.
    Requires the c/(m t) schedule the factor is derived for.
    """
    traces = list(traces)
    if not traces:
        raise TraceError("need at least one trace")
    t0 = traces[0]
    sched = t0.schedule
    if sched is None or sched.kind != "vanishing_c_over_mt":
        raise ConfigError("the expectation-level factor needs the c/(m t) schedule")
    _check_constants(beta_hat=beta_hat, L_hat=L_hat, psi_hat=psi_hat)
    D = np.stack([tr.d_w for tr in traces])  # (runs, n_steps + 1)
    runs = D.shape[0]
    off = 2.0 * L_hat / (t0.n * beta_hat)
    checked = violations = 0
    for t in range(1, t0.n_steps + 1):
        a = t0.alpha_w[t - 1]
        row = 1.0 + a * beta_hat + t0.alpha_delta * eps * psi_hat * beta_hat
        factor = 1.0 + (beta_hat * sched.c / t) * row ** (t0.m - 1)
        lhs = D[:, t].mean() + off
        rhs = factor * (D[:, t - 1].mean() + off)
        se = D[:, t].std(ddof=1) / np.sqrt(runs) if runs > 1 else 0.0
        checked += 1
        if lhs - 3.0 * se > rhs * (1.0 + _REL_GUARD) + _ABS_GUARD:
            violations += 1
    return {"checked": checked, "violations": violations, "runs": runs}


def estimate_uniform_stability(
    w: np.ndarray,
    w_prime: np.ndarray,
    model: SmoothModel,
    eval_points,
    pset: PerturbationSet,
    attack: AttackConfig,
    rng: np.random.Generator,
) -> float:
    """Finite-sample lower estimate of the worst-case attacked-loss change:
    the max over eval points of |attacked loss at w - attacked loss at w'|,
    with both weights attacked under identical randomness. Pair it with the
    Lipschitz cap lipschitz_w * ||w - w'|| for an upper estimate."""
    pts = list(eval_points)
    if not pts:
        raise DimensionError("eval_points must be nonempty")
    X = np.stack([p.x for p in pts])
    y = np.array([p.y for p in pts], dtype=np.int64)
    base = int(rng.integers(2**63))
    ra, rb = stream(base, 0), stream(base, 0)  # identical attack randomness
    Da, _, _ = pgd_attack_batch(model, w, X, y, pset, attack, ra)
    Db, _, _ = pgd_attack_batch(model, w_prime, X, y, pset, attack, rb)
    la = model.loss_batch(w, X, y, Da)
    lb = model.loss_batch(w_prime, X, y, Db)
    return float(np.abs(la - lb).max())
