"""Constant estimation, stability exponents, and the closed-form
generalization bounds.

The three bounds share one code path: if the expected coupled divergence
satisfies

    E[d_t] <= (1 + nu/t) E[d_{t-1}] + (nu / (n t)) xi

over n_steps steps, the expected generalization gap is at most

    (b/n) (1 + 1/nu) (lipschitz_w * xi * nu / b)^(1/(nu+1)) * n_steps^(nu/(nu+1)).

The per-algorithm bounds are parameterizations of this formula:

    vanilla  nu = beta*c                        xi = 2*eps*n + 2*L/beta     n_steps = T
    free     nu = beta*c*(1 + beta*c/m
                   + ad*eps*psi*beta)^(m-1)     xi = 2*L/beta               n_steps = T/m
    fast     nu = beta*c*(1 + s*eps*psi*beta)   xi = 2*L/(beta*(1+s*eps*psi*beta))   n_steps = T

All constants are estimated local quantities over an explicitly sampled
region (weights inside a visited envelope plus margin, perturbations inside
the ball, inputs from a data pool); a tanh network has no useful global
constants, so every estimate is reported together with its region.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DimensionError
from .models import Dataset, SmoothModel
from .threat import PerturbationSet

__all__ = [
    "ConstantEstimates",
    "RegionSampler",
    "TrajectorySampler",
    "BoundInputs",
    "BoundReport",
    "GrowthRecursion",
    "ExpansivityMatrix",
    "estimate_lipschitz",
    "estimate_smoothness",
    "estimate_psi",
    "PsiEstimate",
    "estimate_constants",
    "lambda_vanilla",
    "lambda_free",
    "lambda_fast",
    "recursion_bound",
    "bound_vanilla",
    "bound_free",
    "bound_fast",
    "expansivity_power",
    "free_vs_vanilla_rate_ratio",
]


@dataclass(frozen=True)
class RegionSampler:
    """Draws probe points (w, delta, x, y): weights uniform in a box,
    perturbations uniform in the ball, samples uniform from a pool."""

    w_low: np.ndarray
    w_high: np.ndarray
    pset: PerturbationSet
    X: np.ndarray
    y: np.ndarray

    @classmethod
    def from_envelope(cls, w_low, w_high, pset, dataset: Dataset, margin: float = 0.1):
        """Box around a visited weight envelope, widened by ``margin`` on
        each side (absolute units)."""
        lo = np.asarray(w_low, dtype=np.float64) - margin
        hi = np.asarray(w_high, dtype=np.float64) + margin
        return cls(w_low=lo, w_high=hi, pset=pset, X=dataset.X, y=dataset.y)

    def draw(self, rng: np.random.Generator):
        w = rng.uniform(self.w_low, self.w_high)
        delta = self.pset.sample_uniform(rng)
        i = int(rng.integers(self.X.shape[0]))
        return w, delta, self.X[i], int(self.y[i])

    def describe(self) -> dict:
        return {
            "region": "box",
            "w_box_low_min": float(self.w_low.min()),
            "w_box_high_max": float(self.w_high.max()),
            "delta_norm": self.pset.norm,
            "delta_radius": self.pset.radius,
            "pool_size": int(self.X.shape[0]),
        }


@dataclass(frozen=True)
class TrajectorySampler:
    """Probes anchored to visited weights: a random stored trajectory point
    plus Gaussian jitter of scale ``jitter``. Tighter than a coordinate box
    around the same trajectory, whose corners are never visited; constants
    estimated here track what the coupled runs actually encounter."""

    w_points: np.ndarray  # (k, param_dim)
    jitter: float
    pset: PerturbationSet
    X: np.ndarray
    y: np.ndarray

    @classmethod
    def from_traces(cls, traces, pset, dataset: Dataset, jitter: float = 0.05):
        pts = []
        for tr in traces:
            if getattr(tr, "snapshots", None):
                pts.extend(tr.snapshots.values())
            pts.append(tr.w_final)
        return cls(w_points=np.stack(pts), jitter=jitter, pset=pset, X=dataset.X, y=dataset.y)

    def draw(self, rng: np.random.Generator):
        i = int(rng.integers(self.w_points.shape[0]))
        w = self.w_points[i] + self.jitter * rng.standard_normal(self.w_points.shape[1])
        delta = self.pset.sample_uniform(rng)
        j = int(rng.integers(self.X.shape[0]))
        return w, delta, self.X[j], int(self.y[j])

    def describe(self) -> dict:
        return {
            "region": "trajectory",
            "anchor_points": int(self.w_points.shape[0]),
            "jitter": self.jitter,
            "delta_norm": self.pset.norm,
            "delta_radius": self.pset.radius,
            "pool_size": int(self.X.shape[0]),
        }


@dataclass(frozen=True)
class ConstantEstimates:
    """Empirical local constants: joint and weight-only Lipschitz constants
    of the loss, smoothness of its joint gradient, and the reciprocal of
    the smallest observed perturbation-gradient norm."""

    lipschitz: float
    lipschitz_w: float
    beta: float
    psi: float
    probes: int = 0
    region: dict | None = None

    def __post_init__(self):
        if self.lipschitz_w > self.lipschitz * (1 + 1e-12):
            raise ValueError("the joint Lipschitz constant must dominate the weight-only one")
        if self.beta <= 0 or self.psi <= 0:
            raise ValueError("beta and psi must be positive")

    def inflated(self, factor: float) -> "ConstantEstimates":
        return replace(
            self,
            lipschitz=self.lipschitz * factor,
            lipschitz_w=self.lipschitz_w * factor,
            beta=self.beta * factor,
            psi=self.psi * factor,
        )


def _joint_grad(model: SmoothModel, w, delta, x, y):
    _, gw, gd = model.batch_loss_and_grads(w, x[None, :], [y], np.asarray(delta)[None, :])
    return gw, gd[0]


def estimate_lipschitz(model: SmoothModel, sampler, probes: int, rng: np.random.Generator):
    """Max joint gradient norm (the local joint Lipschitz constant) and max
    weight-gradient norm over random probe points. Returns (L, L_w)."""
    if probes < 2:
        raise ConfigError("need at least 2 probes")
    L = Lw = 0.0
    for _ in range(int(probes)):
        w, delta, x, y = sampler.draw(rng)
        gw, gd = _joint_grad(model, w, delta, x, y)
        nw = float(np.linalg.norm(gw))
        L = max(L, float(np.sqrt(nw * nw + np.dot(gd, gd))))
        Lw = max(Lw, nw)
    return L, Lw


def estimate_smoothness(
    model: SmoothModel,
    sampler,
    probes: int,
    pair_scale: float,
    rng: np.random.Generator,
    power_iters: int = 3,
):
    """Max ratio of joint-gradient change to joint displacement over probe
    pairs at distance ``pair_scale`` in (w, delta) space.

    Each probe starts from a random direction and then power-iterates the
    gradient-difference map: the next direction is the normalized gradient
    change, which climbs toward the probe point's top curvature direction.
    Every iterate is itself a pair difference quotient at the probe scale,
    so the result stays a max over probe pairs, just better-aimed ones.
    """
    if probes < 2:
        raise ConfigError("need at least 2 probes")
    if pair_scale <= 0:
        raise ConfigError("pair_scale must be positive")
    beta = 0.0
    for _ in range(int(probes)):
        w, delta, x, y = sampler.draw(rng)
        dim = w.size + delta.size
        gw1, gd1 = _joint_grad(model, w, delta, x, y)
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        for _ in range(1 + int(power_iters)):
            w2 = w + pair_scale * v[: w.size]
            d2 = delta + pair_scale * v[w.size :]
            gw2, gd2 = _joint_grad(model, w2, d2, x, y)
            diff = np.concatenate([gw2 - gw1, gd2 - gd1])
            nrm = float(np.linalg.norm(diff))
            beta = max(beta, nrm / pair_scale)
            if nrm == 0.0:
                break
            v = diff / nrm
    return beta


@dataclass(frozen=True)
class PsiEstimate:
    psi: float
    min_norm: float
    series: np.ndarray
    degenerate: bool
    floor: float


def estimate_psi(trace, floor: float = 1e-6) -> PsiEstimate:
    """Reciprocal of the smallest per-sample perturbation-gradient norm seen
    along a trace, floored to guard exact-zero degeneracies.

    Accepts a TrainTrace, a StabilityTrace, or a plain array of norms; the
    result carries the full min-norm time series and a degeneracy flag set
    when the floor engaged.
    """
    if floor <= 0:
        raise ConfigError("floor must be positive")
    if hasattr(trace, "min_grad_delta_series"):
        series = trace.min_grad_delta_series()
    elif hasattr(trace, "min_grad_delta"):
        series = np.asarray(trace.min_grad_delta, dtype=np.float64)
    else:
        series = np.asarray(trace, dtype=np.float64)
    if series.size == 0:
        raise DimensionError("trace has no recorded perturbation-gradient norms")
    min_norm = float(series.min())
    degenerate = min_norm < floor
    psi = 1.0 / max(min_norm, floor)
    return PsiEstimate(psi=psi, min_norm=min_norm, series=series, degenerate=degenerate, floor=floor)


def estimate_constants(
    model: SmoothModel,
    sampler,
    rng: np.random.Generator,
    probes: int = 2000,
    pair_scale: float = 1e-3,
    psi: float | None = None,
    power_iters: int = 3,
) -> ConstantEstimates:
    """Bundle the three probe-based estimates (psi comes from a trace and is
    passed in, defaulting to 1)."""
    L, Lw = estimate_lipschitz(model, sampler, probes, rng)
    beta = estimate_smoothness(model, sampler, probes, pair_scale, rng, power_iters=power_iters)
    return ConstantEstimates(
        lipschitz=L,
        lipschitz_w=Lw,
        beta=beta,
        psi=1.0 if psi is None else psi,
        probes=int(probes),
        region=sampler.describe(),
    )


# ---------------------------------------------------------------------------
# stability exponents
# ---------------------------------------------------------------------------


def _positive(**kwargs):
    for name, value in kwargs.items():
        if value is None or value <= 0:
            raise ConfigError(f"{name} must be positive, got {value}")


def _nonnegative(**kwargs):
    for name, value in kwargs.items():
        if value is None or value < 0:
            raise ConfigError(f"{name} must be nonnegative, got {value}")


def lambda_vanilla(beta: float, c: float) -> float:
    """beta * c."""
    _positive(beta=beta, c=c)
    return beta * c


def lambda_free(beta: float, c: float, m: int, alpha_delta: float, eps: float, psi: float) -> float:
    """beta*c * (1 + beta*c/m + alpha_delta*eps*psi*beta)^(m-1)."""
    _positive(beta=beta, c=c, psi=psi)
    _nonnegative(alpha_delta=alpha_delta, eps=eps)
    if int(m) < 1:
        raise ConfigError(f"m must be a positive integer, got {m}")
    base = 1.0 + beta * c / m + alpha_delta * eps * psi * beta
    return beta * c * base ** (int(m) - 1)


def lambda_fast(beta: float, c: float, fast_step: float, eps: float, psi: float) -> float:
    """beta*c * (1 + fast_step*eps*psi*beta)."""
    _positive(beta=beta, c=c, psi=psi)
    _nonnegative(fast_step=fast_step, eps=eps)
    return beta * c * (1.0 + fast_step * eps * psi * beta)


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrowthRecursion:
    """Coefficients of the per-step divergence recursion: expansion nu,
    source xi, and the conditioning step t0 used to split off the
    pre-encounter phase."""

    nu: float
    xi: float
    t0: int = 1

    def __post_init__(self):
        if self.nu <= 0 or self.xi < 0 or self.t0 < 1:
            raise ConfigError("need nu > 0, xi >= 0, t0 >= 1")


@dataclass(frozen=True)
class BoundInputs:
    n: int
    b: int
    T: int
    m: int
    c: float
    eps: float
    constants: ConstantEstimates
    alpha_delta: float = 0.0
    fast_step: float = 0.0

    def __post_init__(self):
        _positive(n=self.n, b=self.b, T=self.T, m=self.m, c=self.c)
        _nonnegative(eps=self.eps, alpha_delta=self.alpha_delta, fast_step=self.fast_step)


@dataclass
class BoundReport:
    algorithm: str
    lam: float
    bound_value: float
    nu: float
    xi: float
    n_steps: int
    measured_gap: float | None = None
    ratio: float | None = None
    extras: dict | None = None

    def with_measured_gap(self, gap: float) -> "BoundReport":
        self.measured_gap = float(gap)
        self.ratio = float(self.bound_value / gap) if gap != 0 else float("inf")
        return self

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "lambda": self.lam,
            "bound_value": self.bound_value,
            "nu": self.nu,
            "xi": self.xi,
            "n_steps": self.n_steps,
            "measured_gap": self.measured_gap,
            "ratio": self.ratio,
            "extras": self.extras or {},
        }


def recursion_bound(n: int, b: int, n_steps: int, lipschitz_w: float, rec: GrowthRecursion) -> float:
    """Evaluate the generic recursion-to-bound formula."""
    _positive(n=n, b=b, n_steps=n_steps, lipschitz_w=lipschitz_w)
    nu, xi = rec.nu, rec.xi
    return (b / n) * (1.0 + 1.0 / nu) * (lipschitz_w * xi * nu / b) ** (1.0 / (nu + 1.0)) * n_steps ** (nu / (nu + 1.0))


def bound_vanilla(inputs: BoundInputs) -> BoundReport:
    k = inputs.constants
    lam = lambda_vanilla(k.beta, inputs.c)
    rec = GrowthRecursion(nu=lam, xi=2.0 * inputs.eps * inputs.n + 2.0 * k.lipschitz / k.beta)
    value = recursion_bound(inputs.n, inputs.b, inputs.T, k.lipschitz_w, rec)
    return BoundReport(algorithm="vanilla", lam=lam, bound_value=value, nu=rec.nu, xi=rec.xi, n_steps=inputs.T)


def bound_free(inputs: BoundInputs) -> BoundReport:
    if inputs.T % inputs.m != 0:
        raise ConfigError(f"T={inputs.T} must be divisible by m={inputs.m}")
    k = inputs.constants
    lam = lambda_free(k.beta, inputs.c, inputs.m, inputs.alpha_delta, inputs.eps, k.psi)
    rec = GrowthRecursion(nu=lam, xi=2.0 * k.lipschitz / k.beta)
    n_steps = inputs.T // inputs.m
    value = recursion_bound(inputs.n, inputs.b, n_steps, k.lipschitz_w, rec)
    lam_v = lambda_vanilla(k.beta, inputs.c)
    extras = {
        "vanilla_rate_ratio": free_vs_vanilla_rate_ratio(inputs.T, inputs.n, lam_v, lam),
    }
    return BoundReport(
        algorithm="free", lam=lam, bound_value=value, nu=rec.nu, xi=rec.xi, n_steps=n_steps, extras=extras
    )


def bound_fast(inputs: BoundInputs) -> BoundReport:
    k = inputs.constants
    lam = lambda_fast(k.beta, inputs.c, inputs.fast_step, inputs.eps, k.psi)
    inflate = 1.0 + inputs.fast_step * inputs.eps * k.psi * k.beta
    rec = GrowthRecursion(nu=lam, xi=2.0 * k.lipschitz / (k.beta * inflate))
    value = recursion_bound(inputs.n, inputs.b, inputs.T, k.lipschitz_w, rec)
    return BoundReport(algorithm="fast", lam=lam, bound_value=value, nu=rec.nu, xi=rec.xi, n_steps=inputs.T)


def free_vs_vanilla_rate_ratio(T: int, n: int, lam_vanilla: float, lam_free: float) -> float:
    """Ratio of the free to the vanilla asymptotic rates,
    (T/n)^(1/(lam_vanilla+1)) * T^(-1/(lam_free+1)); below one means the
    free rate wins at these (T, n)."""
    _positive(T=T, n=n, lam_vanilla=lam_vanilla, lam_free=lam_free)
    return (T / n) ** (1.0 / (lam_vanilla + 1.0)) * T ** (-1.0 / (lam_free + 1.0))


# ---------------------------------------------------------------------------
# expansion-matrix algebra
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpansivityMatrix:
    """The 2x2 matrix [[1+alpha, alpha], [alpha*r, 1+alpha*r]] governing the
    joint growth of the weight and perturbation divergences within a free
    step, in the shorthand alpha = a*beta, r = ad*eps*psi/a. Its eigenvalues
    are exactly {1 + alpha*(r+1), 1}."""

    alpha: float
    r: float

    def __post_init__(self):
        if self.alpha < 0 or self.r < 0:
            raise ConfigError("alpha and r must be nonnegative")

    @classmethod
    def from_rates(cls, alpha_w: float, beta: float, alpha_delta: float, eps: float, psi: float):
        _positive(alpha_w=alpha_w, beta=beta)
        _nonnegative(alpha_delta=alpha_delta, eps=eps)
        _positive(psi=psi)
        return cls(alpha=alpha_w * beta, r=alpha_delta * eps * psi / alpha_w)

    @property
    def entries(self) -> np.ndarray:
        a, r = self.alpha, self.r
        return np.array([[1.0 + a, a], [a * r, 1.0 + a * r]])

    def expected_eigenvalues(self) -> tuple[float, float]:
        return (1.0 + self.alpha * (self.r + 1.0), 1.0)


def expansivity_power(matrix: ExpansivityMatrix, m: int):
    """The m-th matrix power by repeated multiplication, paired with the
    eigendecomposition closed form for its top-left entry,
    (r + (1 + alpha*(r+1))^m) / (r+1). Cross-check the two."""
    if m < 0:
        raise ConfigError("m must be >= 0")
    power = np.eye(2)
    E = matrix.entries
    for _ in range(int(m)):
        power = power @ E
    a, r = matrix.alpha, matrix.r
    closed = (r + (1.0 + a * (r + 1.0)) ** m) / (r + 1.0)
    return power, float(closed)
