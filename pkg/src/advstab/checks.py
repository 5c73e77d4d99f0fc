"""Self-contained verification suites behind the `check` command.

Each check re-derives its expected values through an independent route
(closed forms, separately coded formulas, brute force over random feasible
points) and compares the library against them at fixed tolerances. The
acceptance tests reuse these where the criteria coincide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import (
    BoundInputs,
    ConstantEstimates,
    ExpansivityMatrix,
    bound_fast,
    bound_free,
    bound_vanilla,
    expansivity_power,
    lambda_fast,
    lambda_free,
    lambda_vanilla,
)
from .models import make_model, finite_diff_report
from .rng import stream
from .threat import PerturbationSet, project_onto_set, projgrad_identity_check

__all__ = ["CheckResult", "run_all_checks"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def check_gradients(trials: int = 100) -> CheckResult:
    worst = 0.0
    rng = stream(101, 0)
    for kind, dims in (("softmax_linear", {}), ("mlp", {"hidden_dim": 8}), ("scalar_logistic", {})):
        model = make_model(kind, input_dim=10, class_count=3 if kind == "softmax_linear" else 2, **dims)
        worst = max(worst, finite_diff_report(model, trials, 1e-5, rng))
    return CheckResult(
        "gradient finite-difference agreement",
        worst < 1e-6,
        f"worst relative error {worst:.3e} over {trials} configs per model (tol 1e-6)",
    )


def check_projections(n_grads: int = 1000, n_points: int = 100_000) -> CheckResult:
    rng = stream(102, 0)
    dim = 8
    worst = 0.0
    for norm in ("l2", "linf"):
        pset = PerturbationSet(norm, radius=0.7, dim=dim)
        G = 3.0 * rng.standard_normal((n_grads, dim))
        for g in G:
            p = project_onto_set(g, pset)
            if norm == "l2":
                nrm = np.linalg.norm(g)
                ref = g if nrm <= pset.radius else g * (pset.radius / nrm)
            else:
                ref = np.clip(g, -pset.radius, pset.radius)
            worst = max(worst, float(np.abs(p - ref).max()))
        # projection optimality against random feasible points
        pool = pset.sample_uniform(rng, size=n_points)
        for g in G[:100]:
            p = project_onto_set(g, pset)
            dproj = np.linalg.norm(g - p)
            dbest = np.linalg.norm(pool - g, axis=1).min()
            if dproj > dbest + 1e-12:
                return CheckResult("projection operators", False, f"{norm}: beaten by a random point")
    return CheckResult(
        "projection operators",
        worst <= 1e-12,
        f"closed-form max deviation {worst:.3e} (tol 1e-12); optimality vs {n_points} random points holds",
    )


def check_projgrad_identity(n: int = 1000) -> CheckResult:
    rng = stream(103, 0)
    bad = 0
    for _ in range(n):
        dim = int(rng.integers(2, 10))
        g = rng.standard_normal(dim) * float(rng.uniform(0.2, 5.0))
        eps = float(rng.uniform(0.05, 3.0))
        psi = float(1.0 / (np.linalg.norm(g) * rng.uniform(0.05, 1.0)))
        pset = PerturbationSet("l2", radius=eps, dim=dim)
        if projgrad_identity_check(g, pset, psi) is not True:
            bad += 1
    return CheckResult(
        "extreme-projection rescaling identity",
        bad == 0,
        f"{bad}/{n} failures at tol 1e-10",
    )


def check_expansivity(n: int = 1000) -> CheckResult:
    rng = stream(104, 0)
    worst_eig = 0.0
    worst_power = 0.0
    for _ in range(n):
        alpha = float(rng.uniform(0.0, 10.0)) + 1e-9
        r = float(rng.uniform(0.0, 10.0)) + 1e-9
        m = int(rng.integers(0, 11))
        mat = ExpansivityMatrix(alpha=alpha, r=r)
        eig = np.sort(np.linalg.eigvals(mat.entries).real)
        expect = np.sort(np.array(mat.expected_eigenvalues()))
        worst_eig = max(worst_eig, float(np.max(np.abs(eig - expect) / np.maximum(1.0, np.abs(expect)))))
        power, closed = expansivity_power(mat, m)
        worst_power = max(worst_power, abs(power[0, 0] - closed) / max(1.0, abs(closed)))
    ok = worst_eig <= 1e-10 and worst_power <= 1e-12
    return CheckResult(
        "expansion-matrix algebra",
        ok,
        f"eigenvalue err {worst_eig:.3e} (tol 1e-10), power-vs-closed-form err {worst_power:.3e} (tol 1e-12)",
    )


def check_lambda_reductions() -> CheckResult:
    beta, c = 1.7, 0.3
    ok = lambda_free(beta, c, 1, 0.4, 0.5, 10.0) == beta * c
    ok &= lambda_fast(beta, c, 0.0, 0.5, 10.0) == beta * c
    grid = [0.1, 0.2, 0.4]
    for name, probe in (
        ("alpha_delta", lambda v: lambda_free(beta, c, 4, v, 0.5, 10.0)),
        ("eps", lambda v: lambda_free(beta, c, 4, 0.3, v, 10.0)),
        ("psi", lambda v: lambda_free(beta, c, 4, 0.3, 0.5, 10.0 * v)),
    ):
        vals = [probe(v) for v in grid]
        ok &= vals[0] < vals[1] < vals[2]
    return CheckResult("stability-exponent reductions and monotonicity", bool(ok), "exact reductions; 3-point monotone probes")


def _independent_bounds(n, b, T, m, c, eps, L, Lw, beta, psi, ad, s):
    """The three bound expressions, coded separately for cross-checking."""
    lv = beta * c
    van = (b / n) * (1 + 1 / lv) * ((2 * Lw * c / b) * (eps * beta * n + L)) ** (1 / (lv + 1)) * T ** (lv / (lv + 1))
    lf = beta * c * (1 + beta * c / m + ad * eps * psi * beta) ** (m - 1)
    fre = (b / n) * (1 + 1 / lf) * ((2 * L * Lw / (b * beta)) * lf) ** (1 / (lf + 1)) * (T / m) ** (lf / (lf + 1))
    lfa = beta * c * (1 + s * eps * psi * beta)
    fas = (b / n) * (1 + 1 / lfa) * (2 * c * L * Lw / b) ** (1 / (lfa + 1)) * T ** (lfa / (lfa + 1))
    return van, fre, fas


def check_bound_formulas(points: int = 20) -> CheckResult:
    rng = stream(105, 0)
    worst = 0.0
    for _ in range(points):
        n = int(rng.integers(10, 5000))
        b = int(rng.integers(1, 10))
        m = int(rng.integers(1, 6))
        T = m * int(rng.integers(1, 400))
        c = float(rng.uniform(0.01, 2.0))
        eps = float(rng.uniform(0.01, 1.0))
        L = float(rng.uniform(0.5, 5.0))
        Lw = L * float(rng.uniform(0.3, 1.0))
        beta = float(rng.uniform(0.1, 4.0))
        psi = float(rng.uniform(1.0, 50.0))
        ad = float(rng.uniform(0.0, 1.0))
        s = float(rng.uniform(0.0, 1.0))
        consts = ConstantEstimates(lipschitz=L, lipschitz_w=Lw, beta=beta, psi=psi)
        inputs = BoundInputs(n=n, b=b, T=T, m=m, c=c, eps=eps, constants=consts, alpha_delta=ad, fast_step=s)
        van, fre, fas = _independent_bounds(n, b, T, m, c, eps, L, Lw, beta, psi, ad, s)
        for got, want in ((bound_vanilla(inputs).bound_value, van), (bound_free(inputs).bound_value, fre), (bound_fast(inputs).bound_value, fas)):
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    # hand-checked corner points
    ones = ConstantEstimates(lipschitz=1.0, lipschitz_w=1.0, beta=1.0, psi=1.0)
    p1 = BoundInputs(n=1, b=1, T=1, m=1, c=1.0, eps=1.0, constants=ones)
    hand = abs(bound_vanilla(p1).bound_value - 4.0)
    p2 = BoundInputs(n=1, b=1, T=1, m=1, c=1.0, eps=1.0, constants=ones, alpha_delta=0.0)
    hand = max(hand, abs(bound_free(p2).bound_value - 2.0 * np.sqrt(2.0)))
    p3 = BoundInputs(n=1, b=1, T=1, m=1, c=1.0, eps=1.0, constants=ones, fast_step=0.0)
    hand = max(hand, abs(bound_fast(p3).bound_value - 2.0 * np.sqrt(2.0)))
    ok = worst <= 1e-12 and hand <= 1e-12
    return CheckResult(
        "closed-form bounds vs independent arithmetic",
        ok,
        f"max rel err {worst:.3e} over {points} random points (tol 1e-12); corner points off by {hand:.3e}",
    )


def check_lambda_values() -> CheckResult:
    got = lambda_free(1.0, 1.0, 4, 0.1, 0.5, 10.0)
    ok = abs(got - 5.359375) <= 1e-12
    got2 = lambda_fast(2.0, 0.3, 0.5, 0.4, 5.0)
    ok &= abs(got2 - 1.8) <= 1e-12
    ok &= lambda_vanilla(2.0, 0.5) == 1.0
    return CheckResult("stability-exponent spot values", bool(ok), f"free 5.359375 vs {got!r}, fast 1.8 vs {got2!r}")


def run_all_checks() -> list[CheckResult]:
    return [
        check_gradients(),
        check_projections(),
        check_projgrad_identity(),
        check_expansivity(),
        check_lambda_reductions(),
        check_lambda_values(),
        check_bound_formulas(),
    ]
