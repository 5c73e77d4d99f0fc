"""Stability exponents, the closed-form generalization bounds, and how they
compare against measured gaps on a vanishing-step run.

Run:  python3 demos/04_bounds_vs_gap.py
"""

import numpy as np

from advstab import (
    AttackConfig,
    BoundInputs,
    ExperimentConfig,
    PerturbationSet,
    StepSchedule,
    TrainConfig,
    bound_fast,
    bound_free,
    bound_vanilla,
    expansivity_power,
    lambda_fast,
    lambda_free,
    lambda_vanilla,
    run_gap_experiment,
)
from advstab.bounds import ConstantEstimates, ExpansivityMatrix
from advstab.synth import SyntheticSpec

# %% The stability exponents and their reductions --------------------------------

beta, c, psi, eps = 1.0, 1.0, 10.0, 0.5
print("lambda (vanilla)          :", lambda_vanilla(beta, c))
print("lambda (free, m=4, ad=0.1):", lambda_free(beta, c, 4, 0.1, eps, psi))
print("lambda (free, m=1)        :", lambda_free(beta, c, 1, 0.1, eps, psi), " = beta*c, the vanilla exponent")
print("lambda (fast, step=0)     :", lambda_fast(beta, c, 0.0, eps, psi), " = beta*c as well")

# the 2x2 expansion matrix behind the free exponent
mat = ExpansivityMatrix(alpha=0.1, r=2.0)
power, closed = expansivity_power(mat, 4)
print(f"\nexpansion matrix to the 4th power, top-left entry: {power[0, 0]:.12f}")
print(f"eigendecomposition closed form:                    {closed:.12f}")

# %% Bound values at a desk-scale parameter point ---------------------------------

consts = ConstantEstimates(lipschitz=3.0, lipschitz_w=2.0, beta=1.5, psi=20.0)
inputs = BoundInputs(n=500, b=25, T=2000, m=4, c=0.3, eps=0.5, constants=consts, alpha_delta=0.5, fast_step=0.25)
for rep in (bound_vanilla(inputs), bound_free(inputs), bound_fast(inputs)):
    print(f"{rep.algorithm:<8} lambda={rep.lam:9.3f}  bound={rep.bound_value:10.3f}  over {rep.n_steps} steps")
print("(bounds are expected loose at desk scale; the ratio against the")
print(" measured gap is recorded rather than asserted)")

# %% Measured gap with an attached bound ------------------------------------------
# A vanishing-step run so the bound hypotheses apply; the report carries the
# estimated constants, the bound, the measured risk gap, and their ratio.

cfg = ExperimentConfig(
    model_kind="mlp",
    hidden_dim=16,
    data=SyntheticSpec("two_gaussians", n_train=300, n_test=1200, dim=20, noise=1.0, seed=1),
    train=TrainConfig(
        "free",
        PerturbationSet("l2", 0.5, 20),
        StepSchedule("vanishing_c_over_mt", c=2.0, m=4),
        25,
        800,
        11,
        free_steps=4,
        attack_lr=0.5,
    ),
    eval_attack=AttackConfig(steps=10, step_size=0.125),
    eval_seed=4242,
    checkpoint_every=800,
    trials=3,
)
report = run_gap_experiment(cfg)
print(f"\nfree run, 3 trials: accuracy gap {report.mean_final_acc_gap():+.4f} "
      f"+- {report.std_final_acc_gap():.4f}, risk gap {np.mean(report.final_risk_gaps()):+.4f}")
for b in report.bounds:
    print(f"attached bound: lambda={b.lam:.3f} value={b.bound_value:.3f} "
          f"measured risk gap={b.measured_gap:+.4f} ratio={b.ratio:.1f}")
for note in report.notes:
    print("note:", note)
