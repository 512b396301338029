#!/usr/bin/env python3
"""Exact recovery of a planted block-term model, and a method comparison.

Part 1 plants a noiseless five-term (L_r,1) model on a 20x20x20 tensor and
lets ALS run until the relative residual hits 1e-6.  Most random starts
recover the plant in a few dozen sweeps; the occasional start lands in a
bad basin and burns the whole budget (seed 0 below does exactly that),
which is why the acceptance benchmark quantifies a hit *rate* over 50 runs
rather than asserting every run converges.

Part 2 adds a rank-(3,3,3) Tucker term to the plant — the mixed model is
noticeably harder for every method — and compares gradient descent, two CG
flavors, and the dogleg trust region under a matched budget of 20 accepted
iterations.  The trust-region method reaches the lowest objective by a wide
margin, which is the qualitative ordering the optimizer suite is built
around.

Runs in ~1 min; all randomness is seeded.
"""

import numpy as np

from btdkit.io import ExperimentConfig, build_template, synth_generate
from btdkit.model import init_random
from btdkit.optim import OptimizerConfig, minimize


def fit(config, seed, **opt_kwargs):
    target, _ = synth_generate(config, seed=seed)
    model0 = init_random(build_template(config), seed, config.init_scale)
    return minimize(target, model0, OptimizerConfig(**opt_kwargs))


def main():
    print("=== Part 1: ALS on a pure (L_r,1) plant (noiseless) ===")
    pure = ExperimentConfig(
        dims=(20, 20, 20), flavor="tld", lr_ranks=(3, 3, 3, 3, 3),
        n_full_modes=2, tucker_ranks=(),
    )
    for seed in range(4):
        res = fit(pure, seed, method="als", max_iters=500, grad_tol=0.0,
                  step_tol=0.0, residual_tol=1e-6, record_gradient=False)
        print(f"  seed {seed}: {res.n_iters:4d} sweeps, "
              f"relative residual {res.relative_residual:.2e} ({res.status})")

    print()
    print("=== Part 2: mixed (L_r,1)+Tucker plant, matched-budget comparison ===")
    mixed = ExperimentConfig(
        dims=(20, 20, 20), flavor="tld", lr_ranks=(3, 3, 3, 3, 3),
        n_full_modes=2, tucker_ranks=((3, 3, 3),),
    )
    methods = ("gd", "cg-pr", "cg-hs", "tr-dl")
    print(f"  final objective, median over 8 seeds, 20 iterations each")
    for method in methods:
        finals = [
            fit(mixed, seed, method=method, max_iters=20, inner_max_iters=12,
                grad_tol=0.0, step_tol=0.0, record_gradient=False).objective
            for seed in range(8)
        ]
        print(f"  {method:6s} median {np.median(finals):.3e}   "
              f"(min {min(finals):.2e}, max {max(finals):.2e})")


if __name__ == "__main__":
    main()
