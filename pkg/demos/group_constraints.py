#!/usr/bin/env python3
"""Constrained group decompositions: projection first, then a KKT polish.

A grouped model splits every object's data into a common part (one pattern
shared by the whole group, scaled per object by a weight p_i) and
individual parts kept orthogonal to the common subspace along the modes of
interest.  The feasible set couples all objects: sum(p) = p_cum with
p >= p_min, plus the per-mode orthogonality.

The demo fits a planted GTLD problem in the two phases that work well
together:

* projected ALS — each sweep ends with an exact projection onto the
  feasible set, so every reported iterate is feasible to machine precision.
  Projection can undo a little of a sweep's progress, so the objective is
  not strictly monotone, but it drops fast from a cold start;
* Lagrangian polish — damped Newton steps on the KKT conditions through a
  bordered (saddle) system, warm-started from the projected fit.  On this
  noiseless plant it drives the KKT residual from ~1e3 to ~1e-6 and the
  objective to zero: the planted constrained solution, recovered exactly.

It closes with the simplex-box projection on a few small vectors, showing
the weight budget and the floor doing their work.

Runs in a few seconds; all randomness is seeded.
"""

import numpy as np

from btdkit.constraints import feasibility, simplex_box_project
from btdkit.io import ExperimentConfig, build_template, synth_generate
from btdkit.model import group_weights, init_random
from btdkit.optim import OptimizerConfig, minimize


def main():
    cfg = ExperimentConfig(
        dims=(8, 7, 4), flavor="gtld", lr_ranks=(1, 1, 1, 1), n_full_modes=2,
        tucker_ranks=(2, 2), n_objects=4, modes_of_interest=(0,),
        constraint="projected",
    )
    target, _ = synth_generate(cfg, seed=3)
    model0 = init_random(build_template(cfg), 3, 0.5)

    print("=== Phase 1 — projected ALS: feasible after every sweep ===")
    warm = minimize(
        target, model0,
        OptimizerConfig(method="als", max_iters=12, grad_tol=0.0, step_tol=0.0),
        constraint="projected",
    )
    for rec in list(warm.trace)[1:]:
        print(f"  sweep {rec.iteration:2d}  objective {rec.objective:12.4f}  "
              f"violation {rec.constraint_violation:.1e}")
    feas = feasibility(warm.model)
    print(f"  weights {np.round(group_weights(warm.model), 4)}  "
          f"sum error {feas['weight_sum_error']:.1e}")

    print()
    print("=== Phase 2 — Lagrangian polish: Newton-KKT from the warm start ===")
    res = minimize(
        target, warm.model,
        OptimizerConfig(method="scg-fn", max_iters=30, grad_tol=1e-9, step_tol=0.0),
        constraint="lagrange",
    )
    records = list(res.trace)
    for rec in records[1::5] + [records[-1]]:
        print(f"  iter {rec.iteration:2d}  objective {rec.objective:12.6f}  "
              f"kkt residual {rec.kkt_residual:.3e}")
    print(f"  final objective {res.objective:.2e} — the planted solution, "
          f"feasible and stationary")

    print()
    print("=== Simplex-box projection (p_cum = 1, p_min = 0.1) ===")
    for y in ([0.9, 0.4, 0.1], [2.0, -1.0, 0.3], [0.0, 0.0, 0.0]):
        p = simplex_box_project(np.array(y), 1.0, 0.1)
        print(f"  {np.round(y, 3)} -> {np.round(p, 4)}  (sum {p.sum():.3f}, min {p.min():.3f})")


if __name__ == "__main__":
    main()
