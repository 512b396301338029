"""Constraint handling: projections, penalty calculus, bordered solves."""

import itertools

import numpy as np
import pytest

from btdkit.constraints import (
    MultiplierState,
    bordered_solve,
    constraint_jacobian,
    constraint_values,
    feasibility,
    orth_project,
    penalty_gradient,
    penalty_value,
    project_model,
    simplex_box_project,
)
from btdkit.errors import ConfigError
from btdkit.model import (
    GroupSpec,
    build_glro,
    build_gtld,
    group_weights,
    init_random,
    layout_of,
    pack,
    unpack,
)
from btdkit.objective import ResidualProblem


# ---------------------------------------------------------------------------
# simplex-with-box projection


STEP = 1e-3


def _line_min_sq(ya, yb, total_units, min_units):
    """Exact min of (a-ya)^2 + (b-yb)^2 over grid pairs a = k*STEP,
    b = (total_units-k)*STEP with both coordinates >= min_units*STEP.

    The distance is a quadratic in k, so its grid minimum sits on one of
    the integer neighbours of the continuous minimizer (or a segment end).
    Vectorized over ya/yb arrays.
    """
    ya = np.atleast_1d(np.asarray(ya, dtype=float))
    yb = np.atleast_1d(np.asarray(yb, dtype=float))
    total_units = np.broadcast_to(np.atleast_1d(total_units), ya.shape)
    lo = float(min_units)
    hi = total_units - min_units
    k_star = ((ya - yb) / STEP + total_units) / 2.0
    best = np.full(ya.shape, np.inf)
    for cand in (np.floor(k_star), np.ceil(k_star), np.full_like(k_star, lo),
                 hi.astype(float)):
        k = np.clip(cand, lo, hi)
        a = k * STEP
        b = (total_units - k) * STEP
        d = (a - ya) ** 2 + (b - yb) ** 2
        best = np.minimum(best, d)
    best[hi < lo] = np.inf  # empty line segment
    return best


def grid_oracle_nearest(y, p_cum, p_min):
    """Exact nearest squared distance from y to the 1e-3 grid points of
    {p : sum(p) = p_cum, p >= p_min}.  Outer coordinates are enumerated;
    the last two are minimized in closed form per outer combination, so
    every grid point of the feasible set is covered."""
    n = y.size
    total_units = int(round(p_cum / STEP))
    min_units = int(round(p_min / STEP))
    if n == 2:
        return float(_line_min_sq(y[0], y[1], total_units, min_units)[0])
    u1 = np.arange(min_units, total_units - (n - 1) * min_units + 1)
    if n == 3:
        line = _line_min_sq(np.full(u1.size, y[1]), np.full(u1.size, y[2]),
                            total_units - u1, min_units)
        return float(np.min((u1 * STEP - y[0]) ** 2 + line))
    assert n == 4
    best = np.inf
    for a in u1:
        u2 = np.arange(min_units, total_units - a - 2 * min_units + 1)
        if u2.size == 0:
            continue
        line = _line_min_sq(np.full(u2.size, y[2]), np.full(u2.size, y[3]),
                            total_units - a - u2, min_units)
        d = (a * STEP - y[0]) ** 2 + (u2 * STEP - y[1]) ** 2 + line
        best = min(best, float(np.min(d)))
    return best


def active_set_oracle(y, p_cum, p_min):
    """Exact projection via KKT active-set enumeration: for each subset of
    coordinates pinned at p_min, shift the rest uniformly to meet the sum,
    keep the feasible candidates, return the closest."""
    n = y.size
    best, best_d = None, np.inf
    for bits in range(2 ** n):
        active = [i for i in range(n) if bits >> i & 1]
        free = [i for i in range(n) if not bits >> i & 1]
        cand = np.full(n, p_min)
        if free:
            budget = p_cum - len(active) * p_min
            shift = (budget - y[free].sum()) / len(free)
            cand[free] = y[free] + shift
            if cand[free].min() < p_min - 1e-12:
                continue
        elif abs(n * p_min - p_cum) > 1e-12:
            continue
        d = float(((cand - y) ** 2).sum())
        if d < best_d:
            best_d, best = d, cand
    return best


@pytest.mark.parametrize("n", [2, 3, 4])
def test_simplex_box_projection_beats_grid(n):
    rng = np.random.default_rng(n)
    p_cum, p_min = 1.0, 0.01
    for _ in range(10):
        y = rng.standard_normal(n)
        p = simplex_box_project(y, p_cum, p_min)
        assert p.sum() == pytest.approx(p_cum, abs=1e-12)
        assert p.min() >= p_min - 1e-12
        d = float(((p - y) ** 2).sum())
        assert d <= grid_oracle_nearest(y, p_cum, p_min) + 1e-12


@pytest.mark.parametrize("n", [2, 3, 4, 7])
def test_simplex_box_matches_active_set_oracle(n):
    rng = np.random.default_rng(20 + n)
    for _ in range(25):
        y = rng.standard_normal(n) * 1.5
        p = simplex_box_project(y, 1.0, 0.01)
        ref = active_set_oracle(y, 1.0, 0.01)
        assert np.allclose(p, ref, atol=1e-10)


def test_simplex_box_documented_example():
    """(2, 0) with sum 1 and floor 0.01 lands on (0.99, 0.01)."""
    p = simplex_box_project(np.array([2.0, 0.0]), 1.0, 0.01)
    assert np.allclose(p, [0.99, 0.01], atol=1e-12)


def test_simplex_box_idempotent():
    rng = np.random.default_rng(5)
    for _ in range(20):
        y = rng.standard_normal(4)
        p = simplex_box_project(y, 4.0, 0.01)
        q = simplex_box_project(p, 4.0, 0.01)
        assert np.allclose(p, q, atol=1e-12)


def test_simplex_box_infeasible_config_rejected():
    with pytest.raises(ConfigError):
        simplex_box_project(np.zeros(3), 1.0, 0.5)


def test_simplex_box_tight_budget_pins_floor():
    p = simplex_box_project(np.array([5.0, -2.0]), 0.2, 0.1)
    assert np.allclose(p, [0.1, 0.1], atol=1e-12)


# ---------------------------------------------------------------------------
# orthogonality projection


def test_orth_project_removes_basis_component():
    rng = np.random.default_rng(6)
    basis = rng.standard_normal((8, 3))
    x = rng.standard_normal((8, 2))
    out = orth_project(x, basis)
    assert np.linalg.norm(basis.T @ out) < 1e-10


def test_orth_project_idempotent_and_self_adjoint():
    rng = np.random.default_rng(7)
    basis = rng.standard_normal((8, 3))
    x = rng.standard_normal((8, 4))
    once = orth_project(x, basis)
    twice = orth_project(once, basis)
    assert np.allclose(once, twice, atol=1e-12)
    u = rng.standard_normal(8)
    v = rng.standard_normal(8)
    lhs = float(orth_project(u, basis) @ v)
    rhs = float(u @ orth_project(v, basis))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_orth_project_handles_rank_deficient_basis():
    rng = np.random.default_rng(8)
    col = rng.standard_normal((6, 1))
    basis = np.hstack([col, col, 2 * col])
    x = rng.standard_normal(6)
    out = orth_project(x, basis)
    assert np.linalg.norm(basis.T @ out) < 1e-10


# ---------------------------------------------------------------------------
# model projection + feasibility report


def grouped_models(seed):
    g = GroupSpec(n_objects=3, flavor="glro", modes_of_interest=(0,))
    glro = init_random(build_glro((6, 5, 3), [1, 1, 1, 2], 2, g), seed)
    g2 = GroupSpec(n_objects=3, flavor="gtld", modes_of_interest=(0,))
    gtld = init_random(build_gtld((6, 5, 3), [1, 1, 1], 2, (2, 2), g2), seed + 1)
    return glro, gtld


def test_project_model_reaches_feasible_set():
    for model in grouped_models(0):
        proj = project_model(model)
        rep = feasibility(proj)
        for viol in rep["orthogonality"].values():
            assert viol <= 1e-10
        assert rep["weight_sum_error"] <= 1e-12
        assert rep["bound_violation"] <= 1e-12


def test_project_model_idempotent():
    for model in grouped_models(1):
        once = project_model(model)
        twice = project_model(once)
        a = pack(once, layout_of(once))
        b = pack(twice, layout_of(twice))
        assert np.allclose(a, b, atol=1e-10)


def test_project_model_leaves_unconstrained_modes_alone():
    glro, _ = grouped_models(2)
    proj = project_model(glro)
    # second mode (not a mode of interest) is untouched on individual terms
    for t_old, t_new in zip(glro.lr_terms, proj.lr_terms):
        assert np.array_equal(t_old.factors[1], t_new.factors[1])


# ---------------------------------------------------------------------------
# constraint values / jacobian / penalty calculus


def test_constraint_values_vanish_on_feasible_model():
    for model in grouped_models(3):
        proj = project_model(model)
        vals = constraint_values(proj)
        m = len(proj.group.modes_of_interest)
        # orthogonality blocks and the sum constraint vanish
        assert np.all(np.abs(vals[:m]) < 1e-18)
        assert abs(vals[m + 1]) < 1e-12
        # inequality values are -(p_i - p_min) <= 0
        assert np.all(vals[m + 2:] <= 1e-12)


def test_theta_gradient_is_ones_block():
    for model in grouped_models(4):
        layout = layout_of(model)
        jac = constraint_jacobian(model, layout)
        m = len(model.group.modes_of_interest)
        theta_col = jac[:, m + 1]
        nz = np.nonzero(theta_col)[0]
        assert len(nz) == model.group.n_objects
        assert np.allclose(theta_col[nz], 1.0)


def test_lambda_column_structurally_zero():
    for model in grouped_models(5):
        layout = layout_of(model)
        jac = constraint_jacobian(model, layout)
        m = len(model.group.modes_of_interest)
        assert np.all(jac[:, m] == 0.0)


def test_penalty_gradient_matches_finite_differences():
    for model in grouped_models(6):
        layout = layout_of(model)
        x = pack(model, layout)
        rng = np.random.default_rng(7)
        tau = np.abs(rng.standard_normal(len(constraint_values(model))))
        state = MultiplierState.from_stack(tau, model.group)
        g = penalty_gradient(model, state, layout)
        for j in rng.choice(x.size, size=10, replace=False):
            h = 1e-6 * (1.0 + abs(x[j]))
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            fp = penalty_value(unpack(xp, model, layout), state)
            fm = penalty_value(unpack(xm, model, layout), state)
            fd = (fp - fm) / (2 * h)
            assert g[j] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_exact_penalty_value_uses_nonnegative_terms():
    for model in grouped_models(8):
        tau = np.ones(len(constraint_values(model)))
        state = MultiplierState.from_stack(tau, model.group)
        relaxed = penalty_value(model, state, form="relaxed")
        exact = penalty_value(model, state, form="exact")
        assert np.isfinite(relaxed) and np.isfinite(exact)


# ---------------------------------------------------------------------------
# bordered KKT solves


def test_bordered_solve_matches_dense_kkt():
    rng = np.random.default_rng(9)
    for trial in range(5):
        n, m = 12, 3
        a = rng.standard_normal((n, n))
        hess = a @ a.T + n * np.eye(n)
        cols = rng.standard_normal((n, m))
        rhs_top = rng.standard_normal(n)
        rhs_bot = rng.standard_normal(m)
        dx, dtau, info = bordered_solve(lambda v: hess @ v, cols, rhs_top, rhs_bot)
        kkt = np.block([[hess, cols], [cols.T, np.zeros((m, m))]])
        ref = np.linalg.solve(kkt, np.concatenate([rhs_top, rhs_bot]))
        sol = np.concatenate([dx, dtau])
        assert np.linalg.norm(sol - ref) / np.linalg.norm(ref) < 1e-8
        assert info["relative_residual"] <= 1e-8
        assert info["converged"]


def test_bordered_solve_empty_border_reduces_to_newton():
    rng = np.random.default_rng(10)
    n = 8
    a = rng.standard_normal((n, n))
    hess = a @ a.T + n * np.eye(n)
    rhs = rng.standard_normal(n)
    dx, dtau, _ = bordered_solve(lambda v: hess @ v, np.zeros((n, 0)), rhs, np.zeros(0))
    assert dtau.size == 0
    assert np.linalg.norm(hess @ dx - rhs) / np.linalg.norm(rhs) < 1e-8


def test_bordered_solve_substitution_residual():
    rng = np.random.default_rng(11)
    n, m = 10, 2
    a = rng.standard_normal((n, n))
    hess = a @ a.T + np.eye(n)
    cols = rng.standard_normal((n, m))
    rhs_top = rng.standard_normal(n)
    rhs_bot = rng.standard_normal(m)
    dx, dtau, _ = bordered_solve(lambda v: hess @ v, cols, rhs_top, rhs_bot)
    top = hess @ dx + cols @ dtau - rhs_top
    bot = cols.T @ dx - rhs_bot
    scale = np.linalg.norm(np.concatenate([rhs_top, rhs_bot]))
    assert np.linalg.norm(np.concatenate([top, bot])) / scale < 1e-8


def test_bordered_solve_regularizes_singular_system():
    n = 6
    hess = np.zeros((n, n))  # singular on purpose
    cols = np.zeros((n, 1))
    rhs_top = np.zeros(n)
    rhs_bot = np.zeros(1)
    dx, dtau, info = bordered_solve(lambda v: hess @ v, cols, rhs_top, rhs_bot)
    assert np.allclose(dx, 0.0)


# ---------------------------------------------------------------------------
# multiplier state


def test_multiplier_state_stack_round_trip():
    g = GroupSpec(n_objects=4, flavor="glro", modes_of_interest=(0, 1))
    state = MultiplierState.zeros(g)
    stack = state.stack()
    assert stack.size == 2 + 1 + 1 + 4
    rng = np.random.default_rng(12)
    vals = rng.standard_normal(stack.size)
    state2 = MultiplierState.from_stack(vals, g)
    assert np.allclose(state2.stack(), vals)
    with pytest.raises(ConfigError):
        MultiplierState.from_stack(vals[:-1], g)
