import math

import numpy as np
import pytest

from hessian_lab.domain import DomainSpec, GridFunction, build_grid
from hessian_lab.hessian_core import energy_I_m, hessian_measure, is_m_subharmonic, sigma_k, complex_hessian
from hessian_lab.potential_theory import (ball_capacity_m1, ball_mask, boundary_mass_check, capacity,
                                          capacity_smooth, moc_functional_check, msh_envelope,
                                          relative_extremal)
from hessian_lab.regularize import ModulusOfContinuity

from conftest import norm2, sample


def obstacle(grid, fn):
    return sample(grid, fn)


def test_envelope_of_msh_obstacle_is_itself(disc):
    ob = obstacle(disc, lambda z: norm2(z) - 1)
    res = msh_envelope(ob, 1, 0.0)
    assert res.converged
    assert np.allclose(res.envelope.values[disc.interior], ob.values[disc.interior], atol=1e-9)
    assert res.contact_set[disc.interior].all()


def test_envelope_below_positive_constant_is_zero(disc):
    res = msh_envelope(GridFunction.constant(disc, 1.0), 1, 0.0)
    assert np.allclose(res.envelope.values[disc.interior], 0.0, atol=1e-9)
    assert not res.contact_set.any()


def test_envelope_of_cone(ball2):
    a = np.array([0.2, 0.0])

    def cone(z):
        return np.minimum(0.0, np.sqrt(norm2(z - a)) - 0.5)

    ob = obstacle(ball2, cone)
    res = msh_envelope(ob, 2, 0.0)
    env = res.envelope
    idx = ball2.interior
    assert res.converged
    assert np.all(env.values[idx] <= ob.values[idx] + 1e-9)
    assert is_m_subharmonic(env, 2, tol=1e-6)['ok']
    # |z - a| is plurisubharmonic, so the vertex stays in contact; the
    # minimum with 0 is lowered along the kink
    vertex = idx[np.argmin(ob.values[idx])]
    assert res.contact_set[vertex]
    assert np.max(ob.values[idx] - env.values[idx]) > 0.01
    # maximal off the contact set
    free = ~res.contact_set[idx]
    dens = hessian_measure(env, 2).ac_density[idx]
    assert np.max(dens[free]) < 1e-6


def test_envelope_idempotent_and_monotone(disc):
    lo = obstacle(disc, lambda z: np.minimum(0.0, np.abs(z[:, 0] - 0.3) - 0.4))
    hi = obstacle(disc, lambda z: np.minimum(0.0, np.abs(z[:, 0] - 0.3) - 0.3))
    e_lo = msh_envelope(lo, 1, 0.0).envelope
    e_hi = msh_envelope(hi, 1, 0.0).envelope
    idx = disc.interior
    assert np.all(e_lo.values[idx] <= e_hi.values[idx] + 1e-9)
    again = msh_envelope(e_lo, 1, 0.0).envelope
    assert np.allclose(again.values[idx], e_lo.values[idx], atol=1e-9)


def test_relative_extremal_whole_interior(disc):
    K = np.zeros(disc.size, dtype=bool)
    K[disc.interior] = True
    res = relative_extremal(disc, K, 1)
    assert np.allclose(res.envelope.values[disc.interior], -1.0)


def _log_extremal(grid, r):
    z = np.linalg.norm(grid.points(grid.interior), axis=1)
    return np.maximum(-1.0, np.log(np.maximum(z, 1e-300)) / math.log(1 / r))


def test_relative_extremal_disc_closed_form(disc129):
    r = 0.3
    rep = capacity_smooth(disc129, lambda p: np.sum(p ** 2, axis=1) - r * r, 1)
    assert np.max(np.abs(rep.extremal.values[disc129.interior] - _log_extremal(disc129, r))) < 1e-2
    K = ball_mask(disc129, (0j,), r)
    u = relative_extremal(disc129, K, 1).envelope
    vals = u.values[disc129.interior]
    assert np.all((vals >= -1 - 1e-12) & (vals <= 1e-12))
    assert np.allclose(u.values[K], -1.0)


def test_node_mask_extremal_first_order():
    # a node mask only resolves the compact to within h
    errs = []
    for res in (65, 129):
        grid = build_grid(DomainSpec('ball', 1, 1), res)
        u = relative_extremal(grid, ball_mask(grid, (0j,), 0.3), 1).envelope
        errs.append(np.max(np.abs(u.values[grid.interior] - _log_extremal(grid, 0.3))))
    assert 1.4 < errs[0] / errs[1] < 2.8
    assert errs[1] < 0.03


def test_empty_K(disc):
    with pytest.raises(ValueError, match='K empty'):
        relative_extremal(disc, np.zeros(disc.size, dtype=bool), 1)


def test_disc_capacity_closed_form(disc129):
    for r in (0.2, 0.4):
        rep = capacity_smooth(disc129, lambda p: np.sum(p ** 2, axis=1) - r * r, 1)
        assert rep.capacity == pytest.approx(ball_capacity_m1(1, r), rel=0.1)


def test_capacity_monotone_in_K(disc):
    caps = [capacity(disc, ball_mask(disc, (0j,), r), 1).capacity for r in (0.2, 0.3, 0.5)]
    assert caps[0] <= caps[1] * (1 + 1e-9) <= caps[2] * (1 + 1e-9)


def test_capacity_monotone_in_domain():
    small = build_grid(DomainSpec('ball', 1, 1, radius=1.0), 65)
    big = build_grid(DomainSpec('ball', 1, 1, radius=2.0), 129)
    # same lattice spacing, same compact
    assert small.h == pytest.approx(big.h)
    c_small = capacity(small, ball_mask(small, (0j,), 0.3), 1).capacity
    c_big = capacity(big, ball_mask(big, (0j,), 0.3), 1).capacity
    assert c_big < c_small


def test_boundary_mass_examples(disc):
    phi = sample(disc, lambda z: norm2(z) - 1)
    K = ball_mask(disc, (0j,), 0.5)
    r = boundary_mass_check(phi, K, 1)
    assert r['holds']
    assert r['lhs'] == pytest.approx(np.sum(K) * disc.h ** 2)
    assert r['osc_K'] == pytest.approx(0.25, abs=2 * disc.h)
    r = boundary_mass_check(GridFunction.constant(disc, 0.0), K, 1, cap=1.0)
    assert r['lhs'] == 0 and r['holds']


def test_boundary_mass_holder_near_boundary(disc):
    alpha = 0.5
    phi = sample(disc, lambda z: -np.maximum(1 - norm2(z), 0) ** alpha)
    kappa = ModulusOfContinuity.power(alpha, L=4, scale=2.0)
    rhs = []
    for inner in (0.9, 0.8):
        pts = disc.points(disc.interior)
        rad = np.linalg.norm(pts, axis=1)
        K = np.zeros(disc.size, dtype=bool)
        K[disc.interior[(rad >= inner) & (rad <= inner + 0.05)]] = True
        r = boundary_mass_check(phi, K, 1, kappa=kappa)
        assert r['holds']
        rhs.append(r['rhs_kappa'] / r['capacity'])
    # kappa(delta_K)^m shrinks as K approaches the boundary
    assert rhs[0] < rhs[1]


def test_moc_functional_examples(disc):
    phi = sample(disc, lambda z: norm2(z) - 1)
    u = sample(disc, lambda z: norm2(z) - 1)
    r = moc_functional_check(phi, u, u, 1, R=10.0)
    assert r['lhs'] == 0 and r['rhs'] == 0 and r['holds']
    with pytest.raises(ValueError, match='energy exceeds R'):
        moc_functional_check(phi, u, 5 * u, 1, R=10.0)


def test_moc_functional_sweep(disc):
    phi = sample(disc, lambda z: norm2(z) - 1)
    u = sample(disc, lambda z: norm2(z) - 1)
    v = sample(disc, lambda z: 0.8 * (norm2(z) - 1))
    kappa = ModulusOfContinuity.power(1.0, L=4)
    runs = [moc_functional_check(phi, u, GridFunction(disc, np.maximum(v.values - e, u.values)),
                                 1, R=10.0, kappa=kappa) for e in (0.01, 0.05, 0.1, 0.2)]
    lhs = [r['lhs'] for r in runs]
    assert np.all(np.diff(lhs) <= 0) and lhs[0] > 0
    C = max(r['C'] for r in runs)
    assert all(r['lhs'] <= C * r['shape'] * (1 + 1e-12) for r in runs)


def test_moc_functional_on_solutions(disc):
    from hessian_lab.solver import solve_dirichlet
    phi = sample(disc, lambda z: norm2(z) - 1)
    u = solve_dirichlet(1.0, 0.0, 1, grid=disc).u
    v = solve_dirichlet(1.2, 0.0, 1, grid=disc).u
    r = moc_functional_check(phi, u, v, 1, R=10.0)
    assert np.isfinite(r['lhs']) and r['lhs'] > 0 and r['holds']
