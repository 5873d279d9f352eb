'''End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict in RESULTS; conftest prints them at the
end of the session. The scenario-backed checks go through cli.run with the
shipped configs, so they exercise the same path as `hessian-lab run`.'''

import time
from pathlib import Path

import numpy as np
import pytest

from hessian_lab import cli
from hessian_lab import estimates as est
from hessian_lab.domain import DomainSpec, build_grid
from hessian_lab.hessian_core import blocki_check, cegrell_check, comparison_check
from hessian_lab.potential_theory import ball_capacity_m1, capacity_smooth
from hessian_lab.regularize import ModulusOfContinuity, mean_value
from hessian_lab.solver import solve_dirichlet

from conftest import norm2, sample
from test_estimates import DINI_LIBRARY, make_kappa

CONFIGS = Path(__file__).resolve().parent.parent / 'configs'
RESULTS = {}


def record(num, ok, detail):
    RESULTS[num] = '%-3s %s  %s' % (num, 'PASS' if ok else 'FAIL', detail)
    print(RESULTS[num])
    return ok


def scenario(name, tmp_path):
    cfg = cli.load_config(CONFIGS / ('%s.json' % name), ['--output', str(tmp_path / name)])
    return cli.run(cfg)


def interior_error(rep, grid, exact):
    z = grid.points(grid.interior)
    zc = z[:, 0::2] + 1j * z[:, 1::2]
    return float(np.max(np.abs(rep.u.values[grid.interior] - exact(zc))))


def test_01_quadratic_oracle():
    worst, slowest = 0.0, 0.0
    for n, res in ((1, 129), (2, 33)):
        for m in range(1, n + 1):
            t0 = time.perf_counter()
            grid = build_grid(DomainSpec('ball', n, m), res)
            rep = solve_dirichlet(1.0, 0.0, m, grid=grid)
            slowest = max(slowest, time.perf_counter() - t0)
            assert rep.converged
            worst = max(worst, interior_error(rep, grid, lambda z: norm2(z) - 1))
    ok = worst <= 5e-3 and slowest < 120
    assert record(1, ok, 'quadratic oracle: max error %.2e, slowest solve %.1fs' % (worst, slowest))


def test_02_maximal_oracle():
    worst = 0.0
    for n, res in ((1, 129), (2, 33)):
        for m in range(1, n + 1):
            grid = build_grid(DomainSpec('ball', n, m), res)
            rep = solve_dirichlet(0.0, lambda z: z[:, 0].real, m, grid=grid)
            worst = max(worst, interior_error(rep, grid, lambda z: z[:, 0].real))
    assert record(2, worst <= 5e-3, 'maximal oracle: max error %.2e' % worst)


def test_03_second_order_convergence():
    errs = []
    for res in (33, 65, 129):
        grid = build_grid(DomainSpec('ball', 1, 1), res)
        rep = solve_dirichlet(lambda z: 4 * norm2(z), 0.0, 1, grid=grid)
        errs.append(interior_error(rep, grid, lambda z: norm2(z) ** 2 - 1))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = all(3 <= r <= 5 for r in ratios)
    assert record(3, ok, 'Richardson ratios %.2f, %.2f' % tuple(ratios))


def test_04_capacity_scaling(tmp_path):
    code, summary = scenario('capacity_scaling', tmp_path)
    slope = summary['key_metrics']['fitted_slope']
    # n = 1 against the closed form for concentric discs
    grid = build_grid(DomainSpec('ball', 1, 1), 129)
    rel = []
    for r in (0.1, 0.2, 0.3):
        c = capacity_smooth(grid, lambda p, r=r: np.sum(p ** 2, axis=1) - r * r, 1).capacity
        rel.append(abs(c / ball_capacity_m1(1, r) - 1))
    ok = code == 0 and 1.8 <= slope <= 2.2 and max(rel) <= 0.1
    assert record(4, ok, 'capacity: n=2 slope %.3f, n=1 max rel error %.3f' % (slope, max(rel)))


def test_05_profile_functions():
    worst_theta = 0.0
    for alpha, nu, m in ((0.5, 0.0, 1), (1.0, 1.0, 2), (0.3, -0.5, 3), (0.8, 0.5, 2)):
        kappa = ModulusOfContinuity.logpower(alpha, nu)
        th = est.theta_m(kappa, m)
        x = np.geomspace(1e-4, kappa.L, 50)
        F = x ** (2 * m) * kappa(x) ** (1 - m)
        worst_theta = max(worst_theta, float(np.max(np.abs(th(F) - x) / x)))
    worst_J = 0.0
    for a, m in ((0.5, 1), (1.0, 2), (0.25, 3)):
        J = est.J_Gamma(est.gamma_from_Gamma(est.MonotoneMap.from_power(1 + a)), m)
        tau = np.geomspace(1e-5, 1, 21)
        exact = (m / a) * tau ** (a / m)
        worst_J = max(worst_J, float(np.max(np.abs(J(tau) / exact - 1))))
    worst_h = 0.0
    for a, m in ((0.5, 1), (1.0, 2), (0.5, 3)):
        h = est.h_Gamma(est.MonotoneMap.from_power(a), m)
        x = np.geomspace(h.x[0] * 10, h.x[-1] / 10, 30)
        fit = est.fit_exponent(x, h(x))['alpha']
        worst_h = max(worst_h, abs(fit / (a / (2 * a * m + m)) - 1))
    ok = worst_theta <= 1e-8 and worst_J <= 1e-6 and worst_h <= 0.01
    assert record(5, ok, 'theta inverse %.1e, J rel %.1e, h exponent rel %.1e'
                  % (worst_theta, worst_J, worst_h))


def test_06_dini_library():
    hits = 0
    for spec, m, eps, conv in DINI_LIBRARY:
        want = 'converged' if conv else 'diverged'
        hits += est.dini_integral(make_kappa(spec), m, eps)['verdict'] == want
    assert record(6, hits == len(DINI_LIBRARY), 'Dini library %d/%d' % (hits, len(DINI_LIBRARY)))


def test_07_iteration_lemma(tmp_path):
    code, summary = scenario('iteration_lemma', tmp_path)
    a = summary['assertions']
    ok = code == 0 and a['vanishes_beyond_S'] and a['rejects_violation']
    assert record(7, ok, 'iteration lemma: %d instances, %s'
                  % (summary['key_metrics'].get('instances', 0), ', '.join(sorted(a))))


def _m_positive(rng, n, m):
    # eigenvalues in the closed cone sigma_1..sigma_m >= 0
    while True:
        lam = rng.uniform(-0.5 if m < n else 0.0, 2.0, n)
        if all(np.sum([np.prod(c) for c in _combos(lam, k)]) >= 0 for k in range(1, m + 1)):
            break
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    return (Q * lam) @ Q.conj().T, lam


def _combos(lam, k):
    from itertools import combinations
    return combinations(lam, k)


def _quad(P, c, a):
    # z* P z + Re <a, z> + c, pluriharmonic part shared by both functions
    return lambda z: np.einsum('ij,jk,ik->i', z.conj(), P, z).real + (z @ a).real + c


def test_08_comparison_and_energy_inequalities():
    rng = np.random.default_rng(2024)
    grids = {m: build_grid(DomainSpec('ball', 2, m), 13) for m in (1, 2)}
    worst, nontrivial = 0.0, 0
    for trial in range(200):
        m = 1 + trial % 2
        grid = grids[m]
        P, lp = _m_positive(rng, 2, m)
        Q, lq = _m_positive(rng, 2, m)
        # a smaller Q makes {u < v} nonempty more often
        shrink = rng.uniform(0.05, 1.0)
        Q, lq = shrink * Q, shrink * lq
        a = rng.normal(size=2) + 1j * rng.normal(size=2)
        cu = rng.uniform(-1, 0)
        # on the sphere u >= cu + min(lp) and v <= cv + max(lq)
        cv = cu + lp.min() - lq.max() - rng.uniform(0, 0.3) * (trial % 3 == 0)
        u = sample(grid, _quad(P, cu, a))
        v = sample(grid, _quad(Q, cv, a))
        r = comparison_check(u, v, m, tol=1e-6)
        assert r['holds'], (trial, r)
        if r['rhs'] > 0:
            nontrivial += 1
            worst = max(worst, r['lhs'] / r['rhs'])
    # radial families vanishing on the sphere
    grid = grids[2]
    fam = [lambda z, c=c: c * (norm2(z) - 1) for c in (0.5, 1.0, 2.0)]
    fam += [lambda z, c=c: c * (norm2(z) ** 2 - 1) for c in (0.5, 1.0)]
    fam += [lambda z: np.exp(norm2(z)) - np.e, lambda z: norm2(z) ** 3 - 1]
    fns = [sample(grid, f) for f in fam]
    ceg = [cegrell_check(u, w, 2) for u in fns for w in fns]
    C = est.fit_uniform_constant([r['lhs'] for r in ceg], [r['rhs'] for r in ceg])
    blk = []
    for psi in fns:
        for i, v in enumerate(fns):
            for w in fns[i + 1:]:
                if np.all(w.values[grid.interior] >= v.values[grid.interior]):
                    blk.append(blocki_check(psi, v, w, 2))
    B = est.fit_uniform_constant([r['lhs'] for r in blk], [r['rhs'] for r in blk])
    ok = (worst <= 1 + 1e-6 and nontrivial >= 50 and all(r['holds'] for r in ceg)
          and all(r['holds'] for r in blk) and C['constant'] <= 1.05 and B['constant'] <= 1.05)
    assert record(8, ok, 'comparison 200 pairs (%d nontrivial, worst ratio %.4f); Cegrell constant %.3f '
                  'over %d; Blocki constant %.3f over %d'
                  % (nontrivial, worst, C['constant'], C['count'], B['constant'], B['count']))


def test_09_holder_theorem(tmp_path):
    code, summary = scenario('theorem2_verify', tmp_path)
    a = summary['assertions']
    assert record(9, code == 0, 'measure-data Hoelder theorem: %s'
                  % ', '.join('%s=%s' % (k, 'ok' if v else 'no') for k, v in sorted(a.items())))


def test_10_modulus_prediction(tmp_path):
    code, summary = scenario('moc_verify', tmp_path)
    a = summary['assertions']
    ok = code == 0 and a.get('quadratic_exponent', False) and a['bound_holds']
    assert record(10, ok, 'modulus prediction: %s'
                  % ', '.join('%s=%s' % (k, 'ok' if v else 'no') for k, v in sorted(a.items())))


@pytest.mark.xfail(strict=True, reason='A is 4 under the Lebesgue-normalized density and the '
                   'mean-value excess of a kink is linear in delta; see README')
def test_11_singular_example(tmp_path):
    code, summary = scenario('example_singular', tmp_path)
    km = summary['key_metrics']
    a = summary['assertions']
    failed = sorted(k for k, v in a.items() if not v)
    assert record(11, code == 0, 'singular example: A=%.3f, kappa_hat(4h)=%.2e, failing %s'
                  % (km['A'], km['kappa_hat_4h'], failed or 'none'))


def test_12_mollification_mean():
    worst = 0.0
    for n, res in ((1, 129), (2, 33)):
        grid = build_grid(DomainSpec('ball', n, 1), res)
        u = sample(grid, norm2)
        for d in grid.delta_ladder():
            mv = mean_value(u, d)
            idx = grid.omega_delta(d)
            idx = idx[np.isfinite(mv.values[idx])]
            excess = mv.values[idx] - u.values[idx]
            worst = max(worst, float(np.max(np.abs(excess / (d * d * n / (n + 1)) - 1))))
    assert record(12, worst <= 0.02, 'mean value of |z|^2: max rel error %.4f' % worst)
