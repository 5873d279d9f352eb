import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hessian_lab.domain import (BAND, EXTERIOR, INTERIOR, DomainError, DomainSpec, GridFunction,
                                apply_closure, build_grid, check_strong_m_pseudoconvexity,
                                load_custom_rho)


def lattice_disc_count(half):
    # integer pairs strictly inside the circle of radius `half` lattice steps
    r = np.arange(-half, half + 1)
    i, j = np.meshgrid(r, r, indexing='ij')
    return int(np.sum(i ** 2 + j ** 2 < half ** 2))


def test_disc_interior_count_matches_lattice_oracle():
    grid = build_grid(DomainSpec('ball', 1, 1), 129)
    assert grid.h == pytest.approx(2 / 128)
    assert len(grid.interior) == lattice_disc_count(64)
    assert len(grid.interior) == pytest.approx(math.pi * 64 ** 2, rel=0.01)


def test_polydisc_interior_is_product_of_disc_interiors():
    grid = build_grid(DomainSpec('polydisc', 2, 1, radii=(1, 1)), 17)
    assert len(grid.interior) == lattice_disc_count(8) ** 2


def test_degenerate_resolution():
    with pytest.raises(DomainError, match='degenerate grid'):
        build_grid(DomainSpec('ball', 1, 1), 3)


@pytest.mark.parametrize('kw', [dict(kind='ball', n=1, m=2), dict(kind='ball', n=1, m=1, radius=-1),
                                dict(kind='polydisc', n=2, m=1, radii=(1, 0)), dict(kind='torus', n=1, m=1),
                                dict(kind='custom', n=1, m=1)])
def test_invalid_specs(kw):
    with pytest.raises(DomainError):
        DomainSpec(**kw)


def test_node_classes_and_diameter(disc):
    cls = disc.node_class
    assert np.all(cls[disc.interior] == INTERIOR)
    assert np.all(cls[disc.band] == BAND)
    # band nodes are exactly the missing stencil neighbours of interior nodes
    offs = disc.stencil_offsets()
    nb = np.unique((disc.interior[:, None] + offs[None, :]).ravel())
    assert set(nb) - set(disc.interior) == set(disc.band)
    pts = disc.points(np.concatenate([disc.interior, disc.band]))
    assert disc.delta0 == pytest.approx(np.linalg.norm(pts.max(0) - pts.min(0)))
    # band nodes lie within one lattice step of the circle
    r = np.linalg.norm(disc.points(disc.band), axis=1)
    assert np.all(np.abs(r - 1) <= disc.h * math.sqrt(2) + 1e-12)
    assert np.all(cls[(cls != INTERIOR) & (cls != BAND)] == EXTERIOR)


@pytest.mark.parametrize('kind', ['ball', 'polydisc'])
def test_refinement_keeps_interior(kind):
    spec = DomainSpec(kind, 1, 1)
    coarse = build_grid(spec, 17)
    fine = build_grid(spec, 33)
    pc = coarse.points(coarse.interior)
    idx = np.rint((pc - fine.origin) / fine.h).astype(int)
    flat = np.ravel_multi_index(idx.T, fine.shape)
    assert np.all(fine.node_class[flat] == INTERIOR)
    assert np.all(spec.rho_values(pc) < 0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(0.5, 2), st.floats(-1, 1))
def test_closure_reproduces_quadratics(a, b, c, d, e):
    grid = build_grid(DomainSpec('ball', 1, 1), 33)

    def q(z):
        return a * z.real ** 2 + b * z.real * z.imag + c * z.imag ** 2 + d * z.real + e

    vals = np.full(grid.size, np.nan)
    pts = grid.points()
    z = pts[:, 0] + 1j * pts[:, 1]
    vals[grid.interior] = q(z[grid.interior])
    apply_closure(grid, vals, lambda w: q(w[:, 0]))
    # quadratic extrapolation along an axis is exact for quadratics
    assert np.allclose(vals[grid.band], q(z[grid.band]), atol=1e-9)


def test_closure_ignores_nan_outside_interior(disc):
    vals = np.full(disc.size, np.nan)
    vals[disc.interior] = 0.0
    apply_closure(disc, vals, 0.0)
    assert np.all(np.isfinite(vals[disc.band]))


def test_pseudoconvexity_ball():
    for n, m in [(1, 1), (2, 1), (2, 2)]:
        spec = DomainSpec('ball', n, m)
        rep = check_strong_m_pseudoconvexity(spec, build_grid(spec, 13))
        assert rep['ok']
        assert rep['worst_value'] == pytest.approx(math.comb(n, rep['worst_k']))


def test_pseudoconvexity_polydisc_fails():
    spec = DomainSpec('polydisc', 2, 2)
    assert not check_strong_m_pseudoconvexity(spec, build_grid(spec, 13))['ok']


def test_pseudoconvexity_flat_rho_fails():
    spec = DomainSpec('custom', 2, 2, rho=lambda p: p[:, 0] - 1.0, bounds=[[-1, 1]] * 4)
    rep = check_strong_m_pseudoconvexity(spec, build_grid(spec, 9))
    assert not rep['ok']
    assert rep['worst_value'] == pytest.approx(0.0, abs=1e-9)


def test_interior_rho_negative():
    for spec in (DomainSpec('ball', 2, 1, center=(0.3j, -0.2), radius=0.7),
                 DomainSpec('polydisc', 2, 1, radii=(1.0, 0.5))):
        grid = build_grid(spec, 15)
        assert np.all(spec.rho_values(grid.points(grid.interior)) < 0)


def test_custom_rho_from_csv(tmp_path):
    path = tmp_path / 'rho.csv'
    xs = np.linspace(-1.2, 1.2, 49)
    with open(path, 'w') as fh:
        fh.write('x1,y1,rho\n')
        for x, y in itertools.product(xs, xs):
            fh.write('%.17g,%.17g,%.17g\n' % (x, y, x * x + y * y - 1))
    spec = load_custom_rho(path, 1, 1)
    grid = build_grid(spec, 33)
    area = len(grid.interior) * grid.h ** 2
    assert area == pytest.approx(math.pi, rel=0.05)


def test_gridfunction_arithmetic_and_csv(disc, tmp_path):
    u = GridFunction.constant(disc, 2.0)
    v = 3 * u - u
    assert np.allclose(v.interior_values(), 4.0)
    assert v.check_finite()
    v.to_csv(tmp_path / 'v.csv')
    lines = (tmp_path / 'v.csv').read_text().splitlines()
    assert lines[0] == 'x1,y1,value'
    assert len(lines) == 1 + len(disc.interior) + len(disc.band)
    with pytest.raises(DomainError):
        GridFunction(disc, np.zeros(3))
