'''m-subharmonic envelopes, relative extremal functions and capacities, and
the mass estimates built on them.'''

import logging
import math
from dataclasses import dataclass

import numpy as np

from .domain import GridFunction, apply_closure, _boundary_values
from .hessian_core import energy_I_m, hessian_measure, integrate
from .solver import _colour_classes, _floor, _linear_solve, _pinned, _system, root_map

log = logging.getLogger(__name__)


@dataclass
class EnvelopeOptions:
    tol: float = 1e-10
    max_iters: int = 100
    method: str = 'newton'

    def __post_init__(self):
        if self.method not in ('newton', 'gauss_seidel'):
            raise ValueError('unknown envelope method %r' % (self.method,))


@dataclass
class EnvelopeResult:
    envelope: GridFunction
    contact_set: np.ndarray
    iterations: int
    residual: float
    tol_contact: float
    converged: bool


@dataclass
class CapacityReport:
    K: np.ndarray
    extremal: GridFunction
    capacity: float
    method: str
    iterations: int
    residual: float

    def summary(self):
        return {'capacity': self.capacity, 'iterations': self.iterations, 'residual': self.residual,
                'method': self.method}


def _prepare(obstacle, boundary):
    grid = obstacle.grid
    if isinstance(boundary, GridFunction):
        grid = _pinned(grid)
    if not np.all(np.isfinite(obstacle.values[grid.interior])):
        raise ValueError('obstacle must be finite on the interior')
    bvals = np.zeros(len(grid.band)) if boundary is None else _boundary_values(grid, boundary)
    ob_band = obstacle.values[grid.closure['band']]
    known = np.isfinite(ob_band)
    if np.any(bvals[known] > ob_band[known] + 1e-12):
        raise ValueError('boundary values exceed the obstacle')
    return grid


def msh_envelope(obstacle, m, boundary=None, opts=None):
    '''Largest discretely m-subharmonic v with v <= obstacle on the interior
    and boundary data `boundary`: the fixed point v = min(obstacle, R0(v)),
    R0 the nodewise root map with zero right-hand side.'''
    opts = EnvelopeOptions() if opts is None else opts
    grid = _prepare(obstacle, boundary)
    idx = grid.interior
    phi = obstacle.values[idx]
    zero = np.zeros(len(idx))
    vals = np.full(grid.size, np.nan)
    vals[idx] = phi
    apply_closure(grid, vals, boundary)
    if opts.method == 'newton':
        vals, it, res = _envelope_newton(grid, vals, phi, zero, m, boundary, opts)
    else:
        vals, it, res = _envelope_sweeps(grid, vals, phi, zero, m, boundary, opts)
    env = GridFunction(grid, vals)
    tol_contact = 10 * opts.tol
    contact = np.zeros(grid.size, dtype=bool)
    contact[idx] = np.abs(vals[idx] - phi) <= max(tol_contact, 10 * _floor(vals, grid) if m > 1 else 0)
    ok = res <= max(opts.tol, _floor(vals, grid))
    if not ok:
        log.warning('envelope not converged: residual %.3e', res)
    return EnvelopeResult(env, contact, it, res, tol_contact, ok)


def _envelope_newton(grid, vals, phi, zero, m, boundary, opts):
    '''Semismooth Newton (policy iteration) on F(v) = v - min(phi, R0(v)).'''
    idx = grid.interior
    cache = {}

    def residual(v):
        R, W = root_map(v, grid, zero, m, want_weights=True)
        active = phi < R
        return v[idx] - np.where(active, phi, R), active, W

    F, active, W = residual(vals)
    norm = float(np.max(np.abs(F)))
    it = 0
    stalled = 0
    while norm > opts.tol and it < opts.max_iters:
        it += 1
        J, pre = _system(grid, W, active)
        du = _linear_solve(J, -F, grid, cache, pre)
        step = 1.0
        l2 = float(np.linalg.norm(F))
        for _ in range(20):
            trial = vals.copy()
            trial[idx] += step * du
            apply_closure(grid, trial, boundary)
            Ft, at, Wt = residual(trial)
            if np.linalg.norm(Ft) <= l2 * (1 - 1e-4 * step) or step < 1e-5:
                break
            step *= 0.5
        vals, F, active, W = trial, Ft, at, Wt
        new = float(np.max(np.abs(F)))
        stalled = stalled + 1 if new > 0.5 * norm else 0
        norm = new
        log.debug('envelope newton %d: |F| = %.3e step %.3g active %d', it, norm, step, active.sum())
        if stalled and norm <= _floor(vals, grid):
            break
        cache.pop('amg', None)
    return vals, it, norm


def _envelope_sweeps(grid, vals, phi, zero, m, boundary, opts):
    '''Pointwise lowering: multicolour Gauss-Seidel v_i <- min(phi_i, R0_i(v)).'''
    pos = np.full(grid.size, -1)
    pos[grid.interior] = np.arange(len(grid.interior))
    colours = _colour_classes(grid)
    it = 0
    norm = np.inf
    while it < opts.max_iters:
        it += 1
        norm = 0.0
        for cls in colours:
            R = root_map(vals, grid, zero[pos[cls]], m, idx=cls)
            new = np.minimum(phi[pos[cls]], R)
            if len(new):
                norm = max(norm, float(np.max(np.abs(new - vals[cls]))))
            vals[cls] = new
            apply_closure(grid, vals, boundary)
        if norm <= opts.tol:
            break
    return vals, it, norm


def _mask(grid, K):
    K = np.asarray(K)
    mask = np.zeros(grid.size, dtype=bool)
    if K.dtype == bool:
        mask[:] = K
    else:
        mask[K] = True
    inner = np.zeros(grid.size, dtype=bool)
    inner[grid.interior] = True
    return mask & inner


def ball_mask(grid, center, radius):
    '''Interior nodes of the closed ball B(center, radius), center in C^n.'''
    c = np.empty(grid.dim)
    c[0::2] = np.real(center)
    c[1::2] = np.imag(center)
    mask = np.zeros(grid.size, dtype=bool)
    pts = grid.points(grid.interior)
    mask[grid.interior] = np.sum((pts - c) ** 2, axis=1) <= radius ** 2 * (1 + 1e-12)
    return mask


def relative_extremal(grid, K, m, opts=None):
    K = _mask(grid, K)
    if not K.any():
        raise ValueError('K empty')
    ob = np.zeros(grid.size)
    ob[K] = -1.0
    obstacle = GridFunction(grid, np.where(grid.defined_mask(), ob, np.nan))
    res = msh_envelope(obstacle, m, 0.0, opts)
    v = res.envelope.values
    v[grid.interior] = np.clip(v[grid.interior], -1.0, 0.0)
    return res


def capacity(grid, K, m, opts=None):
    res = relative_extremal(grid, K, m, opts)
    cap = energy_I_m(res.envelope, m)
    method = 'envelope-' + (opts.method if opts else 'newton')
    return CapacityReport(_mask(grid, K), res.envelope, cap, method, res.iterations, res.residual)


def capacity_smooth(grid, rho_K, m, opts=None):
    """Capacity of K = {rho_K <= 0} with the boundary of K treated like the
    outer boundary: the maximal function of Omega minus K with data -1 on
    the boundary of K and 0 on the boundary of Omega is computed with the
    boundary closure on both sides, extended by -1 over K, and its energy is
    evaluated on the lattice of Omega.  Removes the O(h) bias of representing
    K by lattice nodes."""
    from .domain import DomainSpec, build_grid
    from .solver import SolveOptions, solve_dirichlet
    spec = grid.spec

    def rho(points):
        return np.maximum(spec.rho_values(points), -rho_K(points))

    hole = DomainSpec('custom', spec.n, spec.m, center=spec.center, rho=rho, bounds=spec.box())
    sub = build_grid(hole, grid.resolution)
    if sub.shape != grid.shape or not np.allclose(sub.origin, grid.origin):
        raise ValueError('lattices differ')

    def data(z):
        pts = np.empty((len(z), 2 * z.shape[1]))
        pts[:, 0::2], pts[:, 1::2] = z.real, z.imag
        return np.where(np.abs(rho_K(pts)) < np.abs(spec.rho_values(pts)), -1.0, 0.0)

    rep = solve_dirichlet(0.0, data, m, opts or SolveOptions(), grid=sub)
    vals = np.full(grid.size, np.nan)
    pts = grid.points(grid.interior)
    inK = rho_K(pts) <= 0
    vals[grid.interior] = np.where(inK, -1.0, 0.0)
    from_sub = np.zeros(grid.size, dtype=bool)
    from_sub[sub.interior] = True
    take = grid.interior[from_sub[grid.interior]]
    vals[take] = np.clip(rep.u.values[take], -1.0, 0.0)
    apply_closure(grid, vals, 0.0)
    u = GridFunction(grid, vals)
    K = np.zeros(grid.size, dtype=bool)
    K[grid.interior[inK]] = True
    return CapacityReport(K, u, energy_I_m(u, m), 'cut-cell', rep.iterations, rep.update_norm)


def ball_capacity_m1(n, r, R=1.0):
    '''c_1(B_r, B_R) for concentric balls, densities relative to Lebesgue
    measure (the Newtonian capacity in R^{2n} scaled by 1/(4n)).'''
    if n == 1:
        return math.pi / (2 * math.log(R / r))
    return math.pi ** n * (n - 1) / math.factorial(n) / (r ** (2 - 2 * n) - R ** (2 - 2 * n))


def _cell_mass_on(grid, dens_masses, mask):
    return float(np.sum(dens_masses[mask]))


def boundary_mass_check(phi, K, m, cap=None, kappa=None, tol=1e-9, opts=None):
    '''int_K (dd^c phi)^m ^ beta^(n-m) against osc^m c_m(K), and against
    kappa(delta_K)^m c_m(K) when phi vanishes on the boundary.

    The oscillation used is sup_Omega phi - inf_K phi: the comparison
    argument needs phi - sup <= 0 on all of Omega.  osc over K alone is
    reported as osc_K.'''
    grid = phi.grid
    K = _mask(grid, K)
    hm = hessian_measure(phi, m)
    lhs = _cell_mass_on(grid, hm.cell_masses(), K)
    if cap is None:
        cap = capacity(grid, K, m, opts).capacity
    vals = phi.values
    defined = np.isfinite(vals)
    osc = float(np.max(vals[defined]) - np.min(vals[K]))
    osc_K = float(np.max(vals[K]) - np.min(vals[K]))
    rhs = osc ** m * cap
    out = {'lhs': lhs, 'rhs': rhs, 'osc': osc, 'osc_K': osc_K, 'capacity': cap,
           'warning': hm.warning, 'holds': bool(lhs <= rhs * (1 + tol) + tol)}
    band = grid.band
    if kappa is not None:
        delta_K = float(np.max(grid.depth[K]))
        rhs2 = float(kappa(np.array([delta_K]))[0]) ** m * cap
        out.update({'delta_K': delta_K, 'rhs_kappa': rhs2})
        if np.all(np.abs(vals[band]) <= 10 * grid.h):
            out['holds'] = out['holds'] and bool(lhs <= rhs2 * (1 + tol) + tol)
    return out


def moc_functional_check(phi, u, v, m, R, kappa=None, C=None):
    '''lhs = int |u - v|^m (dd^c phi)^m ^ beta^(n-m); rhs = C kappa(theta_m(||u - v||_m^m)),
    the norm taken against Lebesgue measure.  Without C the ratio lhs/shape
    is returned as the fitted constant of this instance.'''
    from .estimates import theta_m
    from .regularize import full_modulus
    grid = phi.grid
    for w in (u, v):
        if energy_I_m(w, m) > R:
            raise ValueError('energy exceeds R')
    diff = np.zeros(grid.size)
    idx = grid.interior
    diff[idx] = np.abs(u.values[idx] - v.values[idx]) ** m
    lhs = integrate(grid, diff * hessian_measure(phi, m).ac_density)
    norm = integrate(grid, diff)
    if kappa is None:
        kappa = full_modulus(phi)
    shape = float(kappa(theta_m(kappa, m)(np.array([norm])))[0]) if norm > 0 else 0.0
    if C is None:
        C = lhs / shape if shape > 0 else 0.0
    rhs = C * shape
    return {'lhs': lhs, 'rhs': rhs, 'norm_m': norm, 'shape': shape, 'C': C,
            'holds': bool(lhs <= rhs * (1 + 1e-9) + 1e-15)}
