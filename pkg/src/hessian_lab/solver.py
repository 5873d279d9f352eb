'''Discrete Dirichlet problem for the complex m-Hessian equation.

Every interior node i carries the equation

    prefactor * sigma_m(H_i(u)) = f_i,   H_i(u) in the closed m-positive cone,

where H_i is the central-difference complex Hessian.  The node value enters
H_i only through -u_i/h^2 times the identity, so the equation can be solved
for u_i given its neighbours: u_i = R_i(u) = -h^2 t*, with t* the largest
root of sigma_m(lambda(H0_i) + t) = C(n, m) f_i (H0_i is the Hessian with
the centre term removed).  The solver looks for a fixed point of R, by
Newton's method on u - R(u) (default), by multicolour Gauss-Seidel or by
damped Jacobi (pseudo-time) iteration.
'''

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain import GridFunction, apply_closure, to_complex
from .hessian_core import (HessianDensity, complex_hessian, elementary_symmetric, hessian_from_real,
                           hessian_measure, hessian_prefactor, integrate)

log = logging.getLogger(__name__)

SCHEMES = ('newton_root', 'gauss_seidel_root', 'pseudo_time')


@dataclass
class SolveOptions:
    tol_residual: float = 1e-10
    max_iters: int = 60
    scheme: str = 'newton_root'
    damping: float = 0.7

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ValueError('tol_residual must be positive')
        if int(self.max_iters) < 1:
            raise ValueError('max_iters must be at least 1')
        if self.scheme not in SCHEMES:
            raise ValueError('unknown scheme %r' % (self.scheme,))
        if not (0 < self.damping <= 1):
            raise ValueError('damping must lie in (0, 1]')
        self.max_iters = int(self.max_iters)


@dataclass
class SolutionReport:
    u: GridFunction
    residual_L1: float
    boundary_err: float
    msh_violation: float
    iterations: int
    converged: bool
    update_norm: float
    damping: float
    history: list = field(default_factory=list)

    def summary(self):
        return {'residual_L1': self.residual_L1, 'boundary_err': self.boundary_err,
                'msh_violation': self.msh_violation, 'iterations': self.iterations,
                'converged': self.converged, 'update_norm': self.update_norm, 'damping': self.damping}


# ---- the nodewise root map -------------------------------------------------

class _Stencil:
    '''Neighbour tables of the interior nodes and the band elimination.'''

    def __init__(self, grid):
        self.grid = grid
        idx = grid.interior
        s = grid.strides
        d = grid.dim
        self.offsets = []   # (flat offset, kind, p, q, sign)
        for p in range(d):
            for sg in (1, -1):
                self.offsets.append((sg * s[p], p, p, 1.0))
        for p in range(d):
            for q in range(p + 1, d):
                for a in (1, -1):
                    for b in (1, -1):
                        self.offsets.append((a * s[p] + b * s[q], p, q, 0.25 * a * b))
        self.pos = np.full(grid.size, -1, dtype=np.int64)
        self.pos[idx] = np.arange(len(idx))
        cl = grid.closure
        self.band_pos = np.full(grid.size, -1, dtype=np.int64)
        self.band_pos[cl['band']] = np.arange(len(cl['band']))
        self.anchor_pos = self.pos[cl['anchors']]
        self.anchor_w = cl['weights'][:, 1:]


def _stencil(grid):
    st = grid.__dict__.get('_stencil')
    if st is None:
        st = _Stencil(grid)
        grid.__dict__['_stencil'] = st
    return st


def _offcentre_hessian(values, grid, idx):
    '''Complex Hessian with the centre value removed.'''
    d = grid.dim
    h2 = grid.h ** 2
    s = grid.strides
    D = np.empty((len(idx), d, d))
    for p in range(d):
        D[:, p, p] = (values[idx + s[p]] + values[idx - s[p]]) / h2
        for q in range(p + 1, d):
            D[:, p, q] = (values[idx + s[p] + s[q]] - values[idx + s[p] - s[q]]
                          - values[idx - s[p] + s[q]] + values[idx - s[p] - s[q]]) / (4 * h2)
            D[:, q, p] = D[:, p, q]
    return hessian_from_real(D)


def largest_shift(lam, target, m):
    '''Largest t with sigma_m(lam + t) = target (target >= 0), per row of lam.

    sigma_m(lam + t) is real-rooted in t, so beyond its largest root it is
    convex and increasing and Newton from above converges monotonically.'''
    n = lam.shape[1]
    binom = math.comb(n, m)
    if m == 1:
        return target / n - lam.sum(axis=1) / n
    if m == 2:
        s1 = lam.sum(axis=1)
        s2 = elementary_symmetric(lam, 2)
        a, b, c = binom, (n - 1) * s1, s2 - target
        disc = np.maximum(b * b - 4 * a * c, 0.0)
        return (-b + np.sqrt(disc)) / (2 * a)
    t = -lam.min(axis=1) + (np.maximum(target, 0.0) / binom) ** (1.0 / m) + 1e-300
    for _ in range(100):
        mu = lam + t[:, None]
        val = elementary_symmetric(mu, m) - target
        der = (n - m + 1) * elementary_symmetric(mu, m - 1)
        step = np.where(der > 0, val / np.where(der > 0, der, 1.0), 0.0)
        t = t - step
        if np.all(np.abs(step) <= 1e-15 * (1 + np.abs(t))):
            break
    return t


def root_map(values, grid, f, m, idx=None, want_weights=False):
    '''R_i(u) = -h^2 t*_i at nodes idx (interior by default).  With
    want_weights also return the normalized linearization W (N, 2n, 2n):
    dR_i = h^2 sum_pq W_pq dD0_pq.'''
    idx = grid.interior if idx is None else idx
    n = grid.n
    H0 = _offcentre_hessian(values, grid, idx)
    lam, vec = np.linalg.eigh(H0)
    target = f * math.comb(n, m)
    t = largest_shift(lam, target, m)
    R = -grid.h ** 2 * t
    if not want_weights:
        return R
    mu = lam + t[:, None]
    # d sigma_m / d lambda_j = sigma_{m-1} of the other eigenvalues
    dj = np.empty_like(mu)
    for j in range(n):
        others = np.delete(mu, j, axis=1)
        dj[:, j] = elementary_symmetric(others, m - 1) if m > 1 else 1.0
    dj = np.maximum(dj, 0.0)
    trP = dj.sum(axis=1)
    degenerate = trP <= 1e-14 * (1 + np.abs(mu).max(axis=1) ** max(m - 1, 0))
    dj[degenerate] = 1.0
    trP[degenerate] = n
    P = np.einsum('nij,nj,nkj->nik', vec, dj / trP[:, None], np.conj(vec))
    d = grid.dim
    W = np.empty((len(idx), d, d))
    W[:, 0::2, 0::2] = 0.25 * P.real
    W[:, 1::2, 1::2] = 0.25 * P.real
    W[:, 0::2, 1::2] = 0.25 * P.imag
    W[:, 1::2, 0::2] = -0.25 * P.imag
    return R, W


def _jacobian(grid, W, interior_only=False):
    '''Sparse dR/du_int with band values eliminated through the closure
    (or dropped, with interior_only).'''
    st = _stencil(grid)
    idx = grid.interior
    N = len(idx)
    rows, cols, vals = [], [], []
    ar = np.arange(N)
    for off, p, q, c in st.offsets:
        coef = c * (W[:, p, q] + (W[:, q, p] if p != q else 0.0)) if p != q else W[:, p, p]
        nb = idx + off
        pi = st.pos[nb]
        inner = pi >= 0
        rows.append(ar[inner]); cols.append(pi[inner]); vals.append(coef[inner])
        if interior_only:
            continue
        bi = st.band_pos[nb[~inner]]
        r_out = ar[~inner]
        c_out = coef[~inner]
        for k in range(2):
            ap = st.anchor_pos[bi, k]
            aw = st.anchor_w[bi, k]
            ok = (ap >= 0) & (aw != 0)
            rows.append(r_out[ok]); cols.append(ap[ok]); vals.append(c_out[ok] * aw[ok])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))


def _linear_solve(J, rhs, grid, cache, precond=None):
    '''Direct solve in two real dimensions; otherwise GMRES preconditioned by
    classical AMG, built from `precond` (a nearby, better conditioned
    matrix) when given.'''
    if grid.dim == 2 and J.shape[0] < 400000:
        return spla.spsolve(J.tocsc(), rhs)
    import pyamg
    x = None
    for attempt in range(2):
        ml = cache.get('amg')
        if ml is None:
            base = J if precond is None or attempt else precond
            ml = pyamg.ruge_stuben_solver(base.tocsr())
            cache['amg'] = ml
        x, info = spla.gmres(J, rhs, x0=x, M=ml.aspreconditioner(cycle='V'), rtol=1e-13, atol=1e-15,
                             restart=60, maxiter=10)
        if info == 0:
            return x
        # the hierarchy of an earlier Jacobian may be stale
        cache.pop('amg')
    log.warning('linear solve did not reach its tolerance')
    return x


def _system(grid, W, active=None):
    '''Newton matrix I - D dR and its interior-only counterpart.'''
    I = sp.identity(len(grid.interior), format='csr')
    full = _jacobian(grid, W)
    if grid.dim == 2:
        pre = None
    else:
        pre = _jacobian(grid, W, interior_only=True)
    if active is not None:
        D = sp.diags((~active).astype(float))
        full = D @ full
        pre = D @ pre if pre is not None else None
    return (I - full).tocsr(), (I - pre).tocsr() if pre is not None else None


# ---- densities and boundary data -------------------------------------------

def density_values(mu, grid):
    '''Per-node density f of mu relative to the reference volume (singular
    slices spread over the cells they cross).'''
    if isinstance(mu, HessianDensity):
        f = mu.spread() if mu.singular_slices else mu.ac_density
        f = f[grid.interior]
    elif callable(mu):
        f = np.asarray(mu(to_complex(grid.points(grid.interior))), dtype=float)
    else:
        f = np.full(len(grid.interior), float(mu))
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise ValueError('invalid measure')
    return f


def _harmonic_guess(grid, g):
    vals = np.full(grid.size, np.nan)
    vals[grid.interior] = 0.0
    vals[grid.band] = 0.0
    rep = _newton(grid, vals, np.zeros(len(grid.interior)), 1, g, SolveOptions(tol_residual=1e-12, max_iters=3))
    return rep[0]


def initial_guess(grid, f, m, g):
    spec = grid.spec
    box = spec.box()
    c = 0.5 * (box[:, 0] + box[:, 1])
    R = 0.5 * float(np.max(box[:, 1] - box[:, 0]))
    M = R ** 2 * float(np.max(f)) ** (1.0 / m) if len(f) else 0.0
    base = _harmonic_guess(grid, g)
    pts = grid.points(grid.interior)
    base[grid.interior] += M * (np.sum((pts - c) ** 2, axis=1) / R ** 2 - 1)
    return base


# ---- iterations ------------------------------------------------------------

def _floor(vals, grid):
    """Round-off floor of the root map: in degenerate cases (f = 0, m >= 2)
    the largest root is a square root of a cancelling discriminant."""
    scale = 1.0 + float(np.max(np.abs(vals[grid.interior])))
    return 4 * math.sqrt(np.finfo(float).eps) * scale


def _newton(grid, vals, f, m, g, opts, history=None):
    idx = grid.interior
    cache = {}
    vals = vals.copy()
    apply_closure(grid, vals, g)
    R, W = root_map(vals, grid, f, m, want_weights=True)
    G = vals[idx] - R
    norm = float(np.max(np.abs(G)))
    it = 0
    stalled = 0
    while norm > opts.tol_residual and it < opts.max_iters:
        it += 1
        J, pre = _system(grid, W)
        du = _linear_solve(J, -G, grid, cache, pre)
        step = 1.0
        l2 = float(np.linalg.norm(G))
        for _ in range(20):
            trial = vals.copy()
            trial[idx] += step * du
            apply_closure(grid, trial, g)
            Rt, Wt = root_map(trial, grid, f, m, want_weights=True)
            Gt = trial[idx] - Rt
            if np.linalg.norm(Gt) <= l2 * (1 - 1e-4 * step) or step < 1e-5:
                break
            step *= 0.5
        vals, R, W, G = trial, Rt, Wt, Gt
        new = float(np.max(np.abs(G)))
        stalled = stalled + 1 if new > 0.5 * norm else 0
        norm = new
        if history is not None:
            history.append({'iteration': it, 'update': norm, 'step': step})
        log.debug('newton %d: |G| = %.3e step %.3g', it, norm, step)
        if stalled and norm <= _floor(vals, grid):
            break
    return vals, it, norm, 1.0


def _colour_classes(grid):
    multi = np.unravel_index(grid.interior, grid.shape)
    d = grid.dim
    colour = sum((p + 1) * multi[p] for p in range(d)) % (2 * d)
    return [grid.interior[colour == c] for c in range(2 * d)]


def _relaxation(grid, vals, f, m, g, opts, history=None):
    idx = grid.interior
    pos = np.full(grid.size, -1)
    pos[idx] = np.arange(len(idx))
    vals = vals.copy()
    apply_closure(grid, vals, g)
    omega = opts.damping
    prev = np.inf
    norm = np.inf
    it = 0
    colours = _colour_classes(grid) if opts.scheme == 'gauss_seidel_root' else [idx]
    while it < opts.max_iters:
        it += 1
        norm = 0.0
        for cls in colours:
            R = root_map(vals, grid, f[pos[cls]], m, idx=cls)
            upd = R - vals[cls]
            norm = max(norm, float(np.max(np.abs(upd))) if len(upd) else 0.0)
            vals[cls] += omega * upd
            apply_closure(grid, vals, g)
        if history is not None:
            history.append({'iteration': it, 'update': norm, 'damping': omega})
        if norm <= opts.tol_residual:
            break
        if norm > prev * (1 + 1e-12):
            omega *= 0.5
            log.info('residual increased; damping halved to %g', omega)
        prev = norm
    return vals, it, norm, omega


def solve_dirichlet(mu, g, m, opts=None, grid=None, initial=None):
    '''Solve prefactor * sigma_m(H(u)) = f in Omega, u = g on the boundary.

    mu: HessianDensity, callable f(z) or constant density.  g: callable on
    complex boundary points, GridFunction (values on band nodes, pinned) or
    constant.'''
    opts = SolveOptions() if opts is None else opts
    if grid is None:
        grid = mu.grid if isinstance(mu, HessianDensity) else g.grid
    if not (1 <= m <= grid.n):
        raise ValueError('need 1 <= m <= n')
    f = density_values(mu, grid)
    g_eff = g
    if isinstance(g, GridFunction):
        grid = _pinned(grid)
    fp = f / hessian_prefactor(grid.n, m) / math.comb(grid.n, m)
    if initial is None:
        vals = initial_guess(grid, fp, m, g_eff)
    else:
        vals = initial.values.copy() if isinstance(initial, GridFunction) else np.asarray(initial, float).copy()
    history = []
    if opts.scheme == 'newton_root':
        vals, it, norm, damp = _newton(grid, vals, fp, m, g_eff, opts, history)
    else:
        vals, it, norm, damp = _relaxation(grid, vals, fp, m, g_eff, opts, history)
    u = GridFunction(grid, vals)
    dens = hessian_measure(u, m, tol=np.inf).ac_density
    resid = np.zeros(grid.size)
    resid[grid.interior] = np.abs(dens[grid.interior] - f)
    residual = integrate(grid, resid)
    viol = cone_violation(u, m)
    ok = norm <= max(opts.tol_residual, _floor(vals, grid) if m > 1 else 0.0)
    return SolutionReport(u, residual, boundary_error(grid, vals, g_eff), viol, it,
                          bool(ok), norm, damp, history)


def cone_violation(u, m):
    """Largest amount by which a node value must drop to bring its discrete
    Hessian into the closed m-positive cone (value units, like the update)."""
    grid = u.grid
    lam = np.linalg.eigvalsh(complex_hessian(u).H)
    shift = largest_shift(lam, np.zeros(len(lam)), m)
    return float(max(0.0, np.max(shift)) * grid.h ** 2) if len(lam) else 0.0


def _pinned(grid):
    '''Copy of the grid whose closure pins band values to the data.'''
    import copy
    g2 = copy.copy(grid)
    cl = dict(grid.closure)
    w = np.zeros_like(cl['weights'])
    w[:, 0] = 1.0
    cl['weights'] = w
    cl['anchors'] = np.stack([cl['band'], cl['band']], axis=1)
    g2.closure = cl
    g2.__dict__.pop('_stencil', None)
    return g2


def boundary_error(grid, vals, g):
    '''Mismatch between the boundary data and the closure: the quadratic
    through the band node and its anchors evaluated at the boundary point.'''
    from .domain import _boundary_values
    cl = grid.closure
    gv = np.zeros(len(cl['band'])) if g is None else _boundary_values(grid, g)
    w = cl['weights']
    a = cl['anchors']
    b = cl['band']
    pinned = w[:, 0] == 1.0
    err = np.zeros(len(b))
    err[pinned] = np.abs(vals[b[pinned]] - gv[pinned])
    rest = ~pinned
    # invert the extrapolation: g = (u_b - w1 u_a1 - w2 u_a2) / w0
    recon = (vals[b[rest]] - w[rest, 1] * vals[a[rest, 0]] - w[rest, 2] * vals[a[rest, 1]]) / w[rest, 0]
    err[rest] = np.abs(recon - gv[rest])
    return float(err.max()) if len(err) else 0.0


# ---- subsolutions and approximants ----------------------------------------

def subsolution_check(phi, mu, m, tol=1e-8):
    '''Cell-by-cell mu <= (dd^c phi)^m ^ beta^(n-m).  Also reports the
    smallest A with mu <= A (dd^c phi)^m on the cells charged by mu.'''
    grid = phi.grid
    mphi = hessian_measure(phi, m).cell_masses()
    if isinstance(mu, HessianDensity):
        mmu = mu.cell_masses()
    else:
        dens = np.zeros(grid.size)
        dens[grid.interior] = density_values(mu, grid)
        mmu = HessianDensity(grid, dens).cell_masses()
    idx = grid.interior
    excess = mmu[idx] - (mphi[idx] * (1 + tol) + tol)
    worst = int(np.argmax(excess))
    charged = mmu[idx] > 0
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = np.where(charged, mmu[idx] / mphi[idx], 0.0)
    A = float(np.max(ratio)) if np.any(charged) else 0.0
    return {'holds': bool(excess[worst] <= 0), 'worst_cell': int(idx[worst]),
            'worst_excess': float(excess[worst]), 'A': A}


def global_approximants(u, delta, v, w, kappa_hat, tol=1e-9):
    '''u~_delta = max(mean_value(u, delta) - kappa_hat, u) on Omega_delta, u
    elsewhere.  The returned GridFunction carries collar_ok: whether u~ = u
    on the nodes of Omega_delta within 2h of its boundary.'''
    from .regularize import mean_value
    grid = u.grid
    idx = grid.interior
    from .domain import boundary_trace
    if (np.any(v.values[idx] > u.values[idx] + tol) or np.any(u.values[idx] > w.values[idx] + tol)
            or np.any(np.abs(boundary_trace(grid, v.values) - boundary_trace(grid, w.values)) > tol)):
        raise ValueError('sandwich violated')
    mv = mean_value(u, delta).values
    out = u.values.copy()
    inner = idx[np.isfinite(mv[idx])]
    out[inner] = np.maximum(mv[inner] - kappa_hat, u.values[inner])
    res = GridFunction(grid, out)
    collar = inner[grid.depth[inner] <= delta + 2 * grid.h]
    res.collar_ok = bool(np.all(np.abs(out[collar] - u.values[collar]) <= tol))
    return res


def approximation_energy(u, mu, phi, g, delta, m, w=None, opts=None):
    '''lhs = int over Omega_delta of (u~_delta - u)^m dmu, with
    v = phi + w, w the maximal function with data g, and
    kappa_hat = kappa_hat_v(delta) + kappa_hat_w(delta) + delta.'''
    from .regularize import hat_modulus
    grid = u.grid
    if w is None:
        w = solve_dirichlet(0.0, g, m, opts, grid=grid).u
    v = phi + w
    kh = (hat_modulus(v, [delta]).values[0] + hat_modulus(w, [delta]).values[0] + delta)
    # the sandwich v <= u <= w is only discrete; allow the solver tolerance
    ut = global_approximants(u, delta, v, w, kh, tol=1e-6)
    f = density_values(mu, grid)
    dens = np.zeros(grid.size)
    dens[grid.interior] = np.maximum(ut.values[grid.interior] - u.values[grid.interior], 0.0) ** m * f
    mask = np.zeros(grid.size, dtype=bool)
    mask[grid.omega_delta(delta)] = True
    return {'lhs': integrate(grid, dens, mask), 'kappa_hat': kh, 'collar_ok': ut.collar_ok}


def approximation_energy_bound(u, mu, phi, g, deltas, m, kappa, C=None, D=None, w=None, opts=None):
    '''lhs(delta) against C * kappa(theta_m(D delta^2)).  Without C and D the
    constants are fitted: D = 1 and C the smallest value making every
    instance hold.'''
    from .estimates import theta_m
    w = solve_dirichlet(0.0, g, m, opts, grid=u.grid).u if w is None else w
    lhs = np.array([approximation_energy(u, mu, phi, g, d, m, w=w)['lhs'] for d in deltas])
    D = 1.0 if D is None else D
    th = theta_m(kappa, m)
    shape = kappa(th(D * np.asarray(deltas) ** 2))
    fitted = C is None
    if fitted:
        C = float(np.max(lhs / shape)) if np.any(shape > 0) else 0.0
    rhs = C * shape
    return {'deltas': list(map(float, deltas)), 'lhs': lhs.tolist(), 'rhs': rhs.tolist(), 'C': C, 'D': D,
            'fitted': fitted, 'holds': bool(np.all(lhs <= rhs * (1 + 1e-12)))}


def measure_solution_modulus(u, samples=None):
    from .regularize import hat_modulus, holder_fit
    curve = hat_modulus(u, samples)
    return {'hat_curve': curve, 'holder_fit': holder_fit(curve.deltas, curve.values)}
