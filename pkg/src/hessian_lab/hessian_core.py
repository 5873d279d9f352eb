'''Discrete complex Hessian, elementary symmetric functions of its
eigenvalues, Hessian measures and the integral inequalities between them.

Measures are densities relative to the reference volume, which is taken to
be Lebesgue measure on R^{2n}; a cell of the lattice has volume h^{2n}.
'''

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import DomainError, GridFunction, boundary_trace, to_complex


@dataclass
class HermitianField:
    grid: object
    idx: np.ndarray
    H: np.ndarray
    low_order: np.ndarray


def real_second_differences(values, grid, idx):
    '''Central second differences D[p, q] at flat nodes idx, shape (N, 2n, 2n).
    Nodes with an undefined stencil value fall back to one-sided formulas
    and are flagged.'''
    d = grid.dim
    h2 = grid.h ** 2
    s = grid.strides
    u0 = values[idx]
    D = np.empty((len(idx), d, d))
    for p in range(d):
        D[:, p, p] = (values[idx + s[p]] - 2 * u0 + values[idx - s[p]]) / h2
        for q in range(p + 1, d):
            D[:, p, q] = (values[idx + s[p] + s[q]] - values[idx + s[p] - s[q]]
                          - values[idx - s[p] + s[q]] + values[idx - s[p] - s[q]]) / (4 * h2)
            D[:, q, p] = D[:, p, q]
    bad = ~np.all(np.isfinite(D.reshape(len(idx), -1)), axis=1)
    if np.any(bad):
        rows = np.flatnonzero(bad)
        D[rows] = _one_sided(values, grid, idx[rows])
        if not np.all(np.isfinite(D[rows])):
            raise DomainError('stencil incomplete')
    return D, bad


def _one_sided(values, grid, idx):
    d = grid.dim
    h2 = grid.h ** 2
    s = grid.strides
    u0 = values[idx]
    D = np.full((len(idx), d, d), np.nan)
    for p in range(d):
        c = (values[idx + s[p]] - 2 * u0 + values[idx - s[p]]) / h2
        for sg in (1, -1):
            alt = (u0 - 2 * values[idx + sg * s[p]] + values[idx + 2 * sg * s[p]]) / h2
            c = np.where(np.isfinite(c), c, alt)
        D[:, p, p] = c
        for q in range(p + 1, d):
            c = (values[idx + s[p] + s[q]] - values[idx + s[p] - s[q]]
                 - values[idx - s[p] + s[q]] + values[idx - s[p] - s[q]]) / (4 * h2)
            for a in (1, -1):
                for b in (1, -1):
                    alt = a * b * (values[idx + a * s[p] + b * s[q]] - values[idx + a * s[p]]
                                   - values[idx + b * s[q]] + u0) / h2
                    c = np.where(np.isfinite(c), c, alt)
            D[:, p, q] = D[:, q, p] = c
    return D


def hessian_from_real(D):
    '''Combine real second derivatives into d^2/dz_j dzbar_k.'''
    A = D[:, 0::2, 0::2]
    C = D[:, 1::2, 1::2]
    B = D[:, 0::2, 1::2]
    H = 0.25 * (A + C) + 0.25j * (B - np.swapaxes(B, 1, 2))
    return 0.5 * (H + np.conj(np.swapaxes(H, 1, 2)))


def complex_hessian(u, idx=None):
    grid = u.grid
    idx = grid.interior if idx is None else np.asarray(idx)
    D, low = real_second_differences(u.values, grid, idx)
    return HermitianField(grid, idx, hessian_from_real(D), low)


def elementary_symmetric(lam, k):
    '''sigma_k of the last-axis entries by the stable one-pass recursion.'''
    lam = np.asarray(lam, dtype=float)
    e = [np.ones(lam.shape[:-1])] + [np.zeros(lam.shape[:-1]) for _ in range(k)]
    for i in range(lam.shape[-1]):
        li = lam[..., i]
        for j in range(k, 0, -1):
            e[j] = e[j] + li * e[j - 1]
    return e[k]


def sigma_k(H, k):
    '''Per-node sigma_k of the eigenvalues of a HermitianField (or raw array).'''
    M = H.H if isinstance(H, HermitianField) else np.asarray(H)
    n = M.shape[-1]
    if not (0 <= k <= n):
        raise ValueError('need 0 <= k <= n')
    if k == 0:
        return np.ones(M.shape[0])
    lam = np.linalg.eigvalsh(M)
    return elementary_symmetric(lam, k)


def hessian_prefactor(n, m):
    return math.factorial(m) * math.factorial(n - m) / math.factorial(n)


def is_m_subharmonic(u, m, tol=1e-8):
    H = complex_hessian(u)
    lam = np.linalg.eigvalsh(H.H)
    worst = np.min(np.stack([elementary_symmetric(lam, k) for k in range(1, m + 1)]), axis=0)
    vmap = np.full(u.grid.size, np.nan)
    vmap[H.idx] = worst
    return {'ok': bool(np.all(worst >= -tol)), 'violation_map': GridFunction(u.grid, vmap)}


@dataclass
class SliceMeasure:
    '''Measure with constant density on an axis-aligned affine slice
    {x_p = value_p, p in axes}, spread over the cells it crosses.'''
    axes: tuple
    offsets: tuple
    density: float
    cells: np.ndarray = None
    cell_mass: np.ndarray = None

    @property
    def mass(self):
        return float(np.sum(self.cell_mass)) if self.cell_mass is not None else 0.0


@dataclass
class HessianDensity:
    grid: object
    ac_density: np.ndarray
    singular_slices: list = field(default_factory=list)
    warning: bool = False

    def cell_masses(self):
        '''Mass carried by each node's cell (flat array over the box).'''
        g = self.grid
        out = np.zeros(g.size)
        out[g.interior] = self.ac_density[g.interior] * g.cell_fraction * g.cell_volume
        for sl in self.singular_slices:
            np.add.at(out, sl.cells, sl.cell_mass)
        return out

    def total_mass(self):
        return float(_pairwise_sum(self.cell_masses()[self.grid.interior]))

    def spread(self):
        '''Density with slice masses converted to cell densities.'''
        g = self.grid
        dens = np.zeros(g.size)
        dens[g.interior] = self.cell_masses()[g.interior] / (g.cell_fraction * g.cell_volume)
        return dens

    def summary(self):
        d = self.ac_density[self.grid.interior]
        return {'mass': self.total_mass(), 'min': float(d.min()), 'max': float(d.max()),
                'violations': int(self.warning)}

    def to_csv(self, path):
        GridFunction(self.grid, np.where(self.grid.node_class == 2, self.spread(), np.nan)).to_csv(path)

    def scaled(self, c):
        sl = [SliceMeasure(s.axes, s.offsets, s.density * c, s.cells, s.cell_mass * c)
              for s in self.singular_slices]
        return HessianDensity(self.grid, self.ac_density * c, sl, self.warning)


def density_from_callable(grid, f):
    dens = np.zeros(grid.size)
    dens[grid.interior] = f(to_complex(grid.points(grid.interior)))
    if np.any(dens < 0):
        raise ValueError('invalid measure')
    return HessianDensity(grid, dens)


def slice_measure(grid, axes, offsets, density=1.0, subsamples=8):
    '''Hausdorff measure (times density) of the slice inside the domain,
    allocated cell by cell: each crossed cell receives the measure of
    slice ∩ cell ∩ Omega, estimated on a sub-lattice of the slice.'''
    axes = tuple(axes)
    offsets = tuple(float(o) for o in offsets)
    h = grid.h
    pts = grid.points(grid.interior)
    share = np.ones(len(pts))
    for p, a in zip(axes, offsets):
        dist = np.abs(pts[:, p] - a)
        share *= np.where(dist < 0.5 * h - 1e-12, 1.0, np.where(np.abs(dist - 0.5 * h) <= 1e-12, 0.5, 0.0))
    hit = np.flatnonzero(share > 0)
    free = [p for p in range(grid.dim) if p not in axes]
    sub = (np.arange(subsamples) + 0.5) / subsamples - 0.5
    mesh = np.array(np.meshgrid(*[sub] * len(free), indexing='ij')).reshape(len(free), -1).T * h
    inside = np.zeros(len(hit))
    for off in mesh:
        q = pts[hit].copy()
        for p, a in zip(axes, offsets):
            q[:, p] = a
        q[:, free] += off
        inside += grid.spec.rho_values(q) < 0
    frac = inside / len(mesh)
    mass = density * share[hit] * frac * h ** len(free)
    return SliceMeasure(axes, offsets, density, grid.interior[hit], mass)


def hessian_measure(u, m, tol=1e-8):
    grid = u.grid
    s = sigma_k(complex_hessian(u), m)
    dens = np.zeros(grid.size)
    dens[grid.interior] = hessian_prefactor(grid.n, m) * s
    warn = bool(np.any(dens[grid.interior] < -tol))
    dens[grid.interior] = np.maximum(dens[grid.interior], 0.0)
    return HessianDensity(grid, dens, warning=warn)


def _pairwise_sum(x):
    '''Deterministic tree reduction.'''
    x = np.asarray(x, dtype=float)
    while x.size > 1:
        if x.size % 2:
            x = np.append(x, 0.0)
        x = x[0::2] + x[1::2]
    return float(x[0]) if x.size else 0.0


def integrate(grid, dens, mask=None):
    '''Cell-volume quadrature of an interior density (flat over the box).'''
    w = grid.cell_fraction * grid.cell_volume
    vals = dens[grid.interior] * w
    if mask is not None:
        vals = vals[mask[grid.interior]]
    return _pairwise_sum(vals)


def energy_I_m(u, m):
    return integrate(u.grid, hessian_measure(u, m).ac_density)


def comparison_check(u, v, m, tol=1e-6):
    '''Both sides of the comparison principle over the discrete set {u < v}.
    The boundary ordering is checked on the traces at the boundary points.'''
    grid = u.grid
    if np.any(boundary_trace(grid, u.values) < boundary_trace(grid, v.values) - tol):
        raise ValueError('boundary ordering fails')
    mask = np.zeros(grid.size, dtype=bool)
    mask[grid.interior] = u.values[grid.interior] < v.values[grid.interior]
    lhs = integrate(grid, hessian_measure(v, m).ac_density, mask)
    rhs = integrate(grid, hessian_measure(u, m).ac_density, mask)
    return {'holds': bool(lhs <= rhs * (1 + tol) + tol), 'lhs': lhs, 'rhs': rhs}


def mixed_discriminant(mats):
    '''Polarized mixed discriminant D(H_1, ..., H_k) for k Hermitian fields of
    size n, normalized so that D(H, ..., H) = sigma_k(H).'''
    k = len(mats)
    N, n, _ = mats[0].shape
    total = np.zeros(N)
    # sigma_k(sum_i t_i H_i) expanded; the t_1...t_k coefficient over k!
    for r in range(1, k + 1):
        for subset in _subsets(k, r):
            S = sum(mats[i] for i in subset)
            total += (-1) ** (k - r) * sigma_k(S, k)
    return total / math.factorial(k)


def _subsets(k, r):
    from itertools import combinations
    return combinations(range(k), r)


def mixed_mass(us, m):
    '''Integral of dd^c u_1 ^ ... ^ dd^c u_m ^ beta^{n-m} over the interior.'''
    grid = us[0].grid
    Hs = [complex_hessian(u).H for u in us]
    dens = np.zeros(grid.size)
    dens[grid.interior] = hessian_prefactor(grid.n, m) * mixed_discriminant(Hs)
    return integrate(grid, dens)


def cegrell_check(u, w, m, tol=0.05):
    '''lhs = int dd^c u ^ (dd^c w)^{m-1} ^ beta^{n-m}; rhs = I_m(u)^{1/m} I_m(w)^{(m-1)/m}.'''
    lhs = mixed_mass([u] + [w] * (m - 1), m)
    rhs = energy_I_m(u, m) ** (1.0 / m) * energy_I_m(w, m) ** ((m - 1.0) / m)
    return {'lhs': lhs, 'rhs': rhs, 'ratio': lhs / rhs if rhs > 0 else np.inf,
            'holds': bool(lhs <= (1 + tol) * rhs)}


def blocki_check(psi, v, w, m, tol=0.05):
    '''lhs = int (w - v)^m (dd^c psi)^m ^ beta^{n-m}; rhs = m! |psi|^m I_m(v).'''
    grid = psi.grid
    diff = np.maximum(w.values - v.values, 0.0) ** m
    dens = hessian_measure(psi, m).ac_density * np.where(np.isfinite(diff), diff, 0.0)
    lhs = integrate(grid, dens)
    sup = float(np.max(np.abs(psi.values[grid.interior])))
    rhs = math.factorial(m) * sup ** m * energy_I_m(v, m)
    return {'lhs': lhs, 'rhs': rhs, 'ratio': lhs / rhs if rhs > 0 else np.inf,
            'holds': bool(lhs <= (1 + tol) * rhs)}
