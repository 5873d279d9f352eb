'''Computational domains in C^n, their uniform lattices over R^{2n} and
node classification.

Coordinates are ordered (x1, y1, x2, y2, ...).  A function sampled on the
lattice is stored as a flat float array over every box node; nodes where it
is undefined hold NaN.
'''

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

EXTERIOR, BAND, INTERIOR = 0, 1, 2
MARGIN = 2


class DomainError(ValueError):
    pass


def to_complex(points):
    '''(N, 2n) real coordinates -> (N, n) complex coordinates.'''
    points = np.asarray(points, dtype=float)
    return points[:, 0::2] + 1j * points[:, 1::2]


@dataclass
class DomainSpec:
    kind: str
    n: int
    m: int
    center: tuple = None
    radius: float = 1.0
    radii: tuple = None
    rho: object = None
    bounds: object = None

    def __post_init__(self):
        if self.kind not in ('ball', 'polydisc', 'custom'):
            raise DomainError('unknown domain kind %r' % (self.kind,))
        if not (1 <= self.m <= self.n):
            raise DomainError('need 1 <= m <= n, got m=%s n=%s' % (self.m, self.n))
        if self.center is None:
            self.center = (0.0,) * self.n
        self.center = tuple(complex(c) for c in self.center)
        if len(self.center) != self.n:
            raise DomainError('center must have n complex components')
        if self.kind == 'ball':
            if self.radius is None or not self.radius > 0:
                raise DomainError('ball radius must be positive')
            self.radius = float(self.radius)
        elif self.kind == 'polydisc':
            if self.radii is None:
                self.radii = (1.0,) * self.n
            self.radii = tuple(float(r) for r in self.radii)
            if len(self.radii) != self.n or min(self.radii) <= 0:
                raise DomainError('polydisc radii must be n positive reals')
        else:
            if self.rho is None or self.bounds is None:
                raise DomainError('custom domain needs rho and bounds')
            self.bounds = np.asarray(self.bounds, dtype=float).reshape(2 * self.n, 2)

    @property
    def dim(self):
        return 2 * self.n

    def real_center(self):
        c = np.empty(self.dim)
        c[0::2] = np.real(self.center)
        c[1::2] = np.imag(self.center)
        return c

    def box(self):
        '''Bounding box of the closed domain, shape (2n, 2).'''
        c = self.real_center()
        if self.kind == 'ball':
            half = np.full(self.dim, self.radius)
        elif self.kind == 'polydisc':
            half = np.repeat(self.radii, 2)
        else:
            return self.bounds.copy()
        return np.stack([c - half, c + half], axis=1)

    def rho_values(self, points):
        '''Defining function: negative inside, zero on the boundary.'''
        points = np.atleast_2d(points)
        if self.kind == 'custom':
            return np.asarray(self.rho(points), dtype=float)
        w = to_complex(points) - np.asarray(self.center)
        if self.kind == 'ball':
            return np.sum(np.abs(w) ** 2, axis=1) - self.radius ** 2
        return np.max(np.abs(w) / np.asarray(self.radii), axis=1) - 1.0

    def depth(self, points):
        '''Approximate distance to the boundary, positive inside.'''
        points = np.atleast_2d(points)
        w = to_complex(points) - np.asarray(self.center)
        if self.kind == 'ball':
            return self.radius - np.sqrt(np.sum(np.abs(w) ** 2, axis=1))
        if self.kind == 'polydisc':
            return np.min(np.asarray(self.radii) - np.abs(w), axis=1)
        r = self.rho_values(points)
        g = self._rho_gradient(points)
        return -r / np.maximum(np.linalg.norm(g, axis=1), 1e-12)

    def _rho_gradient(self, points, step=1e-6):
        scale = max(np.ptp(self.box(), axis=1).max(), 1.0)
        eps = step * scale
        g = np.empty_like(points, dtype=float)
        for p in range(self.dim):
            e = np.zeros(self.dim)
            e[p] = eps
            g[:, p] = (self.rho_values(points + e) - self.rho_values(points - e)) / (2 * eps)
        return g

    def inward_normal(self, points):
        points = np.atleast_2d(points)
        if self.kind == 'ball':
            v = self.real_center() - points
        elif self.kind == 'polydisc':
            w = to_complex(points) - np.asarray(self.center)
            j = np.argmin(np.asarray(self.radii) - np.abs(w), axis=1)
            v = np.zeros_like(points)
            rows = np.arange(len(points))
            c = self.real_center()
            v[rows, 2 * j] = c[2 * j] - points[rows, 2 * j]
            v[rows, 2 * j + 1] = c[2 * j + 1] - points[rows, 2 * j + 1]
        else:
            v = -self._rho_gradient(points)
        norm = np.linalg.norm(v, axis=1, keepdims=True)
        return v / np.where(norm > 0, norm, 1.0)


def load_custom_rho(path, n, m):
    '''Custom domain from a CSV of lattice samples x1,y1,...,xn,yn,rho.'''
    with open(path, newline='') as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        expected = [a + str(j + 1) for j in range(n) for a in ('x', 'y')] + ['rho']
        if header != expected:
            raise DomainError('custom rho header must be %s' % ','.join(expected))
        data = np.array([[float(v) for v in row] for row in reader if row])
    axes = [np.unique(data[:, p]) for p in range(2 * n)]
    if np.prod([len(a) for a in axes]) != len(data):
        raise DomainError('custom rho samples must fill a regular lattice')
    idx = tuple(np.searchsorted(axes[p], data[:, p]) for p in range(2 * n))
    table = np.full([len(a) for a in axes], np.nan)
    table[idx] = data[:, -1]
    interp = RegularGridInterpolator(axes, table, bounds_error=False, fill_value=None)
    bounds = np.array([[a[0], a[-1]] for a in axes])
    inside = data[data[:, -1] < 0]
    if len(inside):
        # the zero set lies within one sample step of the inside samples
        step = np.array([np.min(np.diff(a)) if len(a) > 1 else 0.0 for a in axes])
        lo = np.maximum(inside[:, :-1].min(axis=0) - step, bounds[:, 0])
        hi = np.minimum(inside[:, :-1].max(axis=0) + step, bounds[:, 1])
        bounds = np.stack([lo, hi], axis=1)
    return DomainSpec('custom', n, m, rho=interp, bounds=bounds)


@dataclass
class Grid:
    spec: DomainSpec
    resolution: int
    h: float
    origin: np.ndarray
    shape: tuple
    node_class: np.ndarray
    depth: np.ndarray
    interior: np.ndarray
    band: np.ndarray
    closure: dict
    cell_fraction: np.ndarray
    delta0: float
    strides: tuple = field(init=False)

    def __post_init__(self):
        s = []
        acc = 1
        for k in reversed(self.shape):
            s.append(acc)
            acc *= k
        self.strides = tuple(reversed(s))

    @property
    def n(self):
        return self.spec.n

    @property
    def dim(self):
        return 2 * self.spec.n

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        return self.h ** self.dim

    def points(self, idx=None):
        '''Real coordinates (N, 2n) of flat node indices (all nodes by default).'''
        if idx is None:
            idx = np.arange(self.size)
        multi = np.unravel_index(np.asarray(idx), self.shape)
        return np.stack([self.origin[p] + self.h * multi[p] for p in range(self.dim)], axis=1)

    def axis_offset(self, p):
        return self.strides[p]

    def stencil_offsets(self):
        '''Flat offsets of the second-difference stencil (axes and axis pairs).'''
        offs = set()
        for p in range(self.dim):
            offs.add(self.strides[p])
            offs.add(-self.strides[p])
            for q in range(p + 1, self.dim):
                for a in (1, -1):
                    for b in (1, -1):
                        offs.add(a * self.strides[p] + b * self.strides[q])
        return np.array(sorted(offs), dtype=np.int64)

    def defined_mask(self):
        return self.node_class != EXTERIOR

    def omega_delta(self, delta):
        '''Interior nodes at distance greater than delta from the boundary.'''
        return self.interior[self.depth[self.interior] > delta]

    def delta_ladder(self, start=4, cap=None):
        '''Geometric ladder {4h, 8h, ...} capped at delta0/4.'''
        cap = self.delta0 / 4 if cap is None else cap
        # Omega_delta must keep a core of interior nodes
        cap = min(cap, 0.5 * float(self.depth[self.interior].max()))
        out = []
        d = start * self.h
        while d <= cap * (1 + 1e-12):
            out.append(d)
            d *= 2
        return np.array(out)


def _classify(spec, origin, shape, h):
    size = int(np.prod(shape))
    dim = len(shape)
    depth = np.empty(size)
    inside = np.empty(size, dtype=bool)
    chunk = 1 << 20
    for start in range(0, size, chunk):
        sl = slice(start, min(size, start + chunk))
        pts = _lattice_points(origin, shape, h, np.arange(sl.start, sl.stop))
        depth[sl] = spec.depth(pts)
        inside[sl] = (spec.rho_values(pts) < 0) & (depth[sl] > 0)
    # margins guarantee full stencils for every inside node
    cand = np.flatnonzero(inside)
    multi = np.unravel_index(cand, shape)
    ok = np.ones(len(cand), dtype=bool)
    for p in range(dim):
        ok &= (multi[p] >= 1) & (multi[p] <= shape[p] - 2)
    interior = cand[ok]
    strides = []
    acc = 1
    for k in reversed(shape):
        strides.append(acc)
        acc *= k
    strides = tuple(reversed(strides))
    cls = np.zeros(size, dtype=np.int8)
    offs = set()
    for p in range(dim):
        offs.update((strides[p], -strides[p]))
        for q in range(p + 1, dim):
            for a in (1, -1):
                for b in (1, -1):
                    offs.add(a * strides[p] + b * strides[q])
    for o in offs:
        cls[interior + o] = BAND
    cls[interior] = INTERIOR
    return cls, depth, strides


def _lattice_points(origin, shape, h, idx):
    multi = np.unravel_index(idx, shape)
    return np.stack([origin[p] + h * multi[p] for p in range(len(shape))], axis=1)


def _closure(spec, origin, shape, h, strides, cls, band, order=2):
    '''Boundary closure: each band value is extrapolated along a lattice axis
    from the boundary point (where g is imposed) and one or two interior nodes.

    Returns a dict with arrays band, point (boundary points), anchors (N, 2),
    weights (N, 3) for (g, anchor1, anchor2).'''
    pts = _lattice_points(origin, shape, h, band)
    dim = len(shape)
    nu = spec.inward_normal(pts)
    axis = np.argmax(np.abs(nu), axis=1)
    sign = np.where(nu[np.arange(len(band)), axis] >= 0, 1, -1)
    step = np.asarray(strides)[axis] * sign
    e = np.zeros_like(pts)
    e[np.arange(len(band)), axis] = sign * h
    # first lattice node along the ray that is interior
    kmax = 4 * dim + 4
    first = np.full(len(band), -1)
    for k in range(1, kmax + 1):
        idx = band + k * step
        valid = (idx >= 0) & (idx < cls.size)
        hit = np.zeros(len(band), dtype=bool)
        hit[valid] = cls[idx[valid]] == INTERIOR
        first = np.where((first < 0) & hit, k, first)
    missing = first < 0
    first = np.where(missing, 1, first)
    # bisection for the crossing of rho along the ray on [first-1, first]
    lo = (first - 1).astype(float)
    hi = first.astype(float)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        r = spec.rho_values(pts + mid[:, None] * e)
        outside = r >= 0
        lo = np.where(outside, mid, lo)
        hi = np.where(outside, hi, mid)
    tau = 0.5 * (lo + hi)
    tau = np.where(spec.rho_values(pts) <= 0, 0.0, tau)
    tau[missing] = 0.0
    point = pts + tau[:, None] * e
    k1 = np.maximum(np.ceil(tau + 0.5), first).astype(int)
    a1 = band + k1 * step
    a2 = band + (k1 + 1) * step
    in1 = _is_interior(cls, a1)
    in2 = _is_interior(cls, a2)
    weights = np.zeros((len(band), 3))
    P, A1, A2 = tau, k1.astype(float), k1 + 1.0
    quad = (order >= 2) & in1 & in2 & (tau > 0)
    lin = ~quad & in1 & (tau > 0)
    weights[quad, 0] = (A1 * A2 / ((A1 - P) * (A2 - P)))[quad]
    weights[quad, 1] = (-P * A2 / ((A1 - P) * (A2 - A1)))[quad]
    weights[quad, 2] = (P * A1 / ((A2 - P) * (A2 - A1)))[quad]
    weights[lin, 0] = (A1 / (A1 - P))[lin]
    weights[lin, 1] = (-P / (A1 - P))[lin]
    pinned = ~(quad | lin)
    weights[pinned, 0] = 1.0
    a1 = np.where(in1, a1, band)
    a2 = np.where(in2, a2, band)
    return {'band': band, 'point': point, 'anchors': np.stack([a1, a2], axis=1),
            'weights': weights, 'tau': tau * h}


def _is_interior(cls, idx):
    out = np.zeros(len(idx), dtype=bool)
    valid = (idx >= 0) & (idx < cls.size)
    out[valid] = cls[idx[valid]] == INTERIOR
    return out


def _cell_fraction(spec, origin, shape, h, interior, depth):
    '''Fraction of each interior cell inside the domain, from the sign of rho
    at 2^{2n} sub-cell centres (only cells that may cross the boundary).'''
    dim = len(shape)
    frac = np.ones(len(interior))
    near = np.flatnonzero(depth[interior] < h * math.sqrt(dim) / 2 + 1e-12)
    if len(near) == 0:
        return frac
    pts = _lattice_points(origin, shape, h, interior[near])
    corners = np.array(np.meshgrid(*[[-0.25, 0.25]] * dim, indexing='ij')).reshape(dim, -1).T * h
    count = np.zeros(len(near))
    for c in corners:
        count += spec.rho_values(pts + c) < 0
    frac[near] = count / len(corners)
    return frac


def build_grid(spec, resolution, closure_order=2):
    '''Uniform lattice over the bounding box of the domain with `resolution`
    nodes across its widest axis, plus two margin nodes on every side.'''
    resolution = int(resolution)
    if resolution < 9:
        raise DomainError('degenerate grid')
    box = spec.box()
    width = box[:, 1] - box[:, 0]
    h = float(width.max()) / (resolution - 1)
    counts = [int(math.ceil(w / h - 1e-9)) + 1 for w in width]
    origin = np.array([0.5 * (box[p, 0] + box[p, 1]) - 0.5 * (counts[p] - 1) * h - MARGIN * h
                       for p in range(spec.dim)])
    shape = tuple(c + 2 * MARGIN for c in counts)
    cls, depth, strides = _classify(spec, origin, shape, h)
    interior = np.flatnonzero(cls == INTERIOR)
    if len(interior) == 0:
        raise DomainError('degenerate grid')
    band = np.flatnonzero(cls == BAND)
    closure = _closure(spec, origin, shape, h, strides, cls, band, order=closure_order)
    frac = _cell_fraction(spec, origin, shape, h, interior, depth)
    used = np.concatenate([interior, band])
    pts = _lattice_points(origin, shape, h, used)
    delta0 = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    return Grid(spec, resolution, h, origin, shape, cls, depth, interior, band,
                closure, frac, delta0)


class GridFunction:
    '''Real function sampled on the lattice; NaN marks undefined nodes.'''

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size != grid.size:
            raise DomainError('values do not match the grid size')
        self.grid = grid
        self.values = values

    @classmethod
    def from_callable(cls, grid, fn, where='defined'):
        '''Sample fn(z) with z an (N, n) complex array.  where='box' samples
        every lattice node, 'defined' only interior and band nodes.'''
        vals = np.full(grid.size, np.nan)
        if where == 'box':
            idx = np.arange(grid.size)
        else:
            idx = np.flatnonzero(grid.defined_mask())
        vals[idx] = fn(to_complex(grid.points(idx)))
        return cls(grid, vals)

    @classmethod
    def constant(cls, grid, c, where='defined'):
        return cls.from_callable(grid, lambda z: np.full(len(z), float(c)), where=where)

    def copy(self):
        return GridFunction(self.grid, self.values.copy())

    def __add__(self, other):
        return GridFunction(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - _vals(other))

    def __mul__(self, c):
        return GridFunction(self.grid, self.values * _vals(c))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def interior_values(self):
        return self.values[self.grid.interior]

    def band_values(self):
        return self.values[self.grid.band]

    def check_finite(self):
        idx = np.flatnonzero(self.grid.defined_mask())
        return bool(np.all(np.isfinite(self.values[idx])))

    def summary(self):
        v = self.interior_values()
        return {'min': float(np.min(v)), 'max': float(np.max(v)),
                'mass': float(np.sum(v * self.grid.cell_fraction) * self.grid.cell_volume),
                'violations': int(np.sum(~np.isfinite(v)))}

    def to_csv(self, path):
        idx = np.flatnonzero(np.isfinite(self.values))
        pts = self.grid.points(idx)
        header = [a + str(j + 1) for j in range(self.grid.n) for a in ('x', 'y')] + ['value']
        with open(path, 'w', newline='') as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row, v in zip(pts, self.values[idx]):
                w.writerow(['%.12g' % x for x in row] + ['%.17g' % v])


def _vals(other):
    return other.values if isinstance(other, GridFunction) else other


def apply_closure(grid, values, g=None):
    '''Fill band values from interior values and boundary data g (callable on
    complex points, or None for zero data).  Modifies values in place.'''
    cl = grid.closure
    gv = np.zeros(len(cl['band'])) if g is None else _boundary_values(grid, g)
    w = cl['weights']
    a = cl['anchors']
    out = w[:, 0] * gv
    for j in (1, 2):
        # pinned rows point their anchors at the band node itself
        used = w[:, j] != 0
        out[used] += w[used, j] * values[a[used, j - 1]]
    values[cl['band']] = out
    return values


def boundary_trace(grid, values):
    '''Boundary values implied by the closure: the axis interpolant through
    each band node and its interior anchors, evaluated at the boundary point.'''
    cl = grid.closure
    w, a, b = cl['weights'], cl['anchors'], cl['band']
    out = values[b].astype(float).copy()
    rest = w[:, 0] != 1.0
    out[rest] = (values[b[rest]] - w[rest, 1] * values[a[rest, 0]]
                 - w[rest, 2] * values[a[rest, 1]]) / w[rest, 0]
    return out


def _boundary_values(grid, g):
    if callable(g):
        return np.asarray(g(to_complex(grid.closure['point'])), dtype=float)
    if isinstance(g, GridFunction):
        return g.values[grid.closure['band']]
    return np.full(len(grid.closure['band']), float(g))


def check_strong_m_pseudoconvexity(spec, grid, tol=1e-8):
    '''Is there a scaling lambda > 0 with sigma_k(lambda rho) >= 1 for k <= m at
    every interior node?  Equivalent to min sigma_k(rho) > 0 for every k.'''
    from .hessian_core import complex_hessian, sigma_k
    rho = GridFunction(grid, np.full(grid.size, np.nan))
    idx = np.flatnonzero(grid.defined_mask())
    rho.values[idx] = spec.rho_values(grid.points(idx))
    if not rho.check_finite():
        raise DomainError('rho not differentiable')
    H = complex_hessian(rho)
    worst_val, worst_node, worst_k = np.inf, None, None
    mins = []
    for k in range(1, spec.m + 1):
        s = sigma_k(H, k)
        i = int(np.argmin(s))
        mins.append(s[i])
        if s[i] < worst_val:
            worst_val, worst_node, worst_k = float(s[i]), int(grid.interior[i]), k
    ok = all(v > tol for v in mins)
    scale = max((1.0 / v) ** (1.0 / k) for k, v in enumerate(mins, 1)) if ok else None
    return {'ok': ok, 'worst_node': worst_node, 'worst_value': worst_val,
            'worst_k': worst_k, 'scale': scale}
