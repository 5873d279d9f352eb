'''Mollification, ball mean values and moduli of continuity of lattice
functions.'''

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .domain import GridFunction

EPS = np.finfo(float).eps


class ModulusOfContinuity:
    '''Nondecreasing kappa on [0, L] with kappa(0) = 0.

    Either tabulated (interpolated linearly in log-log space) or given in
    closed form t^alpha (-log t)^nu, optionally with a constant factor.'''

    def __init__(self, t=None, kappa=None, L=1.0, alpha=None, nu=0.0, scale=1.0, fn=None, tag=None):
        self.L = float(L)
        self.alpha = alpha
        self.nu = nu
        self.scale = scale
        self.fn = fn
        self.tag = tag
        if t is not None:
            t = np.asarray(t, dtype=float)
            kappa = np.maximum.accumulate(np.asarray(kappa, dtype=float))
            keep = t > 0
            self.t, self.k = t[keep], kappa[keep]
            if np.any(np.diff(self.t) <= 0):
                raise ValueError('sample abscissae must increase')
            self.L = float(self.t[-1])
        else:
            self.t = self.k = None

    @classmethod
    def power(cls, alpha, L=1.0, scale=1.0):
        return cls(L=L, alpha=float(alpha), nu=0.0, scale=scale, tag='power')

    @classmethod
    def logpower(cls, alpha, nu, L=None, scale=1.0):
        # (-log t)^nu needs t < 1, and with nu > 0 the product only
        # increases up to t = exp(-nu/alpha)
        if L is None:
            if nu < 0 or (nu > 0 and not alpha):
                L = math.exp(-1.0)
            elif nu > 0:
                # keep L below 1 in floating point, where -log t vanishes
                L = math.exp(-max(nu / alpha, 1e-9))
            else:
                L = 1.0
        return cls(L=L, alpha=float(alpha), nu=float(nu), scale=scale, tag='logpower')

    @classmethod
    def from_config(cls, cfg):
        kind = cfg.get('type', 'power')
        if kind == 'power':
            return cls.power(cfg['alpha'], cfg.get('L', 1.0), cfg.get('scale', 1.0))
        if kind == 'logpower':
            return cls.logpower(cfg.get('alpha', 0.0), cfg['nu'], cfg.get('L'), cfg.get('scale', 1.0))
        if kind == 'samples':
            return cls(cfg['t'], cfg['kappa'])
        raise ValueError('unknown kappa type %r' % kind)

    @property
    def closed_form(self):
        return self.t is None

    @property
    def t_min(self):
        return 0.0 if self.closed_form else float(self.t[0])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        pos = t > 0
        if self.fn is not None:
            out[pos] = self.fn(t[pos])
            return out
        if self.closed_form:
            tp = t[pos]
            val = tp ** self.alpha if self.alpha else np.ones_like(tp)
            if self.nu:
                val = val * (-np.log(tp)) ** self.nu
            out[pos] = self.scale * val
            return out
        tp = np.clip(t[pos], None, self.t[-1])
        if np.all(self.k > 0):
            val = np.exp(np.interp(np.log(tp), np.log(self.t), np.log(self.k)))
            below = tp < self.t[0]
            # linear to the origin below the first sample
            val[below] = self.k[0] * tp[below] / self.t[0]
        else:
            val = np.interp(tp, np.concatenate([[0.0], self.t]), np.concatenate([[0.0], self.k]))
        out[pos] = val
        return out

    def inverse(self, y, lo=1e-300):
        '''Lower inverse inf {t : kappa(t) >= y} by bisection in log t.'''
        y = np.atleast_1d(np.asarray(y, dtype=float))
        a = np.full(y.shape, math.log(lo))
        b = np.full(y.shape, math.log(self.L))
        for _ in range(200):
            mid = 0.5 * (a + b)
            big = self(np.exp(mid)) >= y
            b = np.where(big, mid, b)
            a = np.where(big, a, mid)
        return np.exp(b)

    def samples(self, t=None):
        if t is None:
            t = self.t if not self.closed_form else np.geomspace(self.L * 1e-6, self.L, 6 * 256 + 1)
        return np.asarray(t), self(t)

    def subadditivity_defect(self, t=None):
        t, k = self.samples(t)
        s = t[:, None] + t[None, :]
        ok = s <= self.L
        lhs = self(np.where(ok, s, 0.0))
        defect = np.where(ok, lhs - k[:, None] - k[None, :], -np.inf)
        return float(defect.max())

    def to_csv(self, path):
        t, k = self.samples()
        with open(path, 'w', newline='') as fh:
            w = csv.writer(fh)
            w.writerow(['t', 'kappa'])
            for a, b in zip(t, k):
                w.writerow(['%.17g' % a, '%.17g' % b])


@dataclass
class HatModulusCurve:
    deltas: np.ndarray
    values: np.ndarray

    def to_csv(self, path):
        with open(path, 'w', newline='') as fh:
            w = csv.writer(fh)
            w.writerow(['delta', 'kappa_hat'])
            for a, b in zip(self.deltas, self.values):
                w.writerow(['%.17g' % a, '%.17g' % b])


# ---- kernels ---------------------------------------------------------------

_KERNEL_CACHE = {}


def _sub_offsets(dim, s):
    g = (np.arange(s) + 0.5) / s - 0.5
    return np.array(np.meshgrid(*[g] * dim, indexing='ij')).reshape(dim, -1).T


def kernel_weights(h, delta, dim, kind='ball_indicator'):
    '''Weights over lattice offsets |k| <= K, summing to one.

    ball_indicator: each weight is the volume of (cell at k) ∩ B(0, delta)
    over the ball volume, cells straddling the sphere integrated on a
    sub-lattice; a radial correction on fully covered cells then makes the
    rule exact for quadratic polynomials.
    smooth_bump: exp(-1/(1-|x|^2/delta^2)) integrated the same way.'''
    key = (round(h, 15), round(delta, 15), dim, kind)
    if key in _KERNEL_CACHE:
        return _KERNEL_CACHE[key]
    K = int(math.floor(delta / h + 0.5 * math.sqrt(dim))) + 1
    ax = np.arange(-K, K + 1)
    grids = np.meshgrid(*[ax] * dim, indexing='ij')
    r2 = sum(g.astype(float) ** 2 for g in grids) * h * h
    r = np.sqrt(r2)
    half_diag = 0.5 * math.sqrt(dim) * h
    inside = r + half_diag <= delta
    straddle = (r - half_diag < delta) & ~inside
    s = {2: 16, 4: 6}.get(dim, 4)
    sub = _sub_offsets(dim, s) * h
    w = np.zeros(r.shape)
    idx = np.argwhere(straddle)
    for chunk in np.array_split(idx, max(1, len(idx) // 2048 + 1)):
        if not len(chunk):
            continue
        centres = chunk.astype(float) - K
        pts = centres[:, None, :] * h + sub[None, :, :]
        rr = np.sqrt(np.sum(pts ** 2, axis=2)) / delta
        if kind == 'ball_indicator':
            vals = (rr < 1).mean(axis=1)
        else:
            vals = _bump(rr).mean(axis=1)
        w[tuple(chunk.T)] = vals
    if kind == 'ball_indicator':
        w[inside] = 1.0
        w = _moment_correct(w, r2, inside, delta, dim)
    else:
        w[inside] = _bump(r[inside] / delta)
        w /= w.sum()
    _KERNEL_CACHE[key] = w
    return w


def _bump(x):
    out = np.zeros_like(x)
    ok = x < 1
    out[ok] = np.exp(-1.0 / (1.0 - x[ok] ** 2))
    return out


def _moment_correct(w, r2, inside, delta, dim):
    '''Normalize and add (c0 + c2 |x|^2) on fully covered cells so that the
    zeroth and second radial moments match the uniform ball.'''
    target0 = 1.0
    target2 = dim * delta * delta / (dim + 2)
    w = w / w.sum()
    m0, m2 = w.sum(), (w * r2).sum()
    a = np.array([[inside.sum(), r2[inside].sum()],
                  [r2[inside].sum(), (r2[inside] ** 2).sum()]])
    c = np.linalg.solve(a, [target0 - m0, target2 - m2])
    w = w.copy()
    w[inside] += c[0] + c[1] * r2[inside]
    return w


def _convolve(values, grid, w):
    '''Convolution of lattice values with the kernel, NaN where the kernel
    reaches an undefined node.'''
    arr = values.reshape(grid.shape)
    defined = np.isfinite(arr)
    filled = np.where(defined, arr, 0.0)
    out = fftconvolve(filled, w, mode='same')
    hole = fftconvolve((~defined).astype(float), (w != 0).astype(float), mode='same')
    out[hole > 0.5] = np.nan
    return out.reshape(-1)


def mollify(u, delta, kernel='ball_indicator', extension=None):
    '''u * chi_delta.  With extension (a ModulusOfContinuity) u is first
    extended to the box so the result is defined on all of Omega.'''
    grid = u.grid
    if delta < 2 * grid.h:
        raise ValueError('kernel under-resolved')
    if delta >= grid.delta0:
        raise ValueError('delta must be below the domain diameter')
    vals = u.values
    if extension is not None:
        vals = kappa_extension(u, extension).values
    w = kernel_weights(grid.h, delta, grid.dim, kernel)
    out = _convolve(vals, grid, w)
    if extension is None:
        keep = np.zeros(grid.size, dtype=bool)
        keep[grid.omega_delta(delta)] = True
        out = np.where(keep, out, np.nan)
    return GridFunction(grid, out)


def mean_value(u, delta):
    return mollify(u, delta, 'ball_indicator')


def _omega_nodes(grid, values, delta):
    idx = grid.omega_delta(delta)
    return idx[np.isfinite(values[idx])]


def hat_modulus(u, samples=None):
    '''kappa_hat(delta) = max over Omega_delta of (mean value - u).'''
    grid = u.grid
    samples = grid.delta_ladder() if samples is None else np.asarray(samples, dtype=float)
    out = []
    for d in samples:
        mv = mean_value(u, d).values
        idx = _omega_nodes(grid, mv, d)
        out.append(float(np.max(mv[idx] - u.values[idx])) if len(idx) else np.nan)
    return HatModulusCurve(np.asarray(samples), np.array(out))


def _half_ball_offsets(grid, radius):
    K = int(math.floor(radius / grid.h + 1e-9))
    ax = np.arange(-K, K + 1)
    ks = np.array(np.meshgrid(*[ax] * grid.dim, indexing='ij')).reshape(grid.dim, -1).T
    dist = np.sqrt(np.sum(ks.astype(float) ** 2, axis=1)) * grid.h
    # one representative of each +-k pair
    flat = ks @ np.asarray(grid.strides)
    keep = (flat > 0) & (dist <= radius * (1 + 1e-12))
    order = np.argsort(dist[keep], kind='stable')
    return ks[keep][order], dist[keep][order]


def _shift_max_diff(arr, k):
    '''max |arr[x + k] - arr[x]| over x with both ends defined.'''
    sl_a, sl_b = [], []
    for kp, size in zip(k, arr.shape):
        if kp >= 0:
            sl_a.append(slice(kp, size))
            sl_b.append(slice(0, size - kp))
        else:
            sl_a.append(slice(0, size + kp))
            sl_b.append(slice(-kp, size))
    d = np.abs(arr[tuple(sl_a)] - arr[tuple(sl_b)])
    d = d[np.isfinite(d)]
    return float(d.max()) if d.size else 0.0


def full_modulus(u, samples=None):
    '''kappa_u(delta) = max |u(z) - u(z')| over defined node pairs with
    |z - z'| <= delta.'''
    grid = u.grid
    samples = grid.delta_ladder() if samples is None else np.asarray(samples, dtype=float)
    arr = u.values.reshape(grid.shape)
    ks, dist = _half_ball_offsets(grid, float(np.max(samples)))
    per = np.array([_shift_max_diff(arr, k) for k in ks])
    run = np.maximum.accumulate(per) if len(per) else per
    vals = []
    for d in samples:
        j = np.searchsorted(dist, d * (1 + 1e-12), side='right')
        vals.append(float(run[j - 1]) if j > 0 else 0.0)
    return ModulusOfContinuity(np.asarray(samples), np.array(vals))


def kappa_extension(u, kappa, reach=None, check=True):
    '''sup over defined nodes zeta of u(zeta) - kappa(|z - zeta|), evaluated
    at every box node within `reach` of the defined set (all box nodes by
    default).  Defined nodes keep their values.'''
    grid = u.grid
    src = np.flatnonzero(np.isfinite(u.values))
    if check:
        meas = full_modulus(u, grid.delta_ladder(start=1))
        d = meas.t
        if np.any(meas.k > kappa(d) * (1 + 1e-9) + 1e-12):
            raise ValueError('kappa insufficient')
    zs = grid.points(src)
    uz = u.values[src]
    out = u.values.copy()
    targets = np.flatnonzero(~np.isfinite(u.values))
    if reach is not None and len(targets):
        from scipy.spatial import cKDTree
        dd, _ = cKDTree(zs).query(grid.points(targets))
        targets = targets[dd <= reach]
    chunk = max(1, int(2e7 // max(len(src), 1)))
    for start in range(0, len(targets), chunk):
        t = targets[start:start + chunk]
        p = grid.points(t)
        dist = np.sqrt(np.maximum(np.sum(p ** 2, axis=1)[:, None] + np.sum(zs ** 2, axis=1)[None, :]
                                  - 2 * p @ zs.T, 0.0))
        out[t] = np.max(uz[None, :] - kappa(dist), axis=1)
    return GridFunction(grid, out)


def check_mc_condition(kappa, n, max_power=20):
    '''Search A = 2^k for limsup kappa(At)/(A kappa(t)) < 1/(2n), the limsup
    replaced by the max over the smallest decade of available t.'''
    floor = 10 * math.sqrt(EPS)
    if not kappa.closed_form and kappa.t_min > floor * 1.0001:
        raise ValueError('insufficient resolution near zero')
    t0 = max(floor, kappa.t_min)
    t = np.geomspace(t0, 10 * t0, 65)
    kt = kappa(t)
    ratios = {}
    witness = None
    for k in range(1, max_power + 1):
        A = 2.0 ** k
        if A * t[-1] > kappa.L:
            break
        r = float(np.max(kappa(A * t) / (A * kt)))
        ratios[A] = r
        if witness is None and r < 1.0 / (2 * n):
            witness = A
    return {'satisfied': witness is not None, 'witness_A': witness, 'ratios': ratios,
            'decade': (float(t[0]), float(t[-1]))}


def ball_sup_excess(u, delta):
    '''max over Omega_delta of (sup_{B(z, delta)} u - u(z)).'''
    grid = u.grid
    arr = u.values.reshape(grid.shape)
    ks, _ = _half_ball_offsets(grid, delta)
    best = np.full(grid.shape, -np.inf)
    for k in np.concatenate([ks, -ks]) if len(ks) else []:
        shifted = np.full(grid.shape, np.nan)
        src, dst = [], []
        for kp, size in zip(k, grid.shape):
            if kp >= 0:
                src.append(slice(kp, size))
                dst.append(slice(0, size - kp))
            else:
                src.append(slice(0, size + kp))
                dst.append(slice(-kp, size))
        shifted[tuple(dst)] = arr[tuple(src)]
        best = np.fmax(best, shifted)
    idx = grid.omega_delta(delta)
    vals = best.reshape(-1)[idx] - u.values[idx]
    vals = vals[np.isfinite(vals)]
    return float(max(vals.max(), 0.0)) if vals.size else 0.0


def sup_mean_equivalence_check(u, kappa, samples=None):
    grid = u.grid
    samples = grid.delta_ladder() if samples is None else np.asarray(samples, dtype=float)
    hat = hat_modulus(u, samples)
    kd = kappa(samples)
    c1 = float(np.nanmax(hat.values / kd))
    c2 = float(max(ball_sup_excess(u, d) / k for d, k in zip(samples, kd)))
    return {'c1': c1, 'c2': c2, 'c1_finite': bool(np.isfinite(c1)), 'c2_finite': bool(np.isfinite(c2)),
            'deltas': samples.tolist(), 'kappa_hat': hat.values.tolist()}


def poisson_jensen_check(u, delta):
    from .hessian_core import complex_hessian, sigma_k, integrate
    grid = u.grid
    mv = mean_value(u, delta).values
    mask = np.zeros(grid.size, dtype=bool)
    mask[_omega_nodes(grid, mv, delta)] = True
    diff = np.where(mask, mv - u.values, 0.0)
    lhs = integrate(grid, diff, mask)
    s1 = np.zeros(grid.size)
    s1[grid.interior] = sigma_k(complex_hessian(u), 1)
    denom = delta ** 2 * integrate(grid, s1, mask)
    return {'lhs': lhs, 'rhs_ratio': lhs / denom if denom > 0 else (0.0 if lhs == 0 else np.inf)}


def holder_fit(deltas, values):
    '''Least-squares slope of log values against log deltas, and r^2.'''
    d = np.asarray(deltas, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = (v > 0) & np.isfinite(v)
    if ok.sum() < 2:
        return {'alpha': np.nan, 'r2': np.nan}
    x, y = np.log(d[ok]), np.log(v[ok])
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1 - np.sum((y - pred) ** 2) / ss if ss > 0 else 1.0
    return {'alpha': float(coef[0]), 'r2': float(r2)}
