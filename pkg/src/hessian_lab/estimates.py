'''One-variable estimate calculus: Dini integrals, lower inverses, the
capacity-diffusion functions and the a priori bounds built from them.

Every map is a MonotoneMap tabulated on a geometric lattice; evaluation is
piecewise linear in log-log coordinates so monotonicity survives
composition and inversion.  Integrals against dt/t are done after the
substitution t = exp(-s).
'''

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .hessian_core import integrate
from .regularize import ModulusOfContinuity, holder_fit

LN2 = math.log(2.0)
_GL_X, _GL_W = leggauss(16)


class EstimateError(ValueError):
    pass


class HypothesisViolated(EstimateError):
    def __init__(self, s, t):
        super().__init__('hypothesis violated at (s,t) = (%.6g, %.6g)' % (s, t))
        self.s, self.t = s, t


def lattice(x_max=1.0, decades=6, per_decade=256):
    return x_max * 10.0 ** np.linspace(-decades, 0.0, decades * per_decade + 1)


class MonotoneMap:
    """Monotone function of one variable.

    Tabulated samples are interpolated in log-log space (linear space if a
    sample is not positive).  A closed-form `fn` takes precedence for
    evaluation; the samples then only serve output and inversion brackets.
    kind='step' gives a right-continuous step map."""

    def __init__(self, x, y, direction='nondecreasing', fn=None, tag=None, kind='interp',
                 power=None, tol=1e-12):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or len(x) == 0:
            raise ValueError('samples must be matching 1-d arrays')
        if np.any(np.diff(x) <= 0):
            raise ValueError('sample abscissae must increase')
        sign = 1.0 if direction == 'nondecreasing' else -1.0
        if direction not in ('nondecreasing', 'nonincreasing'):
            raise ValueError('unknown direction %r' % direction)
        if np.any(sign * np.diff(y) < -tol * (1.0 + np.abs(y[1:]))):
            raise ValueError('samples are not %s' % direction)
        self.x, self.y = x, y
        self.direction = direction
        self.fn = fn
        self.tag = tag
        self.kind = kind
        # (scale, exponent, log power) when the map is scale * t^a (-log t)^nu
        self.power = power
        self._loglog = bool(x[0] > 0 and np.all(y > 0))

    @property
    def L(self):
        return float(self.x[-1])

    @classmethod
    def from_function(cls, fn, x_max=1.0, decades=6, per_decade=256, direction='nondecreasing',
                      tag=None, power=None):
        x = lattice(x_max, decades, per_decade)
        with np.errstate(over='ignore', under='ignore'):
            y = fn(x)
        return cls(x, y, direction, fn=fn, tag=tag, power=power, tol=1e-9)

    @classmethod
    def from_power(cls, a, scale=1.0, x_max=1.0, **kw):
        return cls.from_function(lambda t: scale * np.asarray(t, dtype=float) ** a, x_max,
                                 tag='power', power=(scale, float(a), 0.0), **kw)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.fn is not None:
            with np.errstate(over='ignore', under='ignore', divide='ignore'):
                out = np.asarray(self.fn(np.maximum(t, 0.0)), dtype=float)
            return np.where(t > 0, out, self._at_zero()) if out.shape else out
        if self.kind == 'step':
            i = np.searchsorted(self.x, t, side='right') - 1
            return np.where(i >= 0, self.y[np.clip(i, 0, None)], self._at_zero())
        x, y = self.x, self.y
        if self._loglog:
            lt = np.log(np.clip(t, 1e-300, None))
            out = np.exp(np.interp(lt, np.log(x), np.log(y)))
            lo = t < x[0]
            if np.any(lo) and len(x) > 1:
                slope = (math.log(y[1]) - math.log(y[0])) / (math.log(x[1]) - math.log(x[0]))
                if self.direction == 'nondecreasing' and slope > 0:
                    out = np.where(lo, y[0] * np.exp(slope * (lt - math.log(x[0]))), out)
                elif self.direction == 'nondecreasing':
                    out = np.where(lo, y[0] * np.clip(t, 0, None) / x[0], out)
            return np.where(t > 0, out, self._at_zero())
        if self.direction == 'nondecreasing' and x[0] > 0:
            return np.interp(t, np.concatenate([[0.0], x]), np.concatenate([[self._at_zero()], y]))
        return np.interp(t, x, y)

    def _at_zero(self):
        if self.direction == 'nondecreasing' and (self.x[0] > 0 or self.fn is not None):
            return 0.0
        return float(self.y[0])

    def inverse(self, v, x_lo=None, x_hi=None):
        '''Lower inverse: inf {x : y(x) >= v} (nondecreasing) or
        inf {x : y(x) <= v} (nonincreasing), by bisection in log x.'''
        v = np.atleast_1d(np.asarray(v, dtype=float))
        lo = math.log(x_lo if x_lo is not None else self.x[0] * 1e-12 if self.x[0] > 0 else 1e-300)
        hi = math.log(x_hi if x_hi is not None else self.L)
        sign = 1.0 if self.direction == 'nondecreasing' else -1.0
        if np.any(sign * (self(math.exp(hi)) - v) < 0):
            raise EstimateError('value outside the range of the map')
        a = np.full(v.shape, lo)
        b = np.full(v.shape, hi)
        for _ in range(200):
            mid = 0.5 * (a + b)
            ok = sign * (self(np.exp(mid)) - v) >= 0
            b = np.where(ok, mid, b)
            a = np.where(ok, a, mid)
        out = np.exp(b)
        # values attained at (or below) the bracket start
        out = np.where(sign * (self(np.exp(lo)) - v) >= 0, 0.0 if x_lo is None else np.exp(lo), out)
        return out

    def majorant(self):
        '''Least nondecreasing majorant of the samples.'''
        return MonotoneMap(self.x, np.maximum.accumulate(self.y), 'nondecreasing', tag=self.tag,
                           kind=self.kind)

    def samples(self):
        return self.x, self(self.x) if self.fn is not None else self.y

    def to_csv(self, path):
        x, y = self.samples()
        with open(path, 'w', newline='') as fh:
            w = csv.writer(fh)
            w.writerow(['x', 'y'])
            for a, b in zip(x, y):
                w.writerow(['%.17g' % a, '%.17g' % b])


def _closed_power(obj):
    '''(scale, alpha, nu) if obj is scale * t^alpha (-log t)^nu.'''
    if isinstance(obj, ModulusOfContinuity):
        if obj.closed_form and obj.fn is None:
            return (obj.scale, obj.alpha or 0.0, obj.nu or 0.0)
        return None
    return getattr(obj, 'power', None)


def _s_nodes(s_lo, s_hi, panels):
    '''Gauss-Legendre nodes and weights on [s_lo, s_hi] split in panels.'''
    edges = np.linspace(s_lo, s_hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    s = mid[:, None] + half[:, None] * _GL_X[None, :]
    w = half[:, None] * _GL_W[None, :]
    return s, w


def _integrand(fn, m, eps):
    def g(s):
        with np.errstate(over='ignore', under='ignore', invalid='ignore', divide='ignore'):
            val = np.asarray(fn(np.exp(-s)), dtype=float)
            val = np.where(val > 0, val, 0.0) ** (1.0 / m)
            if eps:
                val = val / np.abs(s) ** eps
        return np.where(np.isfinite(val), val, np.inf)
    return g


def _dyadic_sums(g, s0, kmax, panels=2):
    '''D_k = integral of g over [s0 + k ln2, s0 + (k+1) ln2], i.e. over the
    dyadic t-interval [2^-(k+1) t0, 2^-k t0].'''
    s, w = _s_nodes(s0, s0 + kmax * LN2, kmax * panels)
    return np.sum((g(s) * w).reshape(kmax, -1), axis=1)


def _classify(D, offset=0.0):
    '''Convergence verdict for sum D_k from its tail: the log-log decay
    power of the last tenth of the blocks (in s = offset + k ln2 units),
    which is the decay power of a power-law tail and grows without bound
    for a geometric one.'''
    D = np.asarray(D)
    if not np.all(np.isfinite(D)):
        return 'diverged', math.inf
    K = len(D)
    nz = np.flatnonzero(D > 0)
    if len(nz) == 0 or nz[-1] < K // 2:
        return 'converged', 0.0
    tail = D[K // 2:]
    if np.any(tail[1:] > tail[:-1] * (1 + 1e-8) + 1e-300):
        raise EstimateError('inconclusive')
    k0, k1 = int(0.9 * K), K - 1
    if D[k1] <= 0:
        return 'converged', 0.0
    c = 0.5 + offset / LN2
    R = (math.log(D[k0]) - math.log(D[k1])) / math.log((k1 + c) / (k0 + c))
    if R > 1.1:
        return 'converged', float(D[k1] * (k1 + c) / (R - 1))
    if R < 1.05:
        return 'diverged', math.inf
    raise EstimateError('inconclusive')


def dini_integral(kappa, m, log_weight=0, t_max=None, exact=True, kmax=1000):
    '''Integral of kappa(t)^(1/m) / (t |log t|^eps) over (0, t_max].

    t_max defaults to min(L, 1), or min(L, 1/e) with a log weight (the
    weight is singular at t = 1).  Returns value (inf when divergent),
    verdict, the extrapolated tail beyond the last dyadic block and the
    dyadic block sums.'''
    eps = log_weight
    L = getattr(kappa, 'L', 1.0)
    if t_max is None:
        t_max = min(L, 1.0) if not eps else min(L, math.exp(-1.0))
    if float(np.asarray(kappa(np.array([0.0])))[0]) != 0.0:
        raise EstimateError('kappa(0) must vanish')
    s0 = -math.log(t_max)
    g = _integrand(kappa, m, eps)
    D = _dyadic_sums(g, s0, kmax)
    cf = _closed_power(kappa) if exact else None
    if cf is not None and cf[0] > 0:
        _, a, nu = cf
        verdict = 'converged' if a > 0 or nu / m - eps < -1 else 'diverged'
        if verdict == 'converged':
            try:
                _, tail = _classify(D, s0)
            except EstimateError:
                tail = _closed_tail(s0 + kmax * LN2, a, nu, m, eps, cf[0])
            if not math.isfinite(tail):
                tail = _closed_tail(s0 + kmax * LN2, a, nu, m, eps, cf[0])
        else:
            tail = math.inf
    else:
        verdict, tail = _classify(D, s0)
    value = float(np.sum(D) + tail) if verdict == 'converged' else math.inf
    return {'value': value, 'verdict': verdict, 'tail_estimate': tail, 'dyadic': D, 't_max': t_max}


def _closed_tail(S, a, nu, m, eps, scale):
    '''Integral from S to infinity of scale^(1/m) e^(-a s/m) s^(nu/m - eps) ds.'''
    from scipy.integrate import quad
    p = nu / m - eps
    c = scale ** (1.0 / m)
    if a > 0:
        val, _ = quad(lambda s: math.exp(-a * s / m) * s ** p, S, math.inf)
    else:
        val = S ** (p + 1) / -(p + 1)
    return c * val


def _s_integral(fn, t_lo, t_hi, m=1, per_unit=16):
    '''Integral of fn(t)^(1/m)/t over [t_lo, t_hi] in s = -log t.'''
    if t_hi <= t_lo:
        return 0.0
    s_lo, s_hi = -math.log(t_hi), -math.log(t_lo)
    s, w = _s_nodes(s_lo, s_hi, max(1, int(math.ceil((s_hi - s_lo) * per_unit))))
    return float(np.sum(_integrand(fn, m, 0)(s) * w))


# ---- the maps built from a modulus -----------------------------------------

def ell_m(m, n, r=None, b=None, x_max=1.0):
    if m < n:
        if r is None or not 0 < r < m / (n - m):
            raise EstimateError('parameter outside paper range')
        return MonotoneMap.from_power(r, x_max=x_max)
    if m != n:
        raise EstimateError('m must not exceed n')
    if b is None or not 0 < b < 2 * n:
        raise EstimateError('parameter outside paper range')

    def fn(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide='ignore', over='ignore', under='ignore'):
            return np.where(t > 0, np.exp(-b * np.where(t > 0, t, 1.0) ** (-1.0 / n)), 0.0)
    return MonotoneMap.from_function(fn, x_max, tag='exp')


def theta_m(kappa, m, x_max=None, decades=12, per_decade=256):
    '''Lower inverse of F(x) = x^(2m) kappa(x)^(1-m); kappa is continued
    by the constant kappa(L) beyond L.'''
    L = getattr(kappa, 'L', 1.0)
    cf = _closed_power(kappa)
    if m == 1:
        fn = np.sqrt
        e = 2.0
    elif cf is not None and cf[2] == 0 and cf[1] > 0 and 2 * m + cf[1] * (1 - m) > 0:
        scale, a, _ = cf
        e = 2 * m + a * (1 - m)
        kL = float(kappa(np.array([L]))[0])
        FL = L ** (2 * m) * kL ** (1 - m)

        def fn(y):
            y = np.asarray(y, dtype=float)
            inner = (y * scale ** (m - 1)) ** (1.0 / e)
            outer = (y * kL ** (m - 1)) ** (1.0 / (2 * m))
            return np.where(y <= FL, inner, outer)
    else:
        fn = _numeric_theta(kappa, m, L, decades, per_decade)
        e = None
    x_max = x_max or 1.0
    power = (1.0, 1.0 / e, 0.0) if e is not None and (m == 1 or cf[0] == 1.0) else None
    out = MonotoneMap.from_function(fn, x_max, 6, per_decade, tag='theta', power=power)
    out.F = lambda x: _F(kappa, m, L, x)
    return out


def _kappa(kappa, x):
    '''kappa continued by its value at L beyond L.'''
    return kappa(np.minimum(x, getattr(kappa, 'L', np.inf)))


def _F(kappa, m, L, x):
    x = np.asarray(x, dtype=float)
    k = np.asarray(kappa(np.minimum(x, L)), dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(x > 0, x ** (2 * m) * k ** (1 - m), 0.0)


def _numeric_theta(kappa, m, L, decades, per_decade):
    xs = lattice(L, decades, per_decade)
    Fs = _F(kappa, m, L, xs)
    run = np.maximum.accumulate(Fs)
    kL = float(kappa(np.array([L]))[0])

    def fn(y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.empty_like(y)
        beyond = y > run[-1]
        out[beyond] = (y[beyond] * kL ** (m - 1)) ** (1.0 / (2 * m))
        j = np.searchsorted(run, y[~beyond], side='left')
        a = np.where(j > 0, xs[np.maximum(j - 1, 0)], 0.0)
        b = xs[np.minimum(j, len(xs) - 1)]
        yy = y[~beyond]
        below = j == 0
        # under the first lattice point F behaves like a power of x
        b[below] = xs[0]
        a[below] = xs[0] * 1e-300 ** (1 / 8)
        for _ in range(100):
            mid = 0.5 * (a + b)
            big = _F(kappa, m, L, mid) >= yy
            b = np.where(big, mid, b)
            a = np.where(big, a, mid)
        out[~beyond] = np.where(yy <= 0, 0.0, b)
        return out
    return fn


def vartheta_m(kappa, m, n, r=None, b=None, x_max=1.0):
    ell = ell_m(m, n, r, b, x_max)
    th = theta_m(kappa, m)
    power = None
    cf = _closed_power(kappa)
    if m < n and th.power is not None and cf is not None and cf[2] == 0 and cf[0] == 1.0:
        power = (1.0, cf[1] * th.power[1] * r, 0.0)

    def fn(t):
        return _kappa(kappa, th(ell(t)))
    return MonotoneMap.from_function(fn, x_max, tag='vartheta', power=power)


# ---- functions of a diffuse measure ------------------------------------------

def gamma_from_measure(mu, family, m, capacities=None, opts=None):
    '''Empirical Gamma(t) = max mu(K) over sampled K with capacity <= t.'''
    from .potential_theory import _mask, capacity
    if len(family) < 3:
        raise EstimateError('family too small')
    grid = mu.grid
    masses = mu.cell_masses()
    caps, mus = [], []
    for i, K in enumerate(family):
        mask = _mask(grid, K)
        c = capacities[i] if capacities is not None else capacity(grid, mask, m, opts).capacity
        caps.append(float(c))
        mus.append(float(np.sum(masses[mask])))
    order = np.lexsort((mus, caps))
    c = np.asarray(caps)[order]
    v = np.maximum.accumulate(np.asarray(mus)[order])
    keep = np.append(c[1:] > c[:-1], True)
    out = MonotoneMap(c[keep], v[keep], kind='step', tag='Gamma')
    out.pairs = list(zip(caps, mus))
    return out


def gamma_from_Gamma(Gamma, x_max=None, decades=6, per_decade=256):
    '''gamma(t) = Gamma(t)/t, replaced by its least nondecreasing majorant.'''
    x_max = x_max or Gamma.L
    x = lattice(x_max, decades, per_decade)
    y = np.maximum.accumulate(np.asarray(Gamma(x), dtype=float) / x)
    return MonotoneMap(x, y, tag='gamma')


def J_Gamma(gamma, m, tau_max=None, decades=6, per_decade=256):
    '''tau -> integral over (0, tau] of gamma(t)^(1/m)/t, tabulated.'''
    tau_max = tau_max or gamma.L
    tau = lattice(tau_max, decades, per_decade)
    vals = np.asarray(gamma(tau), dtype=float)
    if not np.any(vals > 0):
        return MonotoneMap(tau, np.zeros_like(tau), tag='J')
    head = dini_integral(gamma, m, 0, t_max=tau[0])
    if head['verdict'] != 'converged':
        raise EstimateError('Dini condition fails')
    g = _integrand(gamma, m, 0)
    s_edges = -np.log(tau)[::-1]
    s, w = _s_nodes(s_edges[0], s_edges[-1], len(tau) - 1)
    pieces = np.sum(g(s) * w, axis=1)[::-1]
    J = head['value'] + np.concatenate([[0.0], np.cumsum(pieces)])
    out = MonotoneMap(tau, J, tag='J')
    return out


def h_Gamma(gamma, m, J=None, **kw):
    '''Inverse of s -> s^(2m) J^(-1)(s), tabulated through tau:
    x = J(tau)^(2m) tau, h(x) = J(tau).'''
    J = J if J is not None else J_Gamma(gamma, m, **kw)
    tau, Jv = J.x, J.y
    keep = Jv > 0
    if not keep.any():
        return MonotoneMap(tau, np.zeros_like(tau), tag='h', fn=lambda x: np.zeros_like(np.asarray(x, float)))
    x = Jv[keep] ** (2 * m) * tau[keep]
    y = Jv[keep]
    ok = np.append(True, np.diff(x) > 0)
    out = MonotoneMap(x[ok], y[ok], tag='h')
    out.J = J
    return out


def h_inverse(h, m, s):
    '''s^(2m) J^(-1)(s) through the tabulation used by h.'''
    J = h.J
    s = np.asarray(s, dtype=float)
    return s ** (2 * m) * J.inverse(s)


# ---- the iteration lemma -----------------------------------------------------

def kolodziej_iteration(f, eta, tol=1e-10, check=True):
    '''Level-decay iteration for nonincreasing f >= 0 on a lattice of s >= 0
    with t f(s + t) <= f(s) eta(f(s)) for 0 <= t <= 1.

    Returns S_inf = s0 + e * int_0^{e f(s0)} eta(t)/t dt, the point beyond
    which f vanishes, together with the sequence s_j of the proof.'''
    if f.direction != 'nonincreasing':
        raise EstimateError('f must be nonincreasing')
    if isinstance(eta, MonotoneMap) and eta.fn is None:
        eta = eta.majorant()
    s = f.x
    fv = np.asarray(f(s), dtype=float)
    if np.any(fv < 0):
        raise EstimateError('f must be nonnegative')
    ev = np.asarray(eta(fv), dtype=float)
    if check:
        _check_hypothesis(s, fv, ev, step=f.kind == 'step')
    if fv[0] == 0:
        return {'S_infinity': 0.0, 's0': 0.0, 'trace': [(0.0, 0.0)], 'max_after': 0.0}
    d = dini_integral(eta, 1, 0, t_max=min(getattr(eta, 'L', 1.0), 1.0))
    if d['verdict'] != 'converged':
        raise EstimateError('Dini condition fails')
    small = np.flatnonzero(ev <= math.exp(-1.0))
    if len(small) == 0:
        raise EstimateError('eta(f) never falls to 1/e on the lattice')
    i0 = small[0]
    s0, f0 = float(s[i0]), float(fv[i0])
    integral = _s_integral(eta, 1e-300, math.e * f0) if f0 > 0 else 0.0
    S = s0 + math.e * integral
    trace = [(s0, f0)]
    i = i0
    while fv[i] > tol:
        nxt = np.flatnonzero((s > s[i]) & (fv < fv[i] / math.e))
        if len(nxt) == 0:
            break
        i = nxt[0]
        trace.append((float(s[i]), float(fv[i])))
    after = fv[s >= S]
    if f.kind == 'step':
        after = np.append(after, f(np.array([S])))
    max_after = float(after.max()) if len(after) else 0.0
    return {'S_infinity': S, 's0': s0, 'trace': trace, 'max_after': max_after}


def _check_hypothesis(s, fv, ev, step=False):
    """t f(s + t) <= f(s) eta(f(s)) for 0 < t <= 1.

    For a right-continuous step profile the supremum over real t is taken
    at the right end of each cell, so the check is exact; otherwise only
    lattice differences are tested."""
    n = len(s)
    rhs = fv * ev
    right = np.append(s[1:], np.inf) if step else s
    for k in range(0 if step else 1, n):
        t = np.minimum(right[k:] - s[:n - k], 1.0)
        live = s[k:] - s[:n - k] < 1.0 if step else t <= 1.0 + 1e-12
        if not live.any():
            break
        lhs = t * fv[k:]
        bad = live & (lhs > rhs[:n - k] * (1 + 1e-12) + 1e-300)
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise HypothesisViolated(float(s[j]), float(t[j]))


def greedy_profile(eta, f0, step=0.01, length=None):
    """Largest nonincreasing right-continuous step profile with f(0) = f0
    satisfying t f(s + t) <= f(s) eta(f(s)) for every real t in [0, 1].

    On the cell [s_k, s_k+1) the binding t for a source cell j is
    min(1, s_k+1 - s_j); the cell's own constraint (j = k) forces f = 0
    once eta(f) drops below the step."""
    span = int(round(1.0 / step))
    length = length or 50 * span
    s = np.arange(length) * step
    f = np.zeros(length)
    g = np.zeros(length)

    def eta1(x):
        return float(eta(np.array([x]))[0])
    for k in range(length):
        cap = f0 if k == 0 else f[k - 1]
        lo = max(0, k - span + 1)
        if k > lo:
            j = np.arange(lo, k)
            cap = min(cap, np.min(g[j] / np.minimum(s[k] + step - s[j], 1.0)))
        if cap > 0 and eta1(cap) >= step:
            f[k] = cap
            g[k] = cap * eta1(cap)
    return s, f


# ---- a priori bounds ---------------------------------------------------------

def uniform_bound(g_min, g_max, mu_mass, gamma, m):
    '''Lower and upper bounds for the solution from the boundary data, the
    total mass and gamma; a = e^m gamma^{-1}(e^-m).'''
    try:
        a = math.e ** m * float(gamma.inverse(math.exp(-m))[0])
    except EstimateError:
        raise EstimateError('gamma range insufficient') from None
    if a <= 0:
        raise EstimateError('gamma range insufficient')
    d = dini_integral(gamma, m, 0, t_max=a)
    if d['verdict'] != 'converged':
        raise EstimateError('Dini condition fails')
    lower = g_min - 2 * math.e * (mu_mass / a) ** (1.0 / m) - d['value']
    return {'lower': lower, 'upper': g_max, 'a': a, 'integral': d['value'],
            'osc': g_max - lower}


def stability_bound(Lm_norm, gamma, m, B=1.0, h=None):
    h = h if h is not None else h_Gamma(gamma, m)
    if Lm_norm <= 0:
        return 0.0
    return float(B * h(np.array([(2 * math.e) ** m * Lm_norm ** m]))[0])


@dataclass
class EstimateConstants:
    A: float = 1.0
    B: float = 1.0
    C_m: float = 1.0
    D: float = 1.0
    a_n: float = 1.0
    M0: float = 1.0
    M1: float = 1.0
    M2: float = 1.0
    L: float = 1.0
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        for k in ('A', 'B', 'C_m', 'D', 'a_n', 'M0', 'M1', 'M2', 'L'):
            if not getattr(self, k) > 0:
                raise ValueError('constant %s must be positive' % k)

    def fit(self, name, measured, predicted, note=''):
        res = fit_uniform_constant(measured, predicted)
        setattr(self, name, res['constant'])
        self.notes[name] = note or 'fitted over %d samples' % res['count']
        return res


def fit_uniform_constant(measured, predicted):
    '''Smallest B with measured <= B * predicted on every sample, and the
    spread max/min of the ratios (1 means perfectly uniform).'''
    mv = np.asarray(measured, dtype=float)
    pv = np.asarray(predicted, dtype=float)
    ok = pv > 0
    if not ok.any():
        raise EstimateError('no positive predictions')
    ratio = mv[ok] / pv[ok]
    pos = ratio[ratio > 0]
    B = float(ratio.max()) if ratio.max() > 0 else 1e-300
    return {'constant': B, 'spread': float(pos.max() / pos.min()) if len(pos) else 1.0,
            'count': int(ok.sum()), 'holds': bool(np.all(mv[ok] <= B * pv[ok] * (1 + 1e-12)))}


def predicted_modulus(kappa_phi, kappa_g, m, n, r=None, b=None, constants=None, delta_max=1.0):
    '''delta -> h_m[C kappa_phi(theta_m(D delta^2))] + kappa_phi(delta)
    + kappa_g(sqrt delta) + delta, with h_m built from vartheta_m.'''
    c = constants or EstimateConstants()
    th = theta_m(kappa_phi, m)
    gam = vartheta_m(kappa_phi, m, n, r, b)
    h = h_Gamma(gam, m, decades=12)

    def fn(d):
        d = np.asarray(d, dtype=float)
        inner = c.C_m * _kappa(kappa_phi, th(c.D * d ** 2))
        return h(inner) + _kappa(kappa_phi, d) + _kappa(kappa_g, np.sqrt(d)) + d
    out = MonotoneMap.from_function(fn, delta_max, tag='kappa_hat')
    out.h = h
    return out


def holder_exponent(alpha, m, n, branch=None):
    '''Closed-form Hoelder exponents: the Hessian branch (m < n) and the
    Monge-Ampere branch with its square-root log factor.'''
    if not 0 < alpha <= 1:
        raise EstimateError('alpha must lie in (0, 1]')
    branch = branch or ('hessian' if m < n else 'ma_log')
    nt = (2 - alpha) * n + alpha
    out = {'hessian': None, 'ma_log': {'exponent': alpha / (n * nt), 'log_power': 0.5}}
    if branch == 'hessian':
        if m >= n:
            raise EstimateError('use ma_log branch')
        rt = m / (n - m)
        mt = 2 * m + alpha * (1 - m)
        out['hessian'] = 2 * rt * alpha ** 2 / (m * mt * (mt + 2 * alpha * rt))
    return out


def singular_example_exponent(m, n):
    '''Predicted Hoelder exponent for the half-space kink example: the
    Hessian formula with alpha = 1/2 when m < n, the Monge-Ampere one
    (log factor dropped) when m = n.'''
    if m < n:
        rt = m / (n - m)
        mt = 2 * m + (1 - m) / 2
        return rt / (2 * mt * (m * mt + rt))
    return holder_exponent(0.5, n, n)['ma_log']['exponent']


def theorem2_bound(kappa_phi, m, n, capacity, r=None, b=None, constants=None, vartheta=None):
    c = constants or EstimateConstants()
    if capacity <= 0:
        return 0.0
    vt = vartheta if vartheta is not None else vartheta_m(kappa_phi, m, n, r, b)
    v = float(vt(np.array([capacity]))[0])
    return c.B * (v + v ** m) * capacity


def fit_exponent(x, y):
    return holder_fit(x, y)


def measure_of(mu, mask):
    return integrate(mu.grid, mu.spread(), mask)
