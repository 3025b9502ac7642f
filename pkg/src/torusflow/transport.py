"""Transport with an oscillating velocity and its homogenized limit.

For ``du/dt - b(x/eps) . grad u = f(t, x, x/eps)`` the solution is explicit
along characteristics.  With ``X_eps(t, x) = eps X(t/eps, x/eps)``,

    u_eps(t, x) = u0(X_eps(t, x), X_eps(t, x)/eps)
                  + int_0^t f(s, X_eps(t - s, x), X_eps(t - s, x)/eps) ds,

and the homogenized solution for a drift ``zeta`` is

    u(t, x) = mean_y u0(x + t zeta, y) + int_0^t mean_y f(s, x + (t - s) zeta, y) ds.

Data are finite separable sums ``sum_i c_i(t) theta_i(x) v_i(y)`` with smooth
compactly supported ``theta_i`` and bounded periodic ``v_i``.  Weak errors
are space-time pairings against test functions ``p(t) theta(x)``.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec

from .errors import ConfigurationError, HorizonCapExceeded, NodeBudgetExceeded
from .fields import FieldSpec, sampled_max_divergence
from .flow import IntegratorConfig, integrate_batch
from .invariant import QuadratureConfig, periodic_mean

DIVERGENCE_FREE_TOL = 1e-10
# rows per characteristic batch; fixed so results do not depend on threads
CHUNK = 8192


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True, eq=False)
class Bump:
    """``amplitude * exp(1 - 1 / (1 - |x - c|^2 / r^2))`` inside the ball,
    0 outside: smooth, compactly supported, peak value ``amplitude``."""

    center: tuple
    radius: float
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if self.radius <= 0:
            raise ConfigurationError("bump radius must be positive")

    @property
    def dim(self):
        return len(self.center)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum((x - np.array(self.center)) ** 2, axis=-1) / self.radius**2
        out = np.zeros(r2.shape)
        inside = r2 < 1.0
        out[inside] = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
        return out

    def box(self):
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def to_config(self):
        return {"kind": "bump", "center": list(self.center), "radius": self.radius, "amplitude": self.amplitude}


@dataclass(frozen=True, eq=False)
class BoxIndicator:
    """Indicator of an axis-aligned box (not smooth; for pairing checks)."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ConfigurationError("box needs lo < hi in every coordinate")

    @property
    def dim(self):
        return len(self.lo)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= np.array(self.lo)) & (x <= np.array(self.hi)), axis=-1).astype(float)

    def box(self):
        return np.array(self.lo), np.array(self.hi)

    def to_config(self):
        return {"kind": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True, eq=False)
class PeriodicFactor:
    """Periodic factor ``v(y)``; wraps a scalar field or a constant."""

    fn: object = 1.0

    @property
    def is_constant(self):
        return isinstance(self.fn, (int, float))

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.is_constant:
            return np.full(y.shape[:-1], float(self.fn))
        return np.asarray(self.fn(y), dtype=float)

    def mean(self, dim, quad=None):
        if self.is_constant:
            return float(self.fn)
        return float(periodic_mean(self.fn, quad, dim=dim, strict=True).value)

    def mean_square(self, dim, quad=None):
        if self.is_constant:
            return float(self.fn) ** 2
        sing = getattr(self.fn, "singular_points", None)
        return float(periodic_mean(lambda y: self(y) ** 2, quad, dim=dim,
                                   singular_points=sing() if sing else None, strict=True).value)

    def sup(self, dim):
        if self.is_constant:
            return abs(float(self.fn))
        n = 128 if dim == 2 else 24
        g = (np.arange(n) + 0.5) / n
        pts = np.stack(np.meshgrid(*([g] * dim), indexing="ij"), -1).reshape(-1, dim)
        return float(np.abs(self(pts)).max())


@dataclass(frozen=True, eq=False)
class SeparableTerm:
    """``p(t) * theta(x) * v(y)`` with ``p`` a polynomial (coefficients in
    increasing degree)."""

    space: object
    periodic: PeriodicFactor = field(default_factory=PeriodicFactor)
    time_poly: tuple = (1.0,)

    def __post_init__(self):
        if not isinstance(self.periodic, PeriodicFactor):
            object.__setattr__(self, "periodic", PeriodicFactor(self.periodic))
        object.__setattr__(self, "time_poly", tuple(float(c) for c in self.time_poly))

    @property
    def dim(self):
        return self.space.dim

    def time(self, t):
        return np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), self.time_poly)

    def __call__(self, t, x, y):
        return self.time(t) * self.space(x) * self.periodic(y)


@dataclass(frozen=True)
class TransportQuadrature:
    """Node rules for pairings and source integrals.

    ``space_factor``: nodes per ``eps`` along each axis (spacing <= eps /
    space_factor).  ``time_nodes``: Gauss-Legendre nodes on ``[0, T]``.
    ``source_panel``: fast-time panel length for source integrals, each
    with ``source_gauss`` nodes.  ``node_budget`` caps space nodes per
    pairing; ``horizon_cap`` caps ``t / eps``.
    """

    space_factor: int = 8
    time_nodes: int = 8
    source_panel: float = 0.1
    source_gauss: int = 6
    node_budget: int = 16_000_000
    horizon_cap: float = 1e6

    def __post_init__(self):
        if self.space_factor < 1 or self.time_nodes < 1 or self.source_gauss < 1:
            raise ConfigurationError("transport quadrature counts must be positive")
        if self.source_panel <= 0 or self.node_budget < 1 or self.horizon_cap <= 0:
            raise ConfigurationError("transport quadrature limits must be positive")


@dataclass(frozen=True, eq=False)
class TransportScenario:
    """Field, separable data, final time, test battery and ``eps`` grid."""

    spec: FieldSpec
    u0: tuple
    f: tuple = ()
    T: float = 1.0
    battery: tuple = ()
    epsilon_grid: tuple = (1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64)
    quad: TransportQuadrature = field(default_factory=TransportQuadrature)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    cell_quad: QuadratureConfig = field(default_factory=QuadratureConfig)
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "u0", tuple(self.u0))
        object.__setattr__(self, "f", tuple(self.f))
        object.__setattr__(self, "battery", tuple(self.battery))
        eps = tuple(float(e) for e in self.epsilon_grid)
        object.__setattr__(self, "epsilon_grid", eps)
        if not eps or any(not 0 < e <= 1 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigurationError("epsilon grid must be distinct, decreasing, inside (0, 1]")
        if self.T <= 0:
            raise ConfigurationError("final time T must be positive")
        d = self.spec.dim
        for term in self.u0 + self.f + self.battery:
            if term.dim != d:
                raise ConfigurationError("data dimension does not match the field")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")

    @property
    def divergence_free(self):
        return sampled_max_divergence(self.spec) < DIVERGENCE_FREE_TOL

    def b_mean(self):
        return np.asarray(periodic_mean(self.spec, self.cell_quad, dim=self.spec.dim, strict=True).value)


# ---------------------------------------------------------------------------
# solvers


def _check_horizon(sc, eps, t):
    if eps <= 0 or eps > 1:
        raise ConfigurationError("eps must lie in (0, 1]")
    if t / eps > sc.quad.horizon_cap:
        raise HorizonCapExceeded(
            f"t/eps = {t / eps:.3g} exceeds the horizon cap {sc.quad.horizon_cap:.3g}; "
            f"raise transport.horizon_cap or use a larger eps")


def _source_nodes(times, eps, q):
    """Composite Gauss nodes in slow time covering ``[0, max(times)]``, with
    panel breaks at every entry of ``times``; returns (nodes, weights)."""
    gx, gw = np.polynomial.legendre.leggauss(q.source_gauss)
    gx, gw = 0.5 * (gx + 1.0), 0.5 * gw
    breaks = np.unique(np.concatenate([[0.0], times]))
    nodes, weights = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        npan = max(1, int(np.ceil((b - a) / (eps * q.source_panel))))
        edges = np.linspace(a, b, npan + 1)
        h = np.diff(edges)
        nodes.append((edges[:-1, None] + h[:, None] * gx[None, :]).ravel())
        weights.append((h[:, None] * gw[None, :]).ravel())
    if not nodes:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(nodes), np.concatenate(weights)


def _oscillating_block(sc, eps, times, xs):
    """``u_eps(t_k, x_i)`` as a ``(K, n)`` array; ``times`` sorted ascending."""
    times = np.asarray(times, dtype=float)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    n = xs.shape[0]
    out = np.zeros((times.size, n))
    rnodes, rweights = (_source_nodes(times, eps, sc.quad) if sc.f else (np.zeros(0), np.zeros(0)))
    # merged fast sample times: solution times first, then source nodes
    fast = np.concatenate([times, rnodes]) / eps
    kinds = np.concatenate([np.arange(times.size), -1 - np.arange(rnodes.size)])
    order = np.argsort(fast, kind="stable")
    fast, kinds = fast[order], kinds[order]

    def u0_at(y, rows):
        x = eps * y
        return sum(term.space(x) * term.periodic(y) for term in sc.u0) if sc.u0 else np.zeros(len(rows))

    def callback(j, rows, y, _lj):
        k = kinds[j]
        if k >= 0:
            out[k, rows] += u0_at(y, rows)
            return
        q = -1 - k
        r = rnodes[q]
        x = eps * y
        later = times >= r
        for term in sc.f:
            g = term.space(x) * term.periodic(y)
            if not np.any(g):
                continue
            # s = t_k - r is the source time for the solution at t_k
            coef = rweights[q] * term.time(times[later] - r)
            out[np.ix_(later, rows)] += coef[:, None] * g[None, :]

    if fast.size:
        integrate_batch(sc.spec, xs / eps, fast[-1], sc.integrator, sample_times=fast,
                        callback=callback, track_jacobian=False, interpolate=True)
    return out


def _chunked(sc, fn, xs):
    xs = np.atleast_2d(xs)
    chunks = [xs[i:i + CHUNK] for i in range(0, xs.shape[0], CHUNK)]
    if sc.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(sc.threads) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return np.concatenate(parts, axis=-1)


def solve_oscillating(sc: TransportScenario, eps, t, x):
    """``u_eps(t, x)`` by characteristics; ``x`` may be ``(d,)`` or ``(n, d)``."""
    if not 0 <= t <= sc.T * (1 + 1e-12):
        raise ConfigurationError(f"t = {t} outside [0, T]")
    _check_horizon(sc, eps, t)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    vals = _chunked(sc, lambda c: _oscillating_block(sc, eps, [t], c), x.reshape(-1, sc.spec.dim))[0]
    return float(vals[0]) if single else vals


def _mean_factors(sc):
    d = sc.spec.dim
    return ([t.periodic.mean(d, sc.cell_quad) for t in sc.u0],
            [t.periodic.mean(d, sc.cell_quad) for t in sc.f])


def _homogenized_block(sc, zeta, times, xs, means=None):
    zeta = np.asarray(zeta, dtype=float)
    m0, mf = means or _mean_factors(sc)
    times = np.asarray(times, dtype=float)
    out = np.zeros((times.size, xs.shape[0]))
    for k, t in enumerate(times):
        shifted = xs + t * zeta
        out[k] = sum(m * term.space(shifted) for m, term in zip(m0, sc.u0)) if sc.u0 else 0.0
        if sc.f and t > 0:
            def integrand(s, t=t):
                pos = xs + (t - s) * zeta
                return sum(m * term.time(s) * term.space(pos) for m, term in zip(mf, sc.f))
            val, _ = quad_vec(integrand, 0.0, t, epsabs=1e-13, epsrel=1e-12, limit=400)
            out[k] += val
    return out


def solve_homogenized(sc: TransportScenario, zeta, t, x):
    """Homogenized solution at ``(t, x)`` for drift ``zeta``."""
    if not 0 <= t <= sc.T * (1 + 1e-12):
        raise ConfigurationError(f"t = {t} outside [0, T]")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    vals = _homogenized_block(sc, zeta, [t], x.reshape(-1, sc.spec.dim))[0]
    return float(vals[0]) if single else vals


# ---------------------------------------------------------------------------
# pairings


def _space_grid(lo, hi, eps, factor, budget):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    n = np.maximum(np.ceil((hi - lo) * factor / eps - 1e-9).astype(int), 1)
    required = int(np.prod(n))
    if required > budget:
        raise NodeBudgetExceeded(required, budget)
    h = (hi - lo) / n
    axes = [lo[i] + (np.arange(n[i]) + 0.5) * h[i] for i in range(lo.size)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, lo.size)
    return pts, float(np.prod(h))


def _time_rule(T, n):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * T * (t + 1.0), 0.5 * T * w


class _CellPaths:
    """Fast trajectories from the ``s^d`` cell offsets ``y_j = (j + 1/2) / s``.

    By periodicity of the flow, ``X(tau, y_j + m) = X(tau, y_j) + m`` for
    integer ``m``, so on the aligned nodes ``eps (y_j + m)`` the solution
    needs only these ``s^d`` characteristics.
    """

    def __init__(self, sc, eps, times):
        d = sc.spec.dim
        s = sc.quad.space_factor
        axes = [(np.arange(s) + 0.5) / s] * d
        self.offsets = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
        self.eps, self.sc = eps, sc
        self.times = np.asarray(times, dtype=float)
        self.rnodes, self.rweights = (_source_nodes(self.times, eps, sc.quad) if sc.f
                                      else (np.zeros(0), np.zeros(0)))
        fast = np.concatenate([self.times, self.rnodes]) / eps
        order = np.argsort(fast, kind="stable")
        S = self.offsets.shape[0]
        paths = np.empty((fast.size, S, d))
        if fast.size:
            def store(j, rows, y, _lj):
                paths[order[j], rows] = y

            integrate_batch(sc.spec, self.offsets, fast[order][-1], sc.integrator, sample_times=fast[order],
                            callback=store, track_jacobian=False, interpolate=True)
        self.at_times = paths[: self.times.size]
        self.at_sources = paths[self.times.size:]

    def nodes(self, lo, hi):
        """Aligned nodes in ``[lo, hi]``: returns (offset index, cell, points)."""
        eps, d = self.eps, self.offsets.shape[1]
        m_lo = np.floor(np.asarray(lo) / eps).astype(int) - 1
        m_hi = np.ceil(np.asarray(hi) / eps).astype(int)
        cells = np.stack(np.meshgrid(*[np.arange(m_lo[i], m_hi[i] + 1) for i in range(d)], indexing="ij"),
                         -1).reshape(-1, d)
        pts = eps * (self.offsets[:, None, :] + cells[None, :, :])
        inside = np.all((pts >= lo) & (pts <= hi), axis=-1)
        jj, mm = np.nonzero(inside)
        return jj, cells[mm], pts[jj, mm]

    def solution(self, jj, cells):
        """``u_eps`` at every solution time on the nodes ``eps (y_jj + cells)``."""
        sc, eps = self.sc, self.eps
        out = np.zeros((self.times.size, jj.size))
        for k in range(self.times.size):
            Y = self.at_times[k][jj]
            for term in sc.u0:
                out[k] += term.space(eps * (Y + cells)) * term.periodic(Y)
        for q, r in enumerate(self.rnodes):
            later = self.times >= r
            Y = self.at_sources[q][jj]
            for term in sc.f:
                g = term.space(eps * (Y + cells))
                if not np.any(g):
                    continue
                g = g * term.periodic(Y)
                coef = self.rweights[q] * term.time(self.times[later] - r)
                out[later] += coef[:, None] * g[None, :]
        return out


def _aligned_count(lo, hi, eps, s):
    return int(np.prod(np.ceil((np.asarray(hi) - np.asarray(lo)) * s / eps) + 1))


def weak_pairings(sc: TransportScenario, eps, zeta):
    """``<u_eps - u, phi_j>`` for every test function of the battery.

    Space nodes are ``eps (y_j + m)`` with spacing ``eps / space_factor``;
    time nodes are Gauss-Legendre on ``[0, T]``."""
    if not sc.battery:
        raise ConfigurationError("weak_error needs a nonempty test battery")
    _check_horizon(sc, eps, sc.T)
    s = sc.quad.space_factor
    for phi in sc.battery:
        lo, hi = phi.space.box()
        need = _aligned_count(lo, hi, eps, s)
        if need > sc.quad.node_budget:
            raise NodeBudgetExceeded(need, sc.quad.node_budget)
    tk, wk = _time_rule(sc.T, sc.quad.time_nodes)
    paths = _CellPaths(sc, eps, tk)
    means = _mean_factors(sc)
    vol = (eps / s) ** sc.spec.dim
    out = []
    for phi in sc.battery:
        lo, hi = phi.space.box()
        jj, cells, pts = paths.nodes(lo, hi)
        weight = phi.space(pts)
        keep = weight != 0
        jj, cells, pts, weight = jj[keep], cells[keep], pts[keep], weight[keep]
        ue = paths.solution(jj, cells)
        uh = _homogenized_block(sc, zeta, tk, pts, means)
        per_t = ((ue - uh) * weight[None, :]).sum(axis=1) * vol
        out.append(float(np.sum(wk * phi.time(tk) * per_t)))
    return np.array(out)


def weak_error(sc: TransportScenario, eps, zeta):
    """``E(eps) = max_j |<u_eps - u, phi_j>|``."""
    return float(np.abs(weak_pairings(sc, eps, zeta)).max())


def l2_norm_spot(sc: TransportScenario, eps, t):
    """``||u_eps(t, .)||_{L^2}`` on the aligned nodes and an error estimate.

    Nodes fill the data supports enlarged by ``t sup|b|``, which contains
    the support of ``u_eps(t, .)``.  The error estimate compares with the
    rule on every other offset (half resolution)."""
    _check_horizon(sc, eps, t)
    d = sc.spec.dim
    s = sc.quad.space_factor
    boxes = [term.space.box() for term in sc.u0 + sc.f]
    reach = t * sc.spec.speed_bound()
    lo = np.min([b[0] for b in boxes], axis=0) - reach
    hi = np.max([b[1] for b in boxes], axis=0) + reach
    paths = _CellPaths(sc, eps, [t])
    idx = np.stack(np.unravel_index(np.arange(s**d), (s,) * d), -1)
    coarse = np.all(idx % 2 == 0, axis=-1) if s % 2 == 0 else np.ones(s**d, bool)
    fine_sum = coarse_sum = 0.0
    n_nodes = 0
    # cells in slabs along the first axis bound the memory use
    edges = np.linspace(lo[0], hi[0], max(1, int(np.ceil((hi[0] - lo[0]) / (256 * eps)))) + 1)
    for a, b in zip(edges[:-1], edges[1:]):
        slab_lo, slab_hi = lo.copy(), hi.copy()
        slab_lo[0], slab_hi[0] = a, b
        jj, cells, pts = paths.nodes(slab_lo, slab_hi)
        if b < hi[0]:
            keep = pts[:, 0] < b
            jj, cells = jj[keep], cells[keep]
        n_nodes += jj.size
        if n_nodes > sc.quad.node_budget:
            raise NodeBudgetExceeded(n_nodes, sc.quad.node_budget)
        u2 = paths.solution(jj, cells)[0] ** 2
        fine_sum += float(u2.sum())
        coarse_sum += float(u2[coarse[jj]].sum())
    h = eps / s
    sq_fine = fine_sum * h**d
    sq_coarse = coarse_sum * (2 * h) ** d if s % 2 == 0 else sq_fine
    norm = np.sqrt(sq_fine)
    err = abs(np.sqrt(sq_coarse) - norm)
    return float(norm), float(err)


def source_bound(sc: TransportScenario, n=65):
    """``C_f = sup_t sum_i |p_i(t)| ||theta_i||_{L^2} sup|v_i|`` (0 without source)."""
    if not sc.f:
        return 0.0
    d = sc.spec.dim
    ts = np.linspace(0.0, sc.T, n)
    total = np.zeros_like(ts)
    for term in sc.f:
        lo, hi = term.space.box()
        pts, vol = _space_grid(lo, hi, 1.0, 64, 10**7)
        th = np.sqrt(np.sum(term.space(pts) ** 2) * vol)
        total += np.abs(term.time(ts)) * th * term.periodic.sup(d)
    return float(total.max())


@dataclass
class SweepReport:
    """Per-eps weak errors, norm spot checks and the verdict."""

    epsilons: list
    errors: list
    pairings: list
    norms_initial: list
    norms_final: list
    norm_errors: list
    bound_ok: bool
    verdict: str
    zeta_used: np.ndarray
    b_mean: np.ndarray
    divergence_free: bool
    source_constant: float = 0.0
    notes: list = field(default_factory=list)

    def summary(self):
        return {
            "verdict": self.verdict,
            "epsilons": list(map(float, self.epsilons)),
            "weak_errors": list(map(float, self.errors)),
            "pairings": [list(map(float, p)) for p in self.pairings],
            "norms_initial": list(map(float, self.norms_initial)),
            "norms_final": list(map(float, self.norms_final)),
            "norm_errors": list(map(float, self.norm_errors)),
            "a_priori_bound_ok": bool(self.bound_ok),
            "source_constant": float(self.source_constant),
            "zeta_used": [float(v) for v in self.zeta_used],
            "b_mean": [float(v) for v in self.b_mean],
            "divergence_free": bool(self.divergence_free),
            "notes": list(self.notes),
        }

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "weak_error", "norm_initial", "norm_final", "norm_error", "verdict"])
            for e, err, n0, n1, ne in zip(self.epsilons, self.errors, self.norms_initial, self.norms_final,
                                          self.norm_errors):
                w.writerow([repr(float(e)), repr(float(err)), repr(float(n0)), repr(float(n1)), repr(float(ne)),
                            self.verdict])


# ratio E(eps_min) / E(eps_max) below which a monotone sweep counts as converging
CONVERGENCE_RATIO = 0.05
NON_CONVERGENCE_RATIO = 0.5
# absolute weak errors below this are treated as quadrature noise
NOISE_FLOOR = 1e-10


def classify_sweep(errors, noise=NOISE_FLOOR):
    """Verdict from the weak errors of a decreasing ``eps`` grid."""
    e = np.asarray(errors, dtype=float)
    if e.max() <= noise:
        return "converges"
    if e[-1] > NON_CONVERGENCE_RATIO * e[0]:
        return "non-convergent"
    decreasing = bool(np.all(np.diff(e) <= noise))
    if decreasing and e[-1] < CONVERGENCE_RATIO * e[0]:
        return "converges"
    return "inconclusive"


def run_sweep(sc: TransportScenario, zeta=None, norms=True) -> SweepReport:
    """Weak errors over the ``eps`` grid with drift ``zeta`` (default: the
    mean of ``b``), plus ``L^2`` spot checks of ``u_eps`` at ``0`` and ``T``."""
    bbar = sc.b_mean()
    zeta = bbar if zeta is None else np.asarray(zeta, dtype=float)
    notes = []
    divfree = sc.divergence_free
    if not divfree:
        notes.append("field is not divergence free: the convergence criterion does not apply")
    errors, pairings, n0s, n1s, nes = [], [], [], [], []
    cf = source_bound(sc)
    bound_ok = True
    for eps in sc.epsilon_grid:
        p = weak_pairings(sc, eps, zeta)
        pairings.append(p)
        errors.append(float(np.abs(p).max()))
        if norms:
            n0, e0 = l2_norm_spot(sc, eps, 0.0)
            n1, e1 = l2_norm_spot(sc, eps, sc.T)
            err = 3.0 * (e0 + e1)
            n0s.append(n0)
            n1s.append(n1)
            nes.append(err)
            if n1 > n0 + cf * sc.T + err:
                bound_ok = False
        else:
            n0s.append(float("nan"))
            n1s.append(float("nan"))
            nes.append(float("nan"))
    return SweepReport(list(sc.epsilon_grid), errors, pairings, n0s, n1s, nes, bound_ok,
                       classify_sweep(errors), np.asarray(zeta), bbar, divfree, cf, notes)


def oscillatory_pairing(g: SeparableTerm, eps, T=1.0, quad: TransportQuadrature | None = None):
    """``int_0^T int g(t, x, x/eps)^2 dx dt`` for separable ``g``."""
    quad = quad or TransportQuadrature()
    tk, wk = _time_rule(T, max(quad.time_nodes, len(g.time_poly) + 1))
    time_part = float(np.sum(wk * g.time(tk) ** 2))
    lo, hi = g.space.box()
    pts, vol = _space_grid(lo, hi, eps, quad.space_factor, quad.node_budget)
    vals = g.space(pts) * g.periodic(pts / eps)
    return time_part * float(np.sum(vals**2)) * vol


def pairing_limit(g: SeparableTerm, T=1.0, quad: QuadratureConfig | None = None, space_nodes=1024):
    """``int_0^T p^2 dt * int theta^2 dx * mean(v^2)``, the limit of
    :func:`oscillatory_pairing` as ``eps -> 0``."""
    tk, wk = _time_rule(T, len(g.time_poly) + 2)
    time_part = float(np.sum(wk * g.time(tk) ** 2))
    lo, hi = g.space.box()
    n = space_nodes if g.dim == 2 else 64
    pts, vol = _space_grid(lo, hi, 1.0, n / float(np.max(np.asarray(hi) - np.asarray(lo))), 10**8)
    space_part = float(np.sum(g.space(pts) ** 2)) * vol
    return time_part * space_part * g.periodic.mean_square(g.dim, quad)


# ---------------------------------------------------------------------------
# example scenarios


def _sine_factor(axis, amplitude=0.5):
    from .fields import FourierScalar, FourierTable
    k = [0, 0]
    k[axis] = 1
    return FourierScalar(FourierTable.from_terms(2, [((0, 0), 0, 1.0, 0.0), (tuple(k), 0, 0.0, amplitude)]))


def rotgrad_scenario(**overrides):
    """Divergence-free rotated gradient with ergodic drift: ``u0 = theta(x)
    (1 + sin(2 pi y1) / 2)``, no source, ``T = 1``.  Weak errors shrink."""
    from .fields import catalog
    spec = catalog()["rotgrad"]
    c0 = np.array([0.5, 0.5])
    drift = np.array([-np.sqrt(2.0), 1.0])
    kw = dict(
        spec=spec,
        u0=[SeparableTerm(Bump(c0, 0.3), _sine_factor(0))],
        T=1.0,
        battery=[SeparableTerm(Bump(c0, 0.25)),
                 SeparableTerm(Bump(c0 - 0.5 * drift, 0.25), time_poly=(0.0, 1.0))],
    )
    kw.update(overrides)
    return TransportScenario(**kw)


def shear_scenario(**overrides):
    """Shear flow ``(2 + sin(2 pi x2), 0)`` with ``u0 = theta(x)(1 + sin(2 pi
    y2) / 2)``: the drift is not unique, so weak errors against the mean
    drift do not shrink."""
    from .fields import catalog
    spec = catalog()["shear"]
    c0 = np.array([0.5, 0.5])
    kw = dict(
        spec=spec,
        u0=[SeparableTerm(Bump(c0, 0.3), _sine_factor(1))],
        T=1.0,
        battery=[SeparableTerm(Bump(c0 - np.array([0.5, 0.0]), 0.25)),
                 SeparableTerm(Bump(c0 - np.array([1.5, 0.0]), 0.25), time_poly=(0.0, 1.0))],
    )
    kw.update(overrides)
    return TransportScenario(**kw)


def shear_weak_limit(sc: TransportScenario, t, x, n=256):
    """Weak limit of ``u_eps(t, x)`` for the shear example:
    ``int_0^1 theta(x1 + t(2 + sin 2 pi s), x2) v(s) ds`` summed over the
    initial terms (``v`` depends on ``y2`` only)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    spec = sc.spec
    s = (np.arange(n) + 0.5) / n
    out = np.zeros(x.shape[0])
    for term in sc.u0:
        ys = np.zeros((n, 2))
        ys[:, spec.coord] = s
        vs = term.periodic(ys)
        speed = spec.base + spec.amplitude * np.sin(2 * np.pi * s)
        pos = np.repeat(x[:, None, :], n, axis=1)
        pos[..., spec.axis] += t * speed[None, :]
        out += (term.space(pos) * vs[None, :]).mean(axis=1)
    return out


def default_scenario(spec: FieldSpec, **overrides):
    """Generic scenario for any field: ``u0 = theta(x) (1 + sum_j sin(2 pi
    y_j) / (2 d))`` centred in the unit cell, no source, ``T = 1``, and two
    test bumps placed at the start and halfway along the mean drift."""
    from .fields import FourierScalar, FourierTable
    d = spec.dim
    terms = [((0,) * d, 0, 1.0, 0.0)]
    for j in range(d):
        k = [0] * d
        k[j] = 1
        terms.append((tuple(k), 0, 0.0, 0.5 / d))
    v = FourierScalar(FourierTable.from_terms(d, terms))
    c0 = np.full(d, 0.5)
    bbar = np.asarray(periodic_mean(spec, QuadratureConfig(), dim=d).value)
    kw = dict(
        spec=spec,
        u0=[SeparableTerm(Bump(c0, 0.3), v)],
        T=1.0,
        battery=[SeparableTerm(Bump(c0, 0.25)),
                 SeparableTerm(Bump(c0 - 0.5 * bbar, 0.25), time_poly=(0.0, 1.0))],
    )
    kw.update(overrides)
    return TransportScenario(**kw)


def _space_from_config(cfg, where):
    kind = cfg.get("kind", "bump")
    if kind == "bump":
        return Bump(tuple(cfg["center"]), float(cfg["radius"]), float(cfg.get("amplitude", 1.0)))
    if kind == "box":
        return BoxIndicator(tuple(cfg["lo"]), tuple(cfg["hi"]))
    raise ConfigurationError(f"{where}: unknown spatial profile kind {kind!r}")


def term_from_config(cfg, dim, where="term", base_dir=None):
    """``{space: {...}, periodic: number | scalar field, time: [c0, c1, ...]}``."""
    from .fields import scalar_from_config
    if not isinstance(cfg, dict) or "space" not in cfg:
        raise ConfigurationError(f"{where}: a data term needs a 'space' profile")
    periodic = cfg.get("periodic", 1.0)
    if isinstance(periodic, dict):
        periodic = scalar_from_config(periodic, dim, base_dir)
    elif not isinstance(periodic, (int, float)):
        raise ConfigurationError(f"{where}: 'periodic' must be a number or a scalar field")
    term = SeparableTerm(_space_from_config(cfg["space"], where), PeriodicFactor(periodic),
                         tuple(cfg.get("time", (1.0,))))
    if term.dim != dim:
        raise ConfigurationError(f"{where}: spatial profile has dimension {term.dim}, field has {dim}")
    return term


def scenario_from_config(cfg, spec: FieldSpec, integrator=None, cell_quad=None, threads=1, base_dir=None):
    """Build a scenario from the ``transport`` config section.  Missing data
    fall back to :func:`default_scenario`."""
    cfg = dict(cfg or {})
    d = spec.dim
    kw = {"threads": threads}
    if integrator is not None:
        kw["integrator"] = integrator
    if cell_quad is not None:
        kw["cell_quad"] = cell_quad
    for key in ("u0", "f", "battery"):
        if key in cfg:
            kw[key] = [term_from_config(t, d, f"transport.{key}[{i}]", base_dir) for i, t in enumerate(cfg[key])]
    if "T" in cfg:
        kw["T"] = float(cfg["T"])
    if "epsilon_grid" in cfg:
        kw["epsilon_grid"] = tuple(float(e) for e in cfg["epsilon_grid"])
    if "quadrature" in cfg:
        kw["quad"] = TransportQuadrature(**cfg["quadrature"])
    return default_scenario(spec, **kw)


__all__ = [
    "Bump", "BoxIndicator", "PeriodicFactor", "SeparableTerm", "TransportQuadrature", "TransportScenario",
    "solve_oscillating", "solve_homogenized", "weak_pairings", "weak_error", "l2_norm_spot", "source_bound",
    "SweepReport", "classify_sweep", "run_sweep", "oscillatory_pairing", "pairing_limit",
    "rotgrad_scenario", "shear_scenario", "shear_weak_limit", "default_scenario", "term_from_config",
    "scenario_from_config",
]
