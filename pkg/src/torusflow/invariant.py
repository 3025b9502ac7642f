"""Invariant densities of periodic flows and quadrature over the unit cell.

A density ``sigma`` is invariant for ``dX/dt = b(X)`` when ``div(sigma b) = 0``
in the sense of distributions, equivalently when
``int b . grad psi sigma dx = 0`` for every smooth periodic ``psi``.

Two regimes are kept apart:

* closed-form densities known from the field catalog (possibly unbounded,
  such as ``1 / rho_S`` for Stepanoff flows), integrated with a quadrature
  that refines dyadically towards declared singular points;
* bounded densities found as the null space of the Galerkin matrix of
  ``sigma -> div(sigma b)`` on trigonometric polynomials.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .errors import ConfigurationError, QuadratureDivergence
from .fields import (
    TWO_PI,
    FieldSpec,
    FourierScalar,
    FourierTable,
    Reciprocal,
    ScalarFieldSpec,
    StepanoffField,
    fourier_table_of,
    reduce_mod1,
)
from .flow import IntegratorConfig, integrate_batch

# ratio of successive corner-ring contributions above which refinement is
# declared non-convergent (the integrand is numerically not in L^1)
DIVERGENCE_RATIO = 0.99
NONNEGATIVITY_FLOOR = -1e-8
LIOUVILLE_THRESHOLD = 1e-4


@dataclass(frozen=True)
class QuadratureConfig:
    """Controls :func:`periodic_mean`.

    Parameters
    ----------
    base_resolution : cells per axis of the base grid (>= 8).
    max_depth : dyadic refinement levels towards singular points (<= 12).
    trigger_ratio : a cell is split when its one- and two-level Gauss
        estimates differ by more than this fraction of the estimate.
    cell_depth : maximum number of such splits of any single cell.
    target_rel_error : requested relative accuracy of the mean.
    gauss_order : Gauss-Legendre points per axis and cell.
    """

    base_resolution: int = 8
    max_depth: int = 12
    trigger_ratio: float = 1e-8
    target_rel_error: float = 1e-6
    gauss_order: int = 6
    cell_depth: int = 4

    def __post_init__(self):
        if self.base_resolution < 8:
            raise ConfigurationError("quadrature base resolution must be >= 8")
        if not 1 <= self.max_depth <= 12:
            raise ConfigurationError("quadrature depth must lie in 1..12")
        if not (self.trigger_ratio > 0 and self.target_rel_error > 0):
            raise ConfigurationError("quadrature tolerances must be positive")
        if not 0 <= self.cell_depth <= 12:
            raise ConfigurationError("cell_depth must lie in 0..12")
        if self.gauss_order < 2:
            raise ConfigurationError("gauss_order must be >= 2")


@dataclass(frozen=True)
class QuadratureResult:
    """Mean over the unit cell with an error estimate.

    ``value`` is a float for scalar integrands and an array otherwise.
    ``ring_ratio`` is the observed contraction of corner-ring contributions
    (``None`` without singular points).
    """

    value: float | np.ndarray
    error: float
    divergent: bool = False
    levels: int = 0
    ring_ratio: float | None = None
    evaluations: int = 0


def _as_integrand(g) -> Callable:
    if isinstance(g, (int, float)):
        c = float(g)
        return lambda x: np.full(x.shape[:-1], c)
    return g


def _singular_points_of(g):
    fn = getattr(g, "singular_points", None)
    return None if fn is None else np.atleast_2d(fn())


def _eval2d(fn, pts):
    """Evaluate on ``(N, d)`` points and return ``(N, m)``."""
    v = np.asarray(fn(pts), dtype=float)
    return v.reshape(pts.shape[0], -1)


class _GaussCells:
    """Tensor Gauss-Legendre rule on axis-aligned cubes of a common size."""

    def __init__(self, d, order):
        t, w = np.polynomial.legendre.leggauss(order)
        t = 0.5 * (t + 1.0)
        w = 0.5 * w
        self.nodes = np.array(list(itertools.product(t, repeat=d)))  # (q, d)
        self.weights = np.prod(np.array(list(itertools.product(w, repeat=d))), axis=1)
        self.children = np.array(list(itertools.product((0.0, 1.0), repeat=d)))
        self.d = d

    def integrate(self, fn, lows, h):
        """Integral over cubes ``[low, low + h]`` for each row of ``lows``."""
        pts = lows[:, None, :] + h * self.nodes[None, :, :]
        vals = _eval2d(fn, pts.reshape(-1, self.d)).reshape(lows.shape[0], self.nodes.shape[0], -1)
        return np.einsum("q,nqm->nm", self.weights, vals) * h**self.d

    def split(self, lows, h):
        """Lower corners of the children of size ``h``."""
        return (lows[:, None, :] + h * self.children[None, :, :]).reshape(-1, self.d)


def _adaptive(rule, fn, lows, h, cfg, depth):
    """Adaptive integral over a batch of equal cubes; returns (sum, err, evals)."""
    total = 0.0
    err = 0.0
    evals = 0
    nchild = rule.children.shape[0]
    coarse = rule.integrate(fn, lows, h)
    evals += coarse.shape[0] * rule.nodes.shape[0]
    for level in range(depth + 1):
        kids = rule.split(lows, 0.5 * h)
        fine_k = rule.integrate(fn, kids, 0.5 * h)
        evals += fine_k.shape[0] * rule.nodes.shape[0]
        fine = fine_k.reshape(lows.shape[0], nchild, -1).sum(axis=1)
        diff = np.abs(fine - coarse).max(axis=1)
        mag = np.abs(fine).max(axis=1)
        done = (diff <= cfg.trigger_ratio * np.maximum(mag, 1e-300)) | (level == depth)
        total = total + fine[done].sum(axis=0)
        err += diff[done].sum()
        if done.all():
            break
        keep = ~done
        lows = kids.reshape(lows.shape[0], nchild, -1)[keep].reshape(-1, rule.d)
        coarse = fine_k.reshape(-1, nchild, fine_k.shape[1])[keep].reshape(-1, fine_k.shape[1])
        h = 0.5 * h
    return total, err, evals


def _aitken(v):
    """Aitken delta-squared transform of a sequence (length n -> n - 2)."""
    v = np.asarray(v, dtype=float)
    d2 = v[2:] - 2 * v[1:-1] + v[:-2]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(np.abs(d2) > 1e-300, v[2:] - (v[2:] - v[1:-1]) ** 2 / d2, v[2:])
    return out


def _midpoint_rule(fn, d, n):
    g = (np.arange(n) + 0.5) / n
    pts = np.stack(np.meshgrid(*([g] * d), indexing="ij"), -1).reshape(-1, d)
    v = _eval2d(fn, pts)
    return v.mean(axis=0), float(np.abs(v).mean()), pts.shape[0]


def _periodic_trapezoid(fn, d, cfg):
    """Equispaced rule, spectrally accurate for smooth periodic integrands;
    the grid doubles until two levels agree to the target, relative to the
    mean absolute integrand (so that vanishing means terminate)."""
    n = cfg.base_resolution * cfg.gauss_order
    cap = {2: 768, 3: 96, 4: 32}.get(d, 32)
    val, scale, evals = _midpoint_rule(fn, d, n)
    err = float("inf")
    while 2 * n <= cap:
        fine, scale, ev = _midpoint_rule(fn, d, 2 * n)
        evals += ev
        err = float(np.abs(fine - val).max())
        val, n = fine, 2 * n
        if err <= cfg.target_rel_error * max(scale, 1e-300):
            break
    return val, err, evals


def periodic_mean(g, quad: QuadratureConfig | None = None, dim=None, singular_points=None,
                  strict=False) -> QuadratureResult:
    """Mean of a periodic (scalar or vector) integrand over ``[0, 1)^d``.

    Parameters
    ----------
    g : callable on ``(N, d)`` points returning ``(N,)`` or ``(N, m)``, a
        scalar field object, or a number.
    quad : quadrature settings.
    dim : dimension; taken from ``g.dim`` when available.
    singular_points : points where ``g`` may be unbounded.  Defaults to
        ``g.singular_points()`` when defined.  They must sit on vertices of
        the base grid once the grid is shifted onto the first of them.
    strict : raise :class:`QuadratureDivergence` instead of flagging.

    Notes
    -----
    Around each singular vertex the ``2^d`` adjacent cells are refined
    dyadically towards the vertex.  The contribution of the shell removed at
    each level ("corner ring") contracts geometrically for integrable
    power-type singularities; the remaining corner cube is extrapolated from
    the last two rings.  A ratio close to 1 means the integrand is not
    integrable at the resolved scales and sets ``divergent``.
    """
    quad = quad or QuadratureConfig()
    d = dim if dim is not None else getattr(g, "dim", None)
    if d is None:
        raise ConfigurationError("periodic_mean needs the dimension")
    fn = _as_integrand(g)
    sing = singular_points if singular_points is not None else _singular_points_of(g)
    scalar_out = None

    def finish(val, **kw):
        v = np.asarray(val, dtype=float)
        out = float(v[0]) if v.size == 1 and scalar_out is not False else v
        return QuadratureResult(value=out, **kw)

    probe = np.asarray(fn(np.full((1, d), 0.5 / quad.base_resolution + 0.123)))
    scalar_out = probe.ndim <= 1 and probe.size == 1
    if sing is None or len(sing) == 0:
        val, err, evals = _periodic_trapezoid(fn, d, quad)
        return finish(val, error=err, evaluations=evals)

    if quad.max_depth < 5:
        raise ConfigurationError("singular quadrature needs max_depth >= 5")
    sing = reduce_mod1(np.asarray(sing, dtype=float).reshape(-1, d))
    n = quad.base_resolution
    h = 1.0 / n
    shift = sing[0]
    lattice = (sing - shift) * n
    if np.abs(lattice - np.round(lattice)).max() > 1e-9:
        raise ConfigurationError("singular points must lie on vertices of the shifted base grid")
    vertices = {tuple(int(v) % n for v in np.round(p)) for p in lattice}

    rule = _GaussCells(d, quad.gauss_order)
    all_lows = np.array(list(itertools.product(range(n), repeat=d)), dtype=int)
    touching = np.zeros(len(all_lows), dtype=bool)
    offsets = np.array(list(itertools.product((0, 1), repeat=d)), dtype=int)
    for i, low in enumerate(all_lows):
        corners = {tuple(c) for c in (low + offsets) % n}
        touching[i] = bool(corners & vertices)
    regular = shift + h * all_lows[~touching]

    total, err, evals = (0.0, 0.0, 0)
    if regular.size:
        total, err, evals = _adaptive(rule, fn, regular, h, quad, quad.cell_depth)

    # corner recursion, all singular vertices and sign patterns batched
    signs = np.array(list(itertools.product((1.0, -1.0), repeat=d)))
    centres = shift + h * np.array(sorted(vertices), dtype=float)
    ring_kids = rule.children[1:]  # all children except the corner one

    def mapped(c, s):
        return lambda y: fn(c + s * y)

    rings = []
    size = h
    for level in range(quad.max_depth):
        half = 0.5 * size
        level_sum = 0.0
        for c in centres:
            for s in signs:
                lows = half * ring_kids
                r, e, ev = _adaptive(rule, mapped(c, s), lows, half, quad, quad.cell_depth)
                level_sum = level_sum + r
                err += e
                evals += ev
        rings.append(np.asarray(level_sum, dtype=float))
        size = half

    rings = np.array(rings)  # (levels, m)
    partial = total + np.cumsum(rings, axis=0)
    scale = np.maximum(np.abs(partial[-1]), 1e-300)
    divergent = False
    ratios = []
    value = partial[-1].copy()
    for j in range(rings.shape[1]):
        r = rings[:, j]
        if np.all(np.abs(r[-4:]) <= 1e-14 * scale[j]):
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            q = r[1:] / r[:-1]
        ratios.append(q[-1])
        if not np.all((q[-3:] >= 0.0) & (q[-3:] < DIVERGENCE_RATIO)):
            if abs(r[-1]) > quad.target_rel_error * scale[j]:
                divergent = True
            continue
        # geometric tail after each of the last levels, then Aitken on those
        # estimates (the ratio itself converges like 4^-level)
        # an empty ring four levels back leaves only three usable ratios
        k = 4 if 0.0 <= q[-4] < DIVERGENCE_RATIO else 3
        v = partial[-k:, j] + r[-k:] * q[-k:] / (1.0 - q[-k:])
        acc = _aitken(v)
        value[j] = acc[-1]
        err += float(abs(acc[-1] - (acc[-2] if acc.size > 1 else v[-1])))
    ring_ratio = float(max(ratios)) if ratios else 0.0
    if divergent and strict:
        raise QuadratureDivergence(
            f"corner refinement does not converge (ring ratio {ring_ratio:.3f}); integrand appears non-integrable")
    return finish(value, error=err, divergent=divergent, levels=quad.max_depth,
                  ring_ratio=ring_ratio, evaluations=evals)


# ---------------------------------------------------------------------------
# densities


@dataclass(frozen=True, eq=False)
class ScaledScalar(ScalarFieldSpec):
    """``factor * inner``."""

    inner: ScalarFieldSpec = None
    factor: float = 1.0

    @property
    def dim(self):
        return self.inner.dim

    def __call__(self, x):
        return self.factor * self.inner(x)

    def gradient(self, x):
        return self.factor * self.inner.gradient(x)

    def singular_points(self):
        fn = getattr(self.inner, "singular_points", None)
        return fn() if fn is not None else np.zeros((0, self.dim))

    def to_config(self):
        return {"kind": "scaled", "factor": self.factor, "inner": self.inner.to_config()}


@dataclass(frozen=True, eq=False)
class InvariantDensity:
    """A candidate invariant density ``sigma`` normalized to mean 1.

    ``label`` is ``"density"`` when the sampled minimum passes the
    nonnegativity floor, ``"signed"`` for other null-space elements.
    ``invariant`` records whether the Liouville residual is below threshold.
    """

    field: ScalarFieldSpec
    representation: str
    mean: float
    mean_error: float
    raw_mean: float
    min_sampled: float
    sample_count: int
    liouville_residual: float
    singular: bool
    label: str = "density"
    table: FourierTable | None = None
    singular_value: float | None = None

    @property
    def dim(self):
        return self.field.dim

    def __call__(self, x):
        return self.field(x)

    @property
    def nonnegativity_certificate(self):
        return {"min_sampled": self.min_sampled, "samples": self.sample_count}

    @property
    def is_density(self):
        return self.label == "density"

    @property
    def invariant(self):
        return self.liouville_residual < LIOUVILLE_THRESHOLD

    def singular_points(self):
        fn = getattr(self.field, "singular_points", None)
        return fn() if fn is not None else np.zeros((0, self.dim))

    def summary(self):
        return {
            "representation": self.representation,
            "label": self.label,
            "mean": self.mean,
            "mean_error": self.mean_error,
            "raw_mean": self.raw_mean,
            "nonnegativity_certificate": self.nonnegativity_certificate,
            "liouville_residual": self.liouville_residual,
            "singular": self.singular,
        }


def default_modes(d, kmax=4):
    """Integer vectors with ``0 < |k|_inf <= kmax``, one of each pair ``+-k``."""
    out = []
    for k in itertools.product(range(-kmax, kmax + 1), repeat=d):
        if any(k) and k > tuple(-v for v in k):
            out.append(k)
    return np.array(out, dtype=int)


def liouville_residual(sigma, spec: FieldSpec, modes=None, quad: QuadratureConfig | None = None,
                       speed=None) -> float:
    """``max_k |int b . grad psi_k sigma dx| / (|k| sup|b|)`` over
    ``psi_k in {sin 2 pi k.x, cos 2 pi k.x}``.

    ``sigma`` is any scalar callable (an :class:`InvariantDensity`, a field,
    or a number for constant densities).  Singular points declared by
    ``sigma`` are handled by :func:`periodic_mean`.
    """
    d = spec.dim
    modes = default_modes(d) if modes is None else np.atleast_2d(np.asarray(modes, dtype=int))
    if len(modes) == 0 or np.any(np.all(modes == 0, axis=1)):
        raise ConfigurationError("Liouville modes must be nonempty and exclude k = 0")
    sig = _as_integrand(sigma)
    sing = _singular_points_of(sigma) if not isinstance(sigma, (int, float)) else None
    kf = modes.astype(float)

    def integrand(x):
        x = np.asarray(x, dtype=float)
        phase = TWO_PI * (x @ kf.T)            # (N, M)
        bk = TWO_PI * (spec(x) @ kf.T)         # b . 2 pi k
        s = np.asarray(sig(x), dtype=float)[:, None]
        w = bk * s
        # grad sin = 2 pi k cos, grad cos = -2 pi k sin
        return np.concatenate([w * np.cos(phase), -w * np.sin(phase)], axis=1)

    res = periodic_mean(integrand, quad, dim=d, singular_points=sing, strict=True)
    vals = np.abs(np.asarray(res.value, dtype=float)).reshape(2, -1)
    norm = np.linalg.norm(kf, axis=1) * (speed if speed is not None else spec.speed_bound())
    return float((vals / norm).max())


def _sample_grid(d):
    n = {2: 256, 3: 64}.get(d, 24)
    g = (np.arange(n) + 0.5) / n
    return np.stack(np.meshgrid(*([g] * d), indexing="ij"), -1).reshape(-1, d)


def closed_form_density(spec: FieldSpec, quad: QuadratureConfig | None = None, modes=None) -> InvariantDensity:
    """Normalized closed-form invariant density declared by the catalog."""
    raw = spec.closed_form_density()
    if raw is None:
        raise ConfigurationError(f"no closed-form invariant density for field kind {spec.kind!r}")
    quad = quad or QuadratureConfig()
    m = periodic_mean(raw, quad, dim=spec.dim, strict=True)
    sigma = ScaledScalar(raw, 1.0 / float(m.value))
    singular = isinstance(raw, Reciprocal)
    pts = _sample_grid(spec.dim)
    vals = sigma(pts)
    mean_check = periodic_mean(sigma, quad, dim=spec.dim, strict=True)
    res = liouville_residual(sigma, spec, modes, quad)
    return InvariantDensity(
        field=sigma,
        representation="closed-form",
        mean=float(mean_check.value),
        mean_error=float(m.error / abs(m.value) + mean_check.error),
        raw_mean=float(m.value),
        min_sampled=float(vals.min()),
        sample_count=int(pts.shape[0]),
        liouville_residual=res,
        singular=singular,
        label="density" if vals.min() >= NONNEGATIVITY_FLOOR else "signed",
        table=raw.table if isinstance(raw, FourierScalar) else None,
    )


def stepanoff_density(spec: StepanoffField, quad: QuadratureConfig | None = None, modes=None) -> InvariantDensity:
    """``sigma_S / mean(sigma_S)`` with ``sigma_S = 1 / rho_S``."""
    if not isinstance(spec, StepanoffField):
        raise ConfigurationError("stepanoff_density needs a Stepanoff field")
    return closed_form_density(spec, quad, modes)


# ---------------------------------------------------------------------------
# spectral null space of sigma -> div(sigma b)


def _cube_modes(d, K):
    return np.array(list(itertools.product(range(-K, K + 1), repeat=d)), dtype=int)


def _real_basis(modes):
    """Map from real coefficients (constant, then cos/sin pairs over a half
    set of modes) to complex coefficients on ``modes``; also returns labels."""
    index = {tuple(k): i for i, k in enumerate(modes)}
    half = [k for k in map(tuple, modes) if any(k) and k > tuple(-v for v in k)]
    T = np.zeros((len(modes), 1 + 2 * len(half)), dtype=complex)
    T[index[(0,) * modes.shape[1]], 0] = 1.0
    labels = [("const", (0,) * modes.shape[1])]
    for j, k in enumerate(half):
        kn = tuple(-v for v in k)
        T[index[k], 1 + 2 * j] = 0.5
        T[index[kn], 1 + 2 * j] = 0.5
        T[index[k], 2 + 2 * j] = -0.5j
        T[index[kn], 2 + 2 * j] = 0.5j
        labels += [("cos", k), ("sin", k)]
    return T, labels


def divergence_matrix(spec: FieldSpec, K: int, grid=None):
    """Complex matrix taking coefficients of ``sigma`` on ``|k|_inf <= K`` to
    those of ``div(sigma b)`` on the same modes; also returns the modes."""
    d = spec.dim
    modes = _cube_modes(d, K)
    if grid is None:
        grid = max(8 * K, 64) if d == 2 else max(4 * K + 4, 16)
    table = fourier_table_of(spec, grid)
    bhat = table.dense(2 * K)  # (4K+1,)*d + (d,)
    diff = modes[:, None, :] - modes[None, :, :] + 2 * K
    b_kj = bhat[tuple(np.moveaxis(diff, -1, 0))]  # (N, N, d)
    M = 1j * TWO_PI * np.einsum("ki,kji->kj", modes.astype(float), b_kj)
    return M, modes


@dataclass
class SpectralResult:
    """Null space of the truncated divergence map."""

    elements: list
    singular_values: np.ndarray
    nullity: int
    K: int
    svd_tol: float
    residuals: np.ndarray
    operator_norm: float
    mean_bearing: bool

    @property
    def densities(self):
        return [e for e in self.elements if e.is_density]

    def summary(self):
        return {
            "K": self.K,
            "svd_tol": self.svd_tol,
            "nullity": self.nullity,
            "operator_norm": self.operator_norm,
            "smallest_singular_values": [float(v) for v in np.sort(self.singular_values)[: self.nullity + 5]],
            "elements": [e.summary() for e in self.elements],
        }


def _table_from_real(a, T, modes):
    c = T @ a
    keep = np.abs(c) > 0
    return FourierTable(modes[keep], c[keep][:, None])


def _grid_values(table, d, n):
    """Values of a scalar trig polynomial on the midpoint grid ``n^d``
    (flattened in C order), by inverse FFT."""
    K = table.bandwidth
    if 2 * K >= n:
        g = (np.arange(n) + 0.5) / n
        pts = np.stack(np.meshgrid(*([g] * d), indexing="ij"), -1).reshape(-1, d)
        return table.evaluate(pts)[:, 0]
    grid = np.zeros((n,) * d, dtype=complex)
    for k, c in zip(table.modes, table.coeffs[:, 0]):
        # half-cell shift of the midpoint grid
        grid[tuple(k % n)] += c * np.exp(1j * np.pi * k.sum() / n)
    return (np.fft.ifftn(grid) * n**d).real.ravel()


def spectral_invariant_densities(spec: FieldSpec, K: int = 8, svd_tol: float = 1e-8,
                                 quad: QuadratureConfig | None = None, grid=None,
                                 liouville_modes=None) -> SpectralResult:
    """Bounded invariant densities as trigonometric polynomials of degree ``K``.

    The null space of the real Galerkin matrix of ``sigma -> div(sigma b)``
    (singular values below ``svd_tol`` times the largest) is rotated so that
    at most one basis element has nonzero mean; that element is scaled to
    mean 1.  Elements whose sampled minimum passes the nonnegativity floor
    are labelled ``"density"``, the rest ``"signed"``.
    """
    if K < 4:
        raise ConfigurationError("spectral cutoff K must be >= 4")
    d = spec.dim
    M, modes = divergence_matrix(spec, K, grid)
    T, _ = _real_basis(modes)
    A = M @ T
    R = np.concatenate([A.real, A.imag], axis=0)
    _, s, Vt = np.linalg.svd(R, full_matrices=True)
    smax = float(s.max()) if s.size else 0.0
    s_full = np.concatenate([s, np.zeros(Vt.shape[0] - s.size)])
    null = Vt[s_full < svd_tol * smax].T  # (p, nullity), orthonormal columns
    nullity = null.shape[1]
    elements = []
    mean_bearing = False
    residuals = np.zeros(0)
    if nullity:
        m = null[0]  # mean functional is the constant coefficient
        basis = []
        if np.linalg.norm(m) > 1e-10:
            mean_bearing = True
            q = m / np.linalg.norm(m)
            v0 = null @ q / np.linalg.norm(m)
            # orthonormal complement of q in coefficient space of the null basis
            _, _, qt = np.linalg.svd(q[None, :])
            comp = qt[1:].T
            basis.append(v0)
            basis += [null @ comp[:, i] for i in range(comp.shape[1])]
        else:
            basis = [null[:, i] for i in range(nullity)]
        residuals = np.array([np.linalg.norm(R @ v) / np.linalg.norm(v) for v in basis])
        speed = spec.speed_bound()
        n = {2: 256, 3: 64}.get(d, 24)
        for i, v in enumerate(basis):
            table = _table_from_real(v, T, modes)
            vals = _grid_values(table, d, n)
            is_mean = mean_bearing and i == 0
            if not is_mean:
                vals = vals / max(np.abs(vals).max(), 1e-300)
                v = v / max(np.abs(_grid_values(table, d, n)).max(), 1e-300)
                table = _table_from_real(v, T, modes)
            sigma = FourierScalar(table)
            res = liouville_residual(sigma, spec, liouville_modes, quad, speed=speed)
            elements.append(InvariantDensity(
                field=sigma,
                representation="fourier",
                mean=float(table.mean()[0]),
                mean_error=0.0,
                raw_mean=float(table.mean()[0]),
                min_sampled=float(vals.min()),
                sample_count=int(vals.size),
                liouville_residual=res,
                singular=False,
                label="density" if is_mean and vals.min() >= NONNEGATIVITY_FLOOR else "signed",
                table=table,
                singular_value=float(residuals[i]),
            ))
    return SpectralResult(elements, s, nullity, K, svd_tol, residuals, smax, mean_bearing)


def nonnegative_combination(result: SpectralResult, n=64):
    """Search the null space for a nonnegative element of mean 1.

    Solves the linear program ``max t`` subject to ``sum_i c_i v_i >= t`` on
    an ``n^d`` grid and ``mean = 1``.  Returns ``(t, coefficients)``; a
    negative optimum ``t`` certifies (on the grid) that no nonnegative
    element exists.
    """
    elems = result.elements
    if not elems or not result.mean_bearing:
        return -np.inf, None
    d = elems[0].dim
    V = np.stack([_grid_values(e.table, d, n) for e in elems], axis=1)  # (G, p)
    means = np.array([e.mean for e in elems])
    p = V.shape[1]
    # variables (c_1..c_p, t); minimize -t
    cost = np.zeros(p + 1)
    cost[-1] = -1.0
    A_ub = np.concatenate([-V, np.ones((V.shape[0], 1))], axis=1)
    b_ub = np.zeros(V.shape[0])
    A_eq = np.concatenate([means, [0.0]])[None, :]
    bounds = [(-1e3, 1e3)] * p + [(None, 1.0)]
    sol = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=bounds, method="highs")
    if not sol.success:
        return -np.inf, None
    return float(sol.x[-1]), sol.x[:p]


def perturbed_densities(result: SpectralResult, spec: FieldSpec, quad: QuadratureConfig | None = None,
                        liouville_modes=None):
    """Extreme nonnegative densities ``v0 + alpha s`` along each signed element.

    For every signed element ``s`` the largest ``alpha`` of either sign keeping
    the sampled minimum nonnegative is used.  Only meaningful when the
    mean-bearing element is itself a density.
    """
    if not result.elements or not result.elements[0].is_density:
        return []
    v0 = result.elements[0]
    d = v0.dim
    n = {2: 256, 3: 64}.get(d, 24)
    base = _grid_values(v0.table, d, n)
    out = []
    speed = spec.speed_bound()
    for s in result.elements[1:]:
        sv = _grid_values(s.table, d, n)
        for sign in (1.0, -1.0):
            neg = sign * sv < 0
            if not neg.any():
                continue
            alpha = sign * float(np.min(base[neg] / -(sign * sv[neg])))
            coeffs = np.concatenate([v0.table.dense(result.K).ravel()]) + alpha * s.table.dense(result.K).ravel()
            modes = _cube_modes(d, result.K)
            keep = np.abs(coeffs) > 0
            table = FourierTable(modes[keep], coeffs[keep][:, None])
            vals = _grid_values(table, d, n)
            sigma = FourierScalar(table)
            out.append(InvariantDensity(
                field=sigma, representation="fourier", mean=float(table.mean()[0]), mean_error=0.0,
                raw_mean=float(table.mean()[0]), min_sampled=float(vals.min()), sample_count=int(vals.size),
                liouville_residual=liouville_residual(sigma, spec, liouville_modes, quad, speed=speed),
                singular=False, label="density" if vals.min() >= NONNEGATIVITY_FLOOR else "signed",
                table=table))
    return out


def density_transport_check(sigma, spec: FieldSpec, t, sample, cfg: IntegratorConfig | None = None,
                            exclusion=0.1) -> float:
    """``max_y |sigma(X(t, y)) J(t, y) - sigma(y)|`` over sample points.

    Points within ``exclusion`` (torus distance) of a singular point of
    ``sigma`` are skipped.
    """
    y = np.atleast_2d(np.asarray(sample, dtype=float))
    sing = _singular_points_of(sigma)
    if sing is not None and len(sing):
        diff = reduce_mod1(y[:, None, :] - sing[None, :, :] + 0.5) - 0.5
        far = np.linalg.norm(diff, axis=-1).min(axis=1) >= exclusion
        y = y[far]
    if y.shape[0] == 0:
        return 0.0
    if t == 0:
        return float(np.abs(np.asarray(sigma(y)) - np.asarray(sigma(y))).max())
    res = integrate_batch(spec, y, t, cfg)
    lhs = np.asarray(sigma(res.final)) * np.exp(res.final_log_jacobian)
    return float(np.abs(lhs - np.asarray(sigma(y))).max())


__all__ = [
    "QuadratureConfig", "QuadratureResult", "periodic_mean", "InvariantDensity", "ScaledScalar",
    "liouville_residual", "closed_form_density", "stepanoff_density", "divergence_matrix",
    "SpectralResult", "spectral_invariant_densities", "nonnegative_combination", "perturbed_densities",
    "density_transport_check", "default_modes",
]
