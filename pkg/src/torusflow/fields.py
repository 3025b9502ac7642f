"""Z^d-periodic scalar and vector fields on the torus, with analytic derivatives.

Every field is evaluated at the point reduced modulo 1, so that values are
periodic by construction.  Points are arrays of shape ``(..., d)``; vector
fields return ``(..., d)``, Jacobians ``(..., d, d)`` with entry
``[i, j] = d b_i / d x_j``.

The catalog mirrors the classical examples used throughout the package:
constant (linear) flows, Stepanoff flows ``rho_S * xi``, shear flows,
gradient flows ``grad u`` and rotated gradients ``rho_0 * R_perp grad u``.
Trigonometric polynomials (:class:`FourierTable`) are the extension mechanism
for user-defined fields.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar

import numpy as np

from .errors import ConfigurationError

TWO_PI = 2.0 * np.pi

# default integer-relation search bound for incommensurability checks
INCOMMENSURABLE_BOUND = 64


def reduce_mod1(x):
    x = np.asarray(x, dtype=float)
    return x - np.floor(x)


def rot_perp(v):
    """Rotate planar vectors by +pi/2: (a, b) -> (-b, a)."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


_RPERP = np.array([[0.0, -1.0], [1.0, 0.0]])


def integer_relation(xi, bound=None, rtol=1e-10):
    """Return a nonzero integer vector ``k`` with ``|k|_inf <= bound`` and
    ``k . xi ~ 0``, or ``None`` if there is none.

    Floating-point data cannot certify incommensurability; this only rules out
    relations with small coefficients.  The bound is lowered to 16 for d = 4 to
    keep the search below ~10^8 candidates.
    """
    xi = np.asarray(xi, dtype=float)
    d = xi.size
    if bound is None:
        bound = INCOMMENSURABLE_BOUND if d <= 3 else 16
    scale = np.abs(xi).sum()
    if scale == 0.0:
        return np.eye(d, dtype=int)[0]
    r = np.arange(-bound, bound + 1)
    # enumerate the last d-1 coordinates, solve for the closest first one
    tail = np.array(np.meshgrid(*([r] * (d - 1)), indexing="ij")).reshape(d - 1, -1).T
    partial = tail @ xi[1:]
    if xi[0] != 0.0:
        k0 = np.clip(np.rint(-partial / xi[0]), -bound, bound)
    else:
        k0 = np.zeros_like(partial)
    resid = np.abs(k0 * xi[0] + partial)
    nonzero = (k0 != 0) | np.any(tail != 0, axis=1)
    kscale = np.maximum(np.abs(k0), np.abs(tail).max(axis=1, initial=0))
    hit = nonzero & (resid <= rtol * scale * np.maximum(kscale, 1))
    if not hit.any():
        return None
    i = int(np.flatnonzero(hit)[0])
    return np.concatenate([[int(k0[i])], tail[i]]).astype(int)


def check_incommensurable(xi, bound=None):
    k = integer_relation(xi, bound)
    if k is not None:
        raise ConfigurationError(
            f"direction {list(np.asarray(xi, float))} satisfies the integer relation "
            f"k . xi = 0 with k = {k.tolist()}"
        )


# ---------------------------------------------------------------------------
# trigonometric polynomials


@dataclass(frozen=True, eq=False)
class FourierTable:
    """Real trigonometric polynomial ``sum_k c_k exp(2 pi i k.x)``.

    ``modes`` is ``(M, d)`` integer, ``coeffs`` is ``(M, m)`` complex for an
    ``m``-component output.  The table must be closed under ``k -> -k`` with
    conjugate coefficients so that the field is real.
    """

    modes: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        modes = np.atleast_2d(np.asarray(self.modes, dtype=int))
        coeffs = np.asarray(self.coeffs, dtype=complex)
        if coeffs.ndim == 1:
            coeffs = coeffs[:, None]
        if modes.shape[0] != coeffs.shape[0]:
            raise ConfigurationError("Fourier table: modes and coefficients differ in length")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "coeffs", coeffs)
        self._check_symmetry()

    def _check_symmetry(self, tol=1e-12):
        index = {tuple(k): i for i, k in enumerate(self.modes)}
        if len(index) != len(self.modes):
            raise ConfigurationError("Fourier table has repeated modes")
        scale = max(np.abs(self.coeffs).max(initial=0.0), 1.0)
        for k, i in index.items():
            j = index.get(tuple(-np.asarray(k)))
            if j is None:
                if np.abs(self.coeffs[i]).max() > tol * scale:
                    raise ConfigurationError(f"Fourier table lacks the conjugate of mode {k}")
                continue
            if np.abs(self.coeffs[j] - np.conj(self.coeffs[i])).max() > tol * scale:
                raise ConfigurationError(f"Fourier coefficients of mode {k} are not conjugate-symmetric")

    @property
    def dim(self):
        return self.modes.shape[1]

    @property
    def n_components(self):
        return self.coeffs.shape[1]

    @property
    def bandwidth(self):
        return int(np.abs(self.modes).max(initial=0))

    @classmethod
    def from_terms(cls, dim, terms, n_components=1):
        """Build from real terms ``(k, component, a, b)`` meaning
        ``a cos(2 pi k.x) + b sin(2 pi k.x)`` added to ``component``.
        A zero ``k`` contributes the constant ``a``."""
        acc = {}
        for k, comp, a, b in terms:
            k = tuple(int(v) for v in k)
            if len(k) != dim:
                raise ConfigurationError(f"mode {k} does not have dimension {dim}")
            for kk, c in ((k, 0.5 * (a - 1j * b)), (tuple(-v for v in k), 0.5 * (a + 1j * b))):
                row = acc.setdefault(kk, np.zeros(n_components, dtype=complex))
                row[comp] += c
        if not acc:
            acc[(0,) * dim] = np.zeros(n_components, dtype=complex)
        modes = np.array(list(acc.keys()), dtype=int)
        coeffs = np.array(list(acc.values()))
        return cls(modes, coeffs)

    @classmethod
    def from_csv(cls, path, dim, n_components=None):
        """Rows ``k_1, ..., k_d, component, re, im``; ``#`` starts a comment."""
        rows = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    vals = [float(v) for v in row]
                except ValueError:
                    if lineno == 1:
                        continue  # header
                    raise ConfigurationError(f"{path}:{lineno}: non-numeric Fourier row")
                if len(vals) != dim + 3:
                    raise ConfigurationError(f"{path}:{lineno}: expected {dim + 3} columns, got {len(vals)}")
                rows.append(vals)
        if not rows:
            raise ConfigurationError(f"{path}: no Fourier rows")
        ncomp = n_components or int(max(r[dim] for r in rows)) + 1
        acc = {}
        for r in rows:
            k = tuple(int(v) for v in r[:dim])
            comp = int(r[dim])
            if not 0 <= comp < ncomp:
                raise ConfigurationError(f"{path}: component index {comp} out of range")
            acc.setdefault(k, np.zeros(ncomp, dtype=complex))[comp] += r[dim + 1] + 1j * r[dim + 2]
        return cls(np.array(list(acc.keys())), np.array(list(acc.values())))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"k{i + 1}" for i in range(self.dim)] + ["component", "re", "im"])
            for k, c in zip(self.modes, self.coeffs):
                for comp in range(self.n_components):
                    if c[comp] != 0:
                        w.writerow([int(v) for v in k] + [comp, repr(float(c[comp].real)), repr(float(c[comp].imag))])

    def _phases(self, x):
        x = reduce_mod1(x)
        return np.exp(1j * TWO_PI * (x @ self.modes.T))

    def evaluate(self, x):
        return (self._phases(x) @ self.coeffs).real

    def gradient(self, x):
        """``(..., m, d)`` array of first derivatives."""
        e = self._phases(x)
        # d/dx_j exp(2 pi i k.x) = 2 pi i k_j exp(...)
        M, m = self.coeffs.shape
        c = (self.coeffs[:, :, None] * (1j * TWO_PI * self.modes)[:, None, :]).reshape(M, m * self.dim)
        return (e @ c).real.reshape(e.shape[:-1] + (m, self.dim))

    def hessian(self, x):
        """``(..., m, d, d)`` array of second derivatives."""
        e = self._phases(x)
        kk = -(TWO_PI**2) * np.einsum("ni,nj->nij", self.modes, self.modes)
        return np.einsum("...n,nm,nij->...mij", e, self.coeffs, kk).real

    def mean(self):
        hit = np.all(self.modes == 0, axis=1)
        return self.coeffs[hit].sum(axis=0).real

    def dense(self, K=None):
        """Coefficients on the full cube ``|k|_inf <= K`` as an array of shape
        ``(2K+1,)*d + (m,)`` indexed by ``k + K``."""
        K = self.bandwidth if K is None else K
        out = np.zeros((2 * K + 1,) * self.dim + (self.n_components,), dtype=complex)
        for k, c in zip(self.modes, self.coeffs):
            if np.abs(k).max() <= K:
                out[tuple(k + K)] += c
        return out


def fourier_coefficients(fn, dim, n_out, grid=64):
    """Sample a periodic function on a ``grid**dim`` lattice and return its
    FFT coefficients as a :class:`FourierTable` truncated to ``|k| < grid/2``."""
    axes = [np.arange(grid) / grid] * dim
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vals = np.asarray(fn(pts)).reshape((grid,) * dim + (n_out,))
    c = np.fft.fftn(vals, axes=tuple(range(dim))) / grid**dim
    K = grid // 2 - 1
    ks = np.array(list(itertools.product(range(-K, K + 1), repeat=dim)), dtype=int)
    idx = tuple((ks % grid).T)
    coeffs = c[idx]
    # enforce exact conjugate symmetry (round-off)
    neg = tuple(((-ks) % grid).T)
    coeffs = 0.5 * (coeffs + np.conj(c[neg]))
    return FourierTable(ks, coeffs)


# ---------------------------------------------------------------------------
# scalar fields


@dataclass(frozen=True, eq=False)
class ScalarFieldSpec:
    """Base class for periodic scalar fields (densities, potentials, speeds)."""

    kind: ClassVar[str] = "scalar"

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def __call__(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def zeros(self):
        """Known zeros in ``[0, 1)^d`` (empty for nonvanishing fields)."""
        return np.zeros((0, self.dim))

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ConstantScalar(ScalarFieldSpec):
    value: float = 1.0
    d: int = 2
    kind: ClassVar[str] = "constant"

    @property
    def dim(self):
        return self.d

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], float(self.value))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (x.shape[-1],))

    def zeros(self):
        if self.value == 0:
            return np.zeros((1, self.d))
        return np.zeros((0, self.d))

    def to_config(self):
        return {"kind": "constant", "value": self.value, "dim": self.d}


@dataclass(frozen=True, eq=False)
class FourierScalar(ScalarFieldSpec):
    table: FourierTable
    kind: ClassVar[str] = "fourier"

    def __post_init__(self):
        if self.table.n_components != 1:
            raise ConfigurationError("scalar Fourier field needs a single component")

    @property
    def dim(self):
        return self.table.dim

    def __call__(self, x):
        return self.table.evaluate(x)[..., 0]

    def gradient(self, x):
        return self.table.gradient(x)[..., 0, :]

    def hessian(self, x):
        return self.table.hessian(x)[..., 0, :, :]

    def to_config(self):
        return {
            "kind": "fourier",
            "modes": self.table.modes.tolist(),
            "coeffs": [[float(c.real), float(c.imag)] for c in self.table.coeffs[:, 0]],
        }


@dataclass(frozen=True, eq=False)
class StepanoffRho(ScalarFieldSpec):
    """``(sum_i sin^2(pi x_i))^beta0``: nonnegative, vanishing only on Z^d.

    For ``beta0 in (1/2, 1)`` it is C^1 and ``1/rho`` is integrable in any
    dimension ``d >= 2`` (the singularity behaves like ``|x|^(-2 beta0)``).
    """

    beta0: float = 0.75
    d: int = 2
    kind: ClassVar[str] = "stepanoff-rho"

    def __post_init__(self):
        if not 0.5 < self.beta0 < 1.0:
            raise ConfigurationError(f"beta0 must lie in (1/2, 1), got {self.beta0}")
        if not 2 <= self.d <= 4:
            raise ConfigurationError(f"dimension must be 2..4, got {self.d}")

    @property
    def dim(self):
        return self.d

    def _s(self, x):
        x = reduce_mod1(x)
        return np.sum(np.sin(np.pi * x) ** 2, axis=-1), x

    def __call__(self, x):
        s, _ = self._s(x)
        return s**self.beta0

    def gradient(self, x):
        s, xr = self._s(x)
        ds = np.pi * np.sin(TWO_PI * xr)
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(s > 0, self.beta0 * s ** (self.beta0 - 1.0), 0.0)
        return fac[..., None] * ds

    def zeros(self):
        return np.zeros((1, self.d))

    @property
    def singular_exponent(self):
        """Homogeneity degree of ``1/rho`` at its zeros (``-2 beta0``)."""
        return -2.0 * self.beta0

    def to_config(self):
        return {"kind": "stepanoff-rho", "beta0": self.beta0, "dim": self.d}


# ---------------------------------------------------------------------------
# vector fields


@dataclass(frozen=True, eq=False)
class FieldSpec:
    """Base class for periodic C^1 vector fields ``b`` on the d-torus."""

    kind: ClassVar[str] = "field"

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def __call__(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def divergence(self, x):
        return np.trace(self.jacobian(x), axis1=-2, axis2=-1)

    def stationary_points(self):
        """Catalog-declared zeros of ``b`` in ``[0,1)^d`` (representatives
        when the zero set is not discrete)."""
        return np.zeros((0, self.dim))

    def closed_form_density(self):
        """Unnormalized closed-form invariant density as a scalar field, if the
        catalog knows one, else ``None``."""
        return None

    @property
    def divergence_free(self) -> bool | None:
        """``True``/``False`` when known analytically, ``None`` otherwise."""
        return None

    def to_config(self) -> dict:
        raise NotImplementedError

    def speed_bound(self, n=64):
        """Sampled ``sup |b|`` on an ``n^d`` grid."""
        g = np.arange(n) / n
        pts = np.stack(np.meshgrid(*([g] * self.dim), indexing="ij"), -1).reshape(-1, self.dim)
        return float(np.linalg.norm(self(pts), axis=-1).max())


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d:
        raise ConfigurationError(f"points must have last dimension {d}, got shape {x.shape}")
    return x


@dataclass(frozen=True, eq=False)
class ConstantField(FieldSpec):
    xi: tuple = (1.0, 0.0)
    kind: ClassVar[str] = "constant"

    def __post_init__(self):
        xi = tuple(float(v) for v in self.xi)
        if not 2 <= len(xi) <= 4:
            raise ConfigurationError("constant field needs 2 <= d <= 4")
        object.__setattr__(self, "xi", xi)

    @property
    def dim(self):
        return len(self.xi)

    def __call__(self, x):
        x = _as_points(x, self.dim)
        return np.broadcast_to(np.array(self.xi), x.shape).copy()

    def jacobian(self, x):
        x = _as_points(x, self.dim)
        return np.zeros(x.shape + (self.dim,))

    def divergence(self, x):
        x = _as_points(x, self.dim)
        return np.zeros(x.shape[:-1])

    def stationary_points(self):
        if not any(self.xi):
            return np.zeros((1, self.dim))
        return np.zeros((0, self.dim))

    def closed_form_density(self):
        return ConstantScalar(1.0, self.dim)

    @property
    def divergence_free(self):
        return True

    def to_config(self):
        return {"kind": "constant", "xi": list(self.xi)}


@dataclass(frozen=True, eq=False)
class FourierField(FieldSpec):
    table: FourierTable
    kind: ClassVar[str] = "fourier"

    def __post_init__(self):
        if self.table.n_components != self.table.dim:
            raise ConfigurationError("vector Fourier field needs d components")
        if not 2 <= self.table.dim <= 4:
            raise ConfigurationError("Fourier field needs 2 <= d <= 4")

    @property
    def dim(self):
        return self.table.dim

    def __call__(self, x):
        return self.table.evaluate(_as_points(x, self.dim))

    def jacobian(self, x):
        return self.table.gradient(_as_points(x, self.dim))

    def to_config(self):
        return {
            "kind": "fourier",
            "dim": self.dim,
            "modes": self.table.modes.tolist(),
            "coeffs": [[[float(c.real), float(c.imag)] for c in row] for row in self.table.coeffs],
        }


@dataclass(frozen=True, eq=False)
class StepanoffField(FieldSpec):
    """``b_S = rho_S * xi`` with ``rho_S = (sum sin^2(pi x_i))^beta0``."""

    beta0: float = 0.75
    xi: tuple = (1.0, float(np.sqrt(2.0)))
    check_bound: int | None = None
    kind: ClassVar[str] = "stepanoff"

    def __post_init__(self):
        xi = tuple(float(v) for v in self.xi)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "rho", StepanoffRho(self.beta0, len(xi)))
        check_incommensurable(xi, self.check_bound)

    @property
    def dim(self):
        return len(self.xi)

    def __call__(self, x):
        x = _as_points(x, self.dim)
        return self.rho(x)[..., None] * np.array(self.xi)

    def jacobian(self, x):
        x = _as_points(x, self.dim)
        return np.einsum("i,...j->...ij", np.array(self.xi), self.rho.gradient(x))

    def divergence(self, x):
        x = _as_points(x, self.dim)
        return self.rho.gradient(x) @ np.array(self.xi)

    def stationary_points(self):
        return self.rho.zeros()

    def closed_form_density(self):
        return Reciprocal(self.rho)

    @property
    def divergence_free(self):
        return False

    def to_config(self):
        return {"kind": "stepanoff", "beta0": self.beta0, "xi": list(self.xi)}


@dataclass(frozen=True, eq=False)
class ShearField(FieldSpec):
    """``b_axis = base + amplitude * sin(2 pi x_coord)``, other components 0."""

    base: float = 2.0
    amplitude: float = 1.0
    axis: int = 0
    coord: int = 1
    d: int = 2
    kind: ClassVar[str] = "shear"

    def __post_init__(self):
        if self.axis == self.coord or not (0 <= self.axis < self.d and 0 <= self.coord < self.d):
            raise ConfigurationError("shear field needs distinct axis and coord in range")

    @property
    def dim(self):
        return self.d

    def __call__(self, x):
        x = reduce_mod1(_as_points(x, self.dim))
        out = np.zeros(x.shape)
        out[..., self.axis] = self.base + self.amplitude * np.sin(TWO_PI * x[..., self.coord])
        return out

    def jacobian(self, x):
        x = reduce_mod1(_as_points(x, self.dim))
        out = np.zeros(x.shape + (self.dim,))
        out[..., self.axis, self.coord] = TWO_PI * self.amplitude * np.cos(TWO_PI * x[..., self.coord])
        return out

    def divergence(self, x):
        x = _as_points(x, self.dim)
        return np.zeros(x.shape[:-1])

    def stationary_points(self):
        if abs(self.base) > abs(self.amplitude):
            return np.zeros((0, self.dim))
        # representative zero on the line where the profile vanishes
        s = float(np.arcsin(-self.base / self.amplitude) / TWO_PI) % 1.0 if self.amplitude else 0.0
        p = np.zeros((1, self.dim))
        p[0, self.coord] = s
        return p

    def closed_form_density(self):
        return ConstantScalar(1.0, self.dim)

    @property
    def divergence_free(self):
        return True

    def to_config(self):
        return {"kind": "shear", "base": self.base, "amplitude": self.amplitude,
                "axis": self.axis, "coord": self.coord, "dim": self.d}


@dataclass(frozen=True, eq=False)
class GradientField(FieldSpec):
    """``b = grad u`` for a periodic Fourier potential ``u``."""

    potential: FourierScalar = None
    kind: ClassVar[str] = "gradient"

    def __post_init__(self):
        if self.potential is None:
            object.__setattr__(self, "potential", default_gradient_potential())

    @property
    def dim(self):
        return self.potential.dim

    def __call__(self, x):
        return self.potential.gradient(_as_points(x, self.dim))

    def jacobian(self, x):
        return self.potential.hessian(_as_points(x, self.dim))

    def stationary_points(self):
        # generic potentials have at least their max and min; the catalog
        # default u = cos(2 pi x1)/(2 pi) vanishes on x1 in {0, 1/2}
        pts = _grid_zeros(self)
        return np.array(pts) if pts else np.zeros((0, self.dim))

    @property
    def divergence_free(self):
        return None

    def to_config(self):
        return {"kind": "gradient", "potential": self.potential.to_config()}


def _grid_zeros(field, n=16, tol=1e-12):
    g = np.arange(n) / n
    pts = np.stack(np.meshgrid(*([g] * field.dim), indexing="ij"), -1).reshape(-1, field.dim)
    speed = np.linalg.norm(field(pts), axis=-1)
    return [tuple(p) for p in pts[speed < tol]]


def default_gradient_potential(d=2):
    """``u = cos(2 pi x_1) / (2 pi)``."""
    k = [0] * d
    k[0] = 1
    return FourierScalar(FourierTable.from_terms(d, [(k, 0, 1.0 / TWO_PI, 0.0)]))


@dataclass(frozen=True, eq=False)
class RhoRotGradField(FieldSpec):
    """Planar ``b = rho_0 * R_perp grad u`` with ``u = xi.x + p(x)``, ``p`` periodic.

    ``R_perp grad u`` is divergence free; ``1/rho_0`` is an invariant density.
    With ``rho_0 == 1`` the field itself is divergence free.
    """

    xi: tuple = (1.0, float(np.sqrt(2.0)))
    periodic: FourierScalar | None = None
    rho: ScalarFieldSpec | None = None
    kind: ClassVar[str] = "rho-rot-grad"

    def __post_init__(self):
        xi = tuple(float(v) for v in self.xi)
        if len(xi) != 2:
            raise ConfigurationError("rho-rot-grad fields are planar (d = 2)")
        object.__setattr__(self, "xi", xi)
        if self.periodic is None:
            object.__setattr__(self, "periodic", FourierScalar(FourierTable.from_terms(2, [])))
        if self.rho is None:
            object.__setattr__(self, "rho", ConstantScalar(1.0, 2))
        check_incommensurable(xi)
        grad = self.grad_u(_unit_grid(2, 64))
        if np.linalg.norm(grad, axis=-1).min() <= 1e-8:
            raise ConfigurationError("grad u vanishes: rotated-gradient part must be non-vanishing")

    @property
    def dim(self):
        return 2

    def grad_u(self, x):
        return np.array(self.xi) + self.periodic.gradient(x)

    def __call__(self, x):
        x = _as_points(x, 2)
        return self.rho(x)[..., None] * rot_perp(self.grad_u(x))

    def jacobian(self, x):
        x = _as_points(x, 2)
        w = rot_perp(self.grad_u(x))
        hw = np.einsum("ik,...kj->...ij", _RPERP, self.periodic.hessian(x))
        return np.einsum("...i,...j->...ij", w, self.rho.gradient(x)) + self.rho(x)[..., None, None] * hw

    def stationary_points(self):
        return self.rho.zeros()

    def closed_form_density(self):
        if isinstance(self.rho, ConstantScalar):
            return ConstantScalar(1.0, 2)
        return Reciprocal(self.rho)

    @property
    def divergence_free(self):
        return isinstance(self.rho, ConstantScalar)

    def to_config(self):
        return {"kind": "rho-rot-grad", "xi": list(self.xi),
                "periodic": self.periodic.to_config(), "rho": self.rho.to_config()}


def _unit_grid(d, n):
    g = np.arange(n) / n
    return np.stack(np.meshgrid(*([g] * d), indexing="ij"), -1).reshape(-1, d)


@dataclass(frozen=True, eq=False)
class Reciprocal(ScalarFieldSpec):
    """``1 / inner`` (singular where ``inner`` vanishes)."""

    inner: ScalarFieldSpec = None
    kind: ClassVar[str] = "reciprocal"

    @property
    def dim(self):
        return self.inner.dim

    def __call__(self, x):
        with np.errstate(divide="ignore"):
            return 1.0 / self.inner(x)

    def gradient(self, x):
        q = self.inner(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return -self.inner.gradient(x) / (q**2)[..., None]

    def singular_points(self):
        return self.inner.zeros()

    def to_config(self):
        return {"kind": "reciprocal", "inner": self.inner.to_config()}


@dataclass(frozen=True, eq=False)
class CompositeField(FieldSpec):
    """``b = scale(x) * inner(x)`` or ``inner(x) / scale(x)`` when ``reciprocal``.

    The divided form builds fields ``w / sigma`` whose invariant density is
    ``sigma`` whenever ``w`` is divergence free.
    """

    inner: FieldSpec = None
    scale: ScalarFieldSpec = None
    reciprocal: bool = False
    kind: ClassVar[str] = "custom-composite"

    def __post_init__(self):
        if self.inner is None or self.scale is None:
            raise ConfigurationError("composite field needs inner and scale")
        if self.inner.dim != self.scale.dim:
            raise ConfigurationError("composite field: dimension mismatch")
        if self.reciprocal:
            vals = self.scale(_unit_grid(self.dim, 32 if self.dim == 2 else 12))
            if vals.min() <= 0:
                raise ConfigurationError("composite field: divisor must stay positive")

    @property
    def dim(self):
        return self.inner.dim

    def _factor(self, x):
        s = self.scale(x)
        gs = self.scale.gradient(x)
        if self.reciprocal:
            return 1.0 / s, -gs / (s**2)[..., None]
        return s, gs

    def __call__(self, x):
        x = _as_points(x, self.dim)
        f, _ = self._factor(x)
        return f[..., None] * self.inner(x)

    def jacobian(self, x):
        x = _as_points(x, self.dim)
        f, gf = self._factor(x)
        return np.einsum("...i,...j->...ij", self.inner(x), gf) + f[..., None, None] * self.inner.jacobian(x)

    def stationary_points(self):
        pts = [self.inner.stationary_points()]
        if not self.reciprocal:
            pts.append(self.scale.zeros())
        return np.concatenate(pts, axis=0)

    def closed_form_density(self):
        inner = self.inner.closed_form_density()
        if self.reciprocal and isinstance(inner, ConstantScalar):
            return self.scale
        return None

    def to_config(self):
        return {"kind": "custom-composite", "inner": self.inner.to_config(),
                "scale": self.scale.to_config(), "reciprocal": self.reciprocal}


# ---------------------------------------------------------------------------
# module-level operations


def eval_field(spec: FieldSpec, x):
    return spec(x)


def eval_jacobian_matrix(spec: FieldSpec, x):
    return spec.jacobian(x)


def eval_divergence(spec: FieldSpec, x):
    return spec.divergence(x)


def sampled_max_divergence(spec: FieldSpec, n=None):
    n = n or (64 if spec.dim == 2 else 16)
    return float(np.abs(spec.divergence(_unit_grid(spec.dim, n) + 0.5 / n)).max())


def is_divergence_free(spec: FieldSpec, tol=1e-10):
    known = spec.divergence_free
    if known is not None:
        return known
    return sampled_max_divergence(spec) < tol


def fourier_table_of(spec: FieldSpec, grid=None):
    """Fourier coefficients of ``b``: exact for Fourier fields, FFT-sampled
    otherwise (``grid`` points per axis)."""
    if isinstance(spec, FourierField):
        return spec.table
    if isinstance(spec, ConstantField):
        return FourierTable(np.zeros((1, spec.dim), int), np.array([spec.xi], dtype=complex))
    grid = grid or (64 if spec.dim == 2 else 24)
    return fourier_coefficients(spec, spec.dim, spec.dim, grid=grid)


# ---------------------------------------------------------------------------
# catalog and config construction


def rotgrad_default_periodic(amplitude=0.2):
    """``p(x) = amplitude * sin(2 pi x1) sin(2 pi x2) / (2 pi)``."""
    a = amplitude / TWO_PI
    # sin a sin b = (cos(a-b) - cos(a+b)) / 2
    return FourierScalar(FourierTable.from_terms(2, [((1, -1), 0, 0.5 * a, 0.0), ((1, 1), 0, -0.5 * a, 0.0)]))


def composite_default_periodic():
    """Bandwidth-2 periodic part: the default rotated-gradient perturbation
    plus ``0.05 cos(2 pi (2 x1 + x2)) / (2 pi)``."""
    base = rotgrad_default_periodic(0.2).table
    extra = FourierTable.from_terms(2, [((2, 1), 0, 0.05 / TWO_PI, 0.0)])
    return FourierScalar(FourierTable(np.concatenate([base.modes, extra.modes]),
                                      np.concatenate([base.coeffs, extra.coeffs])))


def catalog(d=2):
    """The named example fields used by the acceptance suite."""
    sqrt2 = float(np.sqrt(2.0))
    out = {
        "constant": ConstantField((1.0, sqrt2)),
        "stepanoff": StepanoffField(0.75, (1.0, sqrt2)),
        "shear": ShearField(2.0, 1.0),
        "gradient": GradientField(default_gradient_potential()),
        "rotgrad": RhoRotGradField((1.0, sqrt2), rotgrad_default_periodic(0.2)),
        "rho-rotgrad": RhoRotGradField((1.0, sqrt2), rotgrad_default_periodic(0.2), StepanoffRho(0.75, 2)),
        "fourier": FourierField(FourierTable.from_terms(2, [
            ((0, 0), 0, 1.0, 0.0), ((0, 0), 1, sqrt2, 0.0),
            ((0, 1), 0, 0.3, 0.0), ((1, 0), 1, 0.0, 0.25),
            ((1, 1), 0, 0.1, 0.05),
        ], n_components=2)),
        "composite": CompositeField(
            RhoRotGradField((1.0, sqrt2), composite_default_periodic()),
            default_sigma_star(), reciprocal=True),
    }
    return out


def default_sigma_star():
    """Smooth positive density of bandwidth 2 and mean 1."""
    return FourierScalar(FourierTable.from_terms(2, [
        ((0, 0), 0, 1.0, 0.0),
        ((1, 0), 0, 0.2, 0.1),
        ((0, 1), 0, -0.15, 0.0),
        ((1, -1), 0, 0.05, 0.05),
        ((2, 1), 0, 0.05, -0.03),
    ]))


def _table_from_config(cfg, dim, n_components, base_dir=None):
    if "csv" in cfg:
        path = Path(cfg["csv"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return FourierTable.from_csv(path, dim, n_components)
    if "terms" in cfg:
        terms = []
        for t in cfg["terms"]:
            terms.append((t["k"], int(t.get("component", 0)), float(t.get("cos", 0.0)), float(t.get("sin", 0.0))))
        return FourierTable.from_terms(dim, terms, n_components)
    if "modes" in cfg and "coeffs" in cfg:
        c = np.asarray(cfg["coeffs"], dtype=float)
        coeffs = c[..., 0] + 1j * c[..., 1]
        if coeffs.ndim == 1:
            coeffs = coeffs[:, None]
        return FourierTable(np.asarray(cfg["modes"], dtype=int), coeffs)
    raise ConfigurationError("Fourier table needs 'terms', 'csv' or 'modes' with 'coeffs'")


def scalar_from_config(cfg, dim=2, base_dir=None) -> ScalarFieldSpec:
    kind = cfg.get("kind", "constant")
    if kind == "constant":
        return ConstantScalar(float(cfg.get("value", 1.0)), dim)
    if kind == "fourier":
        return FourierScalar(_table_from_config(cfg, dim, 1, base_dir))
    if kind == "stepanoff-rho":
        return StepanoffRho(float(cfg.get("beta0", 0.75)), dim)
    raise ConfigurationError(f"unknown scalar field kind {kind!r}")


def field_from_config(cfg, base_dir=None) -> FieldSpec:
    """Build a :class:`FieldSpec` from a mapping (the ``field`` config section)."""
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigurationError("field section needs a 'kind'")
    kind = cfg["kind"]
    if kind == "catalog":
        name = cfg.get("name")
        cat = catalog()
        if name not in cat:
            raise ConfigurationError(f"unknown catalog field {name!r}; choose from {sorted(cat)}")
        return cat[name]
    if kind == "constant":
        return ConstantField(tuple(cfg["xi"]))
    if kind == "stepanoff":
        return StepanoffField(float(cfg.get("beta0", 0.75)), tuple(cfg.get("xi", (1.0, np.sqrt(2.0)))),
                              cfg.get("check_bound"))
    if kind == "shear":
        return ShearField(float(cfg.get("base", 2.0)), float(cfg.get("amplitude", 1.0)),
                          int(cfg.get("axis", 0)), int(cfg.get("coord", 1)), int(cfg.get("dim", 2)))
    if kind == "gradient":
        dim = int(cfg.get("dim", 2))
        if "potential" in cfg:
            return GradientField(FourierScalar(_table_from_config(cfg["potential"], dim, 1, base_dir)))
        return GradientField(default_gradient_potential(dim))
    if kind == "rho-rot-grad":
        periodic = cfg.get("periodic")
        p = (FourierScalar(_table_from_config(periodic, 2, 1, base_dir)) if periodic
             else rotgrad_default_periodic(float(cfg.get("amplitude", 0.2))))
        rho = scalar_from_config(cfg.get("rho", {"kind": "constant"}), 2, base_dir)
        return RhoRotGradField(tuple(cfg.get("xi", (1.0, np.sqrt(2.0)))), p, rho)
    if kind == "fourier":
        dim = int(cfg.get("dim", 2))
        return FourierField(_table_from_config(cfg, dim, dim, base_dir))
    if kind == "custom-composite":
        inner = field_from_config(cfg["inner"], base_dir)
        scale = scalar_from_config(cfg["scale"], inner.dim, base_dir)
        return CompositeField(inner, scale, bool(cfg.get("reciprocal", False)))
    raise ConfigurationError(f"unknown field kind {kind!r}")
