"""Rotation vectors ``lim X(t, x) / t`` and sampled rotation sets.

Three sets are estimated:

* the ensemble of pointwise rotation vectors over low-discrepancy or grid
  samples (almost-everywhere behaviour);
* the Herman set ``C_b``, spanned by the means of ``b`` over all invariant
  probability measures, approximated by the ensemble plus the value
  ``b(x*) = 0`` contributed by every Dirac mass at a stationary point;
* ``D_b``, the means ``int b sigma`` over validated invariant densities.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.stats import qmc

from .errors import ConfigurationError
from .fields import FieldSpec
from .flow import IntegratorConfig, integrate_batch
from .invariant import InvariantDensity, QuadratureConfig, _as_integrand, periodic_mean

SAMPLERS = ("low-discrepancy", "grid")
# rows per integration batch; fixed so results do not depend on thread count
CHUNK = 64


@dataclass(frozen=True)
class RotationConfig:
    """Sampling and tolerance settings.

    ``tolerance(z) = max(rel_tol * |z|, abs_tol)``.  ``stationary_bound``
    caps how many stationary samples may be discarded as a null set
    (default ``floor(sqrt(n))``).
    """

    n: int = 64
    sampler: str = "low-discrepancy"
    seed: int = 0
    rel_tol: float = 2e-2
    abs_tol: float = 1e-3
    doublings: int = 10
    singleton_fraction: float = 0.95
    max_nonconverged_fraction: float = 0.25
    stationary_bound: int | None = None
    threads: int = 1

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ConfigurationError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.n < 16:
            raise ConfigurationError("ensembles need n >= 16")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ConfigurationError("rotation tolerances must be positive")
        if not 1 <= self.doublings <= 40:
            raise ConfigurationError("doublings must lie in 1..40")
        if not 0 < self.singleton_fraction <= 1:
            raise ConfigurationError("singleton_fraction must lie in (0, 1]")
        if not 0 <= self.max_nonconverged_fraction < 1:
            raise ConfigurationError("max_nonconverged_fraction must lie in [0, 1)")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")

    def tolerance(self, z):
        return max(self.rel_tol * float(np.linalg.norm(z)), self.abs_tol)

    @property
    def null_set_bound(self):
        return int(np.sqrt(self.n)) if self.stationary_bound is None else self.stationary_bound

    def replace(self, **kw):
        return RotationConfig(**{**self.__dict__, **kw})


@dataclass(frozen=True, eq=False)
class RotationEstimate:
    """``zeta_hat = (X(t_used, x0) - x0) / t_used`` with convergence data.

    ``cauchy_gap`` is ``|zeta_hat(t_used) - zeta_hat(t_used / 2)|``;
    ``t_converged`` is the first doubling time from which every later gap
    stays below the tolerance (``None`` if the last gap does not).
    """

    zeta_hat: np.ndarray
    t_used: float
    cauchy_gap: float
    stationary: bool
    x0: np.ndarray | None
    converged: bool
    t_converged: float | None = None
    speed_max: float = float("nan")
    history: np.ndarray | None = None

    def as_row(self):
        return {
            "x0": None if self.x0 is None else [float(v) for v in self.x0],
            "zeta_hat": [float(v) for v in self.zeta_hat],
            "t_used": float(self.t_used),
            "cauchy_gap": float(self.cauchy_gap),
            "stationary": bool(self.stationary),
            "converged": bool(self.converged),
            "t_converged": None if self.t_converged is None else float(self.t_converged),
        }


@dataclass(frozen=True, eq=False)
class RotationSetEstimate:
    """A finite sample of a rotation set with its hull summary.

    ``vectors`` are the points entering the hull; ``hull`` its vertices.
    ``classification`` is one of singleton, segment, polytope, inconclusive
    or empty.  For singleton verdicts ``hull`` covers the inliers only.
    """

    vectors: np.ndarray
    hull: np.ndarray
    classification: str
    tolerance: float
    centre: np.ndarray | None = None
    endpoints: np.ndarray | None = None
    diameter: float = 0.0
    width: float = 0.0
    inlier_fraction: float | None = None
    points: list = field(default_factory=list)
    excluded: list = field(default_factory=list)
    non_converged: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def is_singleton(self):
        return self.classification == "singleton"

    def span(self, axis):
        if self.vectors.size == 0:
            return 0.0
        return float(np.ptp(self.vectors[:, axis]))

    def summary(self):
        vec = lambda a: None if a is None else np.asarray(a, float).tolist()
        return {
            "classification": self.classification,
            "tolerance": self.tolerance,
            "centre": vec(self.centre),
            "endpoints": vec(self.endpoints),
            "diameter": self.diameter,
            "width": self.width,
            "inlier_fraction": self.inlier_fraction,
            "hull": vec(self.hull),
            "n_points": int(len(self.vectors)),
            "excluded_stationary": list(map(int, self.excluded)),
            "non_converged": list(map(int, self.non_converged)),
            "notes": list(self.notes),
        }

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.points:
                d = len(self.points[0].zeta_hat)
                w.writerow([f"x0_{i + 1}" for i in range(d)] + [f"zeta_{i + 1}" for i in range(d)]
                           + ["t_used", "cauchy_gap", "stationary", "converged"])
                for p in self.points:
                    x0 = p.x0 if p.x0 is not None else [float("nan")] * d
                    w.writerow([repr(float(v)) for v in x0] + [repr(float(v)) for v in p.zeta_hat]
                               + [repr(float(p.t_used)), repr(float(p.cauchy_gap)), int(p.stationary),
                                  int(p.converged)])
            else:
                d = self.vectors.shape[1] if self.vectors.ndim == 2 else 0
                w.writerow([f"zeta_{i + 1}" for i in range(d)])
                for v in self.vectors:
                    w.writerow([repr(float(x)) for x in v])


# ---------------------------------------------------------------------------
# pointwise estimates


def doubling_times(t_max, doublings):
    return t_max * 2.0 ** -np.arange(doublings, -1, -1)


def _estimate_rows(spec, x0, cfg, rot):
    times = doubling_times(cfg.t_max, rot.doublings)
    res = integrate_batch(spec, x0, cfg.t_max, cfg, sample_times=times, track_jacobian=False)
    zetas = (res.samples - x0[None]) / times[:, None, None]  # (J+1, n, d)
    speed = np.linalg.norm(spec(res.samples.reshape(-1, spec.dim)), axis=-1).reshape(len(times), -1)
    speed = np.maximum(speed.max(axis=0), np.linalg.norm(spec(x0), axis=-1))
    out = []
    for i in range(x0.shape[0]):
        z = zetas[:, i]
        gaps = np.linalg.norm(np.diff(z, axis=0), axis=1)
        tols = np.array([rot.tolerance(v) for v in z[1:]])
        # converged: every gap from some doubling time up to t_max is within tolerance
        bad = np.flatnonzero(gaps >= tols)
        tail = 0 if bad.size == 0 else int(bad[-1]) + 1
        zeta = z[-1]
        stationary = bool(res.near_stationary[i]) and np.linalg.norm(zeta) <= cfg.stationary_speed * (1 + rot.rel_tol)
        converged = tail < gaps.size or stationary
        out.append(RotationEstimate(
            zeta_hat=zeta,
            t_used=float(times[-1]),
            cauchy_gap=float(gaps[-1]),
            stationary=stationary,
            x0=x0[i].copy(),
            converged=converged,
            t_converged=(float(times[0]) if stationary else float(times[tail + 1])) if converged else None,
            speed_max=float(speed[i]),
            history=z,
        ))
    return out


def estimate_batch(spec: FieldSpec, x0, cfg: IntegratorConfig | None = None,
                   rot: RotationConfig | None = None):
    """Rotation estimates for each row of ``x0`` (fixed-size chunks, optionally
    on several threads; results are reduced in input order)."""
    cfg = cfg or IntegratorConfig()
    rot = rot or RotationConfig()
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    chunks = [x0[i:i + CHUNK] for i in range(0, x0.shape[0], CHUNK)]
    if rot.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(rot.threads) as pool:
            parts = list(pool.map(lambda c: _estimate_rows(spec, c, cfg, rot), chunks))
    else:
        parts = [_estimate_rows(spec, c, cfg, rot) for c in chunks]
    return [e for p in parts for e in p]


def rotation_vector(spec: FieldSpec, x0, cfg: IntegratorConfig | None = None, tol=None,
                    rot: RotationConfig | None = None) -> RotationEstimate:
    """Rotation vector estimate at one initial point.

    The trajectory is sampled at the doubling times ``t_max 2^-j``.  The
    estimate is reported at ``t_max``; ``t_converged`` records the first
    doubling time from which all consecutive estimates agree within
    tolerance.
    ``tol`` overrides the relative tolerance of ``rot``.
    """
    rot = rot or RotationConfig()
    if tol is not None:
        if tol <= 0:
            raise ConfigurationError("tol must be positive")
        rot = rot.replace(rel_tol=float(tol))
    return estimate_batch(spec, np.asarray(x0, float).reshape(1, -1), cfg, rot)[0]


def sample_points(d, n, sampler="low-discrepancy", seed=0):
    """Initial points in ``[0, 1)^d``: scrambled Sobol, or a midpoint grid
    with ``ceil(n^(1/d))`` points per axis."""
    if sampler == "low-discrepancy":
        return qmc.Sobol(d, scramble=True, seed=seed).random(n)
    if sampler == "grid":
        m = int(np.ceil(n ** (1.0 / d) - 1e-9))
        g = (np.arange(m) + 0.5) / m
        return np.stack(np.meshgrid(*([g] * d), indexing="ij"), -1).reshape(-1, d)
    raise ConfigurationError(f"unknown sampler {sampler!r}")


# ---------------------------------------------------------------------------
# hull classification


def classify_points(vectors, tol):
    """Classify a finite point cloud by diameter and principal width.

    Returns ``(classification, hull_vertices, endpoints, diameter, width)``.
    """
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    if v.shape[0] == 0:
        return "empty", v, None, 0.0, 0.0
    diff = v[:, None, :] - v[None, :, :]
    diameter = float(np.linalg.norm(diff, axis=-1).max())
    centre = v.mean(axis=0)
    if diameter < tol:
        return "singleton", centre[None, :], None, diameter, 0.0
    _, _, vt = np.linalg.svd(v - centre, full_matrices=False)
    u = vt[0]
    proj = (v - centre) @ u
    perp = (v - centre) - np.outer(proj, u)
    width = float(np.linalg.norm(perp, axis=1).max())
    if width < tol:
        ends = np.stack([centre + proj.min() * u, centre + proj.max() * u])
        return "segment", ends, ends, diameter, width
    try:
        hull = ConvexHull(v)
        return "polytope", v[hull.vertices], None, diameter, width
    except (QhullError, ValueError):
        return "inconclusive", v, None, diameter, width


def ensemble_rotation(spec: FieldSpec, n=None, sampler=None, cfg: IntegratorConfig | None = None,
                      tol=None, rot: RotationConfig | None = None, points=None) -> RotationSetEstimate:
    """Almost-everywhere rotation behaviour from an ensemble of initial points.

    Singleton iff at least ``singleton_fraction`` of the converged estimates
    lie within tolerance of their mean.  More than
    ``max_nonconverged_fraction`` non-converged samples make the verdict
    inconclusive.  Stationary samples are set aside as
    a null set when there are at most ``rot.null_set_bound`` of them; their
    indices are reported in ``excluded``.  Non-converged samples are listed
    in ``non_converged`` and do not enter the verdict.
    """
    rot = rot or RotationConfig()
    kw = {}
    if n is not None:
        kw["n"] = int(n)
    if sampler is not None:
        kw["sampler"] = sampler
    if tol is not None:
        kw["rel_tol"] = float(tol)
    rot = rot.replace(**kw) if kw else rot
    if points is None:
        points = sample_points(spec.dim, rot.n, rot.sampler, rot.seed)
    ests = estimate_batch(spec, points, cfg, rot)
    return summarize_ensemble(ests, rot)


def summarize_ensemble(ests, rot: RotationConfig) -> RotationSetEstimate:
    stationary = [i for i, e in enumerate(ests) if e.stationary]
    excluded = stationary if len(stationary) <= rot.null_set_bound else []
    notes = []
    if stationary and not excluded:
        notes.append(f"{len(stationary)} stationary samples exceed the null-set bound {rot.null_set_bound}")
    keep = [i for i in range(len(ests)) if i not in set(excluded)]
    non_conv = [i for i in keep if not ests[i].converged]
    conv = [i for i in keep if ests[i].converged]
    if not conv:
        return RotationSetEstimate(np.zeros((0, len(ests[0].zeta_hat))), np.zeros((0, len(ests[0].zeta_hat))),
                                   "inconclusive", rot.abs_tol, points=ests, excluded=excluded,
                                   non_converged=non_conv, notes=notes + ["no converged samples"])
    vecs = np.array([ests[i].zeta_hat for i in conv])
    if len(non_conv) > rot.max_nonconverged_fraction * len(keep):
        centre = vecs.mean(axis=0)
        return RotationSetEstimate(vecs, vecs, "inconclusive", rot.tolerance(centre), centre=centre, points=ests,
                                   excluded=excluded, non_converged=non_conv,
                                   notes=notes + [f"{len(non_conv)} of {len(keep)} samples did not converge"])
    centre = vecs.mean(axis=0)
    tol = rot.tolerance(centre)
    inside = np.linalg.norm(vecs - centre, axis=1) <= tol
    frac = float(inside.mean())
    if frac >= rot.singleton_fraction:
        hull_cls, hull, _, diam, width = classify_points(vecs[inside], 2 * tol + 1e-300)
        return RotationSetEstimate(vecs, hull, "singleton", tol, centre=centre, diameter=diam, width=width,
                                   inlier_fraction=frac, points=ests, excluded=excluded,
                                   non_converged=non_conv, notes=notes)
    cls, hull, ends, diam, width = classify_points(vecs, tol)
    if cls == "singleton":  # diameter below tol but fraction test failed cannot happen; keep explicit
        cls = "inconclusive"
    return RotationSetEstimate(vecs, hull, cls, tol, centre=centre, endpoints=ends, diameter=diam,
                               width=width, inlier_fraction=frac, points=ests, excluded=excluded,
                               non_converged=non_conv, notes=notes)


def estimate_C_b(spec: FieldSpec, n=None, cfg: IntegratorConfig | None = None, tol=None,
                 rot: RotationConfig | None = None, ensemble: RotationSetEstimate | None = None) -> RotationSetEstimate:
    """Sampled Herman set: converged ensemble rotation vectors together with
    ``b(x*) = 0`` for each catalog-declared stationary point ``x*``."""
    rot = rot or RotationConfig()
    if tol is not None:
        rot = rot.replace(rel_tol=float(tol))
    if ensemble is None:
        ensemble = ensemble_rotation(spec, n, None, cfg, None, rot)
    vecs = [e.zeta_hat for e in ensemble.points if e.converged]
    zeros = spec.stationary_points()
    vecs += [np.asarray(spec(np.asarray(z)[None, :])[0]) for z in zeros]
    d = spec.dim
    v = np.array(vecs) if vecs else np.zeros((0, d))
    if v.shape[0] == 0:
        return RotationSetEstimate(v, v, "inconclusive", rot.abs_tol, points=ensemble.points,
                                   notes=["no converged samples"])
    tol_c = rot.tolerance(np.abs(v).max(axis=0))
    cls, hull, ends, diam, width = classify_points(v, tol_c)
    notes = [f"{len(zeros)} stationary points contribute the zero vector"]
    n_non = len(ensemble.non_converged)
    if n_non > rot.max_nonconverged_fraction * (len(ensemble.points) - len(ensemble.excluded)):
        cls = "inconclusive"
        notes.append(f"{n_non} samples did not converge")
    return RotationSetEstimate(v, hull, cls, tol_c, centre=v.mean(axis=0), endpoints=ends, diameter=diam,
                               width=width, points=ensemble.points,
                               non_converged=ensemble.non_converged, notes=notes)


def estimate_D_b(spec: FieldSpec, densities, quad: QuadratureConfig | None = None,
                 rot: RotationConfig | None = None) -> RotationSetEstimate:
    """``{int b sigma : sigma}`` over validated densities (nonnegative, mean 1,
    Liouville residual below threshold).  Other entries are skipped and
    noted.  An empty list yields classification ``empty``."""
    rot = rot or RotationConfig()
    d = spec.dim
    vecs, notes = [], []
    for i, s in enumerate(densities):
        if isinstance(s, InvariantDensity) and not (s.is_density and s.invariant):
            notes.append(f"density {i} skipped (label {s.label}, residual {s.liouville_residual:.2e})")
            continue
        sing = s.singular_points() if hasattr(s, "singular_points") else None
        fn = _as_integrand(s)
        res = periodic_mean(lambda x, fn=fn: np.asarray(fn(x))[:, None] * spec(x), quad, dim=d,
                            singular_points=sing, strict=True)
        vecs.append(np.asarray(res.value, dtype=float))
    if not vecs:
        return RotationSetEstimate(np.zeros((0, d)), np.zeros((0, d)), "empty", rot.abs_tol,
                                   notes=notes + ["no validated invariant density at this cutoff"])
    v = np.array(vecs)
    tol = rot.tolerance(v.mean(axis=0))
    cls, hull, ends, diam, width = classify_points(v, tol)
    return RotationSetEstimate(v, hull, cls, tol, centre=v.mean(axis=0), endpoints=ends, diameter=diam,
                               width=width, notes=notes)


__all__ = [
    "RotationConfig", "RotationEstimate", "RotationSetEstimate", "rotation_vector", "estimate_batch",
    "sample_points", "classify_points", "ensemble_rotation", "summarize_ensemble", "estimate_C_b",
    "estimate_D_b", "doubling_times",
]
