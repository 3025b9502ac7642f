"""Lifted flow ``X(t, x)`` of a periodic field, integrated in R^d.

The integrator is the Dormand-Prince 5(4) embedded pair with the standard
4th-order dense output, vectorized over a batch of initial points: every row
keeps its own step size and the batch advances in lockstep iterations.  The
state is augmented with ``log J = int_0^t div b(X(s, x)) ds`` so that the
Jacobian determinant ``det grad_x X(t, x) = exp(log J)`` comes for free.

Positions are never reduced modulo 1 inside a step; the field is evaluated at
the reduced point by the field classes themselves.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, NumericalBlowup, StepSizeUnderflow
from .fields import FieldSpec

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0

# ODE residual bound along accepted steps: |X'(t_mid) - b(X(t_mid))| from the
# dense interpolant stays below RESIDUAL_CONSTANT * rel_tol / h (tolerances are
# measured against the unit cell).  The catalog peaks near 115 for rel_tol in
# 1e-10..1e-6; the constant keeps a factor 4 margin.
RESIDUAL_CONSTANT = 500.0


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and step bounds.  ``stationary_speed`` is the threshold
    ``eta`` below which the field is treated as stationary: the controller then
    takes fixed steps of ``max_step`` and flags the row."""

    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = 0.25
    min_step: float = 1e-12
    t_max: float = 1e4
    stationary_speed: float = 1e-10

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ConfigurationError("integrator tolerances must be positive")
        if not 0 < self.min_step <= self.max_step:
            raise ConfigurationError("need 0 < min_step <= max_step")
        if self.t_max <= 0:
            raise ConfigurationError("t_max must be positive")
        if self.stationary_speed < 0:
            raise ConfigurationError("stationary_speed must be nonnegative")

    def replace(self, **kw):
        vals = {**self.__dict__, **kw}
        return IntegratorConfig(**vals)


@dataclass(frozen=True, eq=False)
class FlowTrajectory:
    """Accepted steps of a single lifted trajectory.

    ``winding`` is the componentwise floor of the lifted position.  When built
    with ``dense=True`` the per-step stage derivatives are kept, and
    :meth:`dense_eval` interpolates inside steps.
    """

    times: np.ndarray
    positions: np.ndarray
    log_jacobian: np.ndarray
    accepted_steps: int
    rejected_steps: int
    tolerance_used: float
    near_stationary: bool = False
    stages: np.ndarray | None = None

    @property
    def winding(self):
        return np.floor(self.positions).astype(int)

    @property
    def final_position(self):
        return self.positions[-1]

    @property
    def final_log_jacobian(self):
        return float(self.log_jacobian[-1])

    def dense_eval(self, t, derivative=False):
        """Interpolated state ``(x, log J)`` (or its time derivative) at ``t``."""
        if self.stages is None:
            raise ValueError("trajectory was integrated without dense output")
        t = float(t)
        ts = self.times
        forward = ts[-1] >= ts[0]
        key = ts if forward else -ts
        tk = t if forward else -t
        if not key[0] <= tk <= key[-1]:
            raise ValueError(f"t={t} outside the integrated interval")
        i = int(np.clip(np.searchsorted(key, tk, side="right") - 1, 0, len(ts) - 2))
        h = ts[i + 1] - ts[i]
        s = (t - ts[i]) / h
        Q = self.stages[i].T @ _P  # (m, 4)
        y0 = np.concatenate([self.positions[i], [self.log_jacobian[i]]])
        if derivative:
            return Q @ np.array([1.0, 2 * s, 3 * s**2, 4 * s**3])
        return y0 + h * (Q @ np.array([s, s**2, s**3, s**4]))

    def to_csv(self, path):
        d = self.positions.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + [f"winding{i + 1}" for i in range(d)]
                       + ["log_jacobian"])
            for t, x, k, lj in zip(self.times, self.positions, self.winding, self.log_jacobian):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [int(v) for v in k]
                           + [repr(float(lj))])


@dataclass
class BatchResult:
    """Outcome of :func:`integrate_batch` for ``n`` rows."""

    final: np.ndarray               # (n, d) positions at t_end
    final_log_jacobian: np.ndarray  # (n,)
    samples: np.ndarray | None      # (n_samples, n, d) when no callback is given
    sample_log_jacobian: np.ndarray | None
    near_stationary: np.ndarray     # (n,) bool
    accepted_steps: np.ndarray
    rejected_steps: np.ndarray


def _rhs(spec: FieldSpec, with_jacobian: bool):
    d = spec.dim
    if with_jacobian:
        def f(y):
            x = y[:, :d]
            return np.concatenate([spec(x), spec.divergence(x)[:, None]], axis=1)
    else:
        def f(y):
            return np.concatenate([spec(y[:, :d]), np.zeros((y.shape[0], 1))], axis=1)
    return f


def _initial_step(f, y0, f0, direction, cfg):
    scale = cfg.abs_tol + cfg.rel_tol * np.minimum(np.abs(y0), 1.0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2, axis=1))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2, axis=1))
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    h0 = np.minimum(h0, cfg.max_step)
    y1 = y0 + direction * h0[:, None] * f0
    f1 = f(y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2, axis=1)) / h0
    big = np.maximum(d1, d2)
    h1 = np.where(big <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / np.maximum(big, 1e-300)) ** 0.2)
    return np.clip(np.minimum(100 * h0, h1), cfg.min_step, cfg.max_step)


def integrate_batch(spec: FieldSpec, x0, t_end, cfg: IntegratorConfig | None = None,
                    sample_times=None, callback: Callable | None = None,
                    track_jacobian=True, record=None, interpolate=False):
    """Integrate ``dX/dt = b(X)`` from each row of ``x0`` up to ``t_end``.

    Parameters
    ----------
    x0 : (n, d) array of initial points (lifted coordinates).
    t_end : common final time; negative values integrate backwards.
    sample_times : optional increasing times in ``(0, |t_end|]`` (same sign as
        ``t_end``) at which every row lands exactly.
    callback : ``callback(j, rows, x, log_jac)`` called when rows reach
        ``sample_times[j]``.  Without a callback the samples are stored.
    record : optional ``record(t, y, K, h)`` hook receiving every accepted step
        of a single-row batch (used to build dense trajectories).
    interpolate : if true, sample times are served by the dense output of
        the step that crosses them instead of forcing the step to land
        there (cheaper for many sample times; accuracy of the interpolant
        matches the step tolerance).

    Raises
    ------
    StepSizeUnderflow
        when a row needs a step below ``cfg.min_step``.
    NumericalBlowup
        when the state becomes non-finite.
    """
    cfg = cfg or IntegratorConfig()
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n, d = x0.shape
    if d != spec.dim:
        raise ConfigurationError(f"initial points have dimension {d}, field has {spec.dim}")
    t_end = float(t_end)
    direction = 1.0 if t_end >= 0 else -1.0
    span = abs(t_end)

    if sample_times is None:
        samples = np.array([span]) if callback is None else np.zeros(0)
    else:
        samples = np.abs(np.asarray(sample_times, dtype=float))
        if np.any(np.diff(samples) <= 0) or (samples.size and (samples[0] < 0 or samples[-1] > span * (1 + 1e-14))):
            raise ConfigurationError("sample times must increase within [0, |t_end|]")
    stored = callback is None and sample_times is not None
    if stored:
        store_x = np.empty((samples.size, n, d))
        store_lj = np.empty((samples.size, n))

    f = _rhs(spec, track_jacobian)
    y = np.concatenate([x0, np.zeros((n, 1))], axis=1)
    m = d + 1
    tau = np.zeros(n)  # elapsed |time|
    next_j = np.zeros(n, dtype=int)
    fy = f(y)
    _check_finite(fy, tau, y)

    # rows sitting exactly on a sample time 0
    if samples.size:
        at0 = samples[0] == 0.0
        if at0:
            _emit(0, np.arange(n), y, callback, stored and (store_x, store_lj), d)
            next_j[:] = 1

    h = _initial_step(f, y, fy, direction, cfg) if span > 0 else np.zeros(n)
    near = np.zeros(n, dtype=bool)
    acc = np.zeros(n, dtype=int)
    rej = np.zeros(n, dtype=int)
    eta = cfg.stationary_speed
    K = np.empty((7, n, m))

    active = tau < span
    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        full = idx.size == n
        yi = y if full else y[idx]
        fi = fy if full else fy[idx]
        ti = tau if full else tau[idx]
        # distance to the next landing time
        nj = next_j if full else next_j[idx]
        if interpolate:
            target = np.full(idx.size, span)
        else:
            target = np.where(nj < samples.size, samples[np.minimum(nj, max(samples.size - 1, 0))] if samples.size else span, span)
            target = np.minimum(target, span)
        remaining = target - ti
        hi = h if full else h[idx]
        speed = np.linalg.norm(fi[:, :d], axis=1)
        still = speed < eta
        hstep = np.where(still, np.minimum(cfg.max_step, remaining), np.minimum(hi, remaining))
        lands = hstep >= remaining * (1 - 1e-12)
        hs = direction * hstep

        Ki = K[:, : idx.size]
        Ki[0] = fi
        for s in range(1, 6):
            ys = yi + hs[:, None] * np.tensordot(_A[s], Ki[:s], axes=1)
            Ki[s] = f(ys)
        ynew = yi + hs[:, None] * np.tensordot(_B, Ki[:6], axes=1)
        fnew = f(ynew)
        Ki[6] = fnew
        err = hs[:, None] * np.tensordot(_E, Ki, axes=1)
        # relative error is measured against the unit cell, not the lifted magnitude
        scale = cfg.abs_tol + cfg.rel_tol * np.minimum(np.maximum(np.abs(yi), np.abs(ynew)), 1.0)
        enorm = np.sqrt(np.mean((err / scale) ** 2, axis=1))
        ok = (enorm <= 1.0) | still
        if not np.all(np.isfinite(ynew[ok])):
            bad = idx[ok][~np.all(np.isfinite(ynew[ok]), axis=1)]
            raise NumericalBlowup(f"non-finite state in rows {bad[:5].tolist()} near t={direction * tau[bad[0]]}")

        with np.errstate(divide="ignore"):
            factor = np.where(enorm == 0, _MAX_FACTOR, _SAFETY * enorm ** -0.2)
        factor = np.clip(factor, _MIN_FACTOR, _MAX_FACTOR)
        factor = np.where(ok, factor, np.minimum(factor, 1.0))
        # the proposed step is based on the step actually tried, unless that was clipped by a landing
        base = np.where(lands & ok, np.maximum(hi, hstep), hstep)
        hnew = np.minimum(base * factor, cfg.max_step)
        too_small = (~ok) & (hnew < cfg.min_step)
        if too_small.any():
            r = idx[np.flatnonzero(too_small)[0]]
            raise StepSizeUnderflow(
                f"step size underflow in row {r} at t={direction * tau[r]:.6g}",
                time=direction * tau[r], state=y[r, :d].copy(), row=int(r))
        hnew = np.maximum(hnew, cfg.min_step)

        acc_rows = idx[ok]
        rej[idx[~ok]] += 1
        acc[acc_rows] += 1
        near[idx[still]] = True
        h[idx] = hnew
        if acc_rows.size:
            newtau = np.where(lands[ok], target[ok], ti[ok] + hstep[ok])
            if record is not None:
                record(direction * ti[ok][0], yi[ok][0].copy(), Ki[:, ok][:, 0].copy(), hs[ok][0])
            if interpolate and samples.size:
                _emit_dense(acc_rows, ti[ok], newtau, yi[ok], Ki[:, ok], hs[ok], samples, next_j,
                            callback, stored and (store_x, store_lj), d)
            y[acc_rows] = ynew[ok]
            fy[acc_rows] = fnew[ok]
            tau[acc_rows] = newtau
            landed = acc_rows[lands[ok] & (nj[ok] < samples.size)] if not interpolate else acc_rows[:0]
            if landed.size:
                js = next_j[landed]
                for j in np.unique(js):
                    rows = landed[js == j]
                    _emit(int(j), rows, y[rows], callback, stored and (store_x, store_lj), d)
                next_j[landed] += 1
        active = tau < span

    return BatchResult(
        final=y[:, :d].copy(),
        final_log_jacobian=y[:, d].copy(),
        samples=store_x if stored else None,
        sample_log_jacobian=store_lj if stored else None,
        near_stationary=near,
        accepted_steps=acc,
        rejected_steps=rej,
    )


def _emit_dense(rows, t0, t1, y0, K, hs, samples, next_j, callback, store, d):
    """Serve every sample time in ``(t0, t1]`` of each row from the dense
    interpolant of the step just accepted."""
    Q = np.einsum("snm,sp->nmp", K, _P)  # (rows, m, 4)
    while True:
        nj = next_j[rows]
        due = nj < samples.size
        due[due] &= samples[nj[due]] <= t1[due] * (1 + 1e-15)
        if not due.any():
            return
        sel = np.flatnonzero(due)
        js = nj[sel]
        theta = (samples[js] - t0[sel]) / np.abs(hs[sel])
        powers = np.stack([theta, theta**2, theta**3, theta**4], axis=1)
        ys = y0[sel] + hs[sel, None] * np.einsum("nmp,np->nm", Q[sel], powers)
        for j in np.unique(js):
            pick = js == j
            _emit(int(j), rows[sel[pick]], ys[pick], callback, store, d)
        next_j[rows[sel]] += 1


def _emit(j, rows, yrows, callback, store, d):
    if callback is not None:
        callback(j, rows, yrows[:, :d], yrows[:, d])
    elif store:
        sx, slj = store
        sx[j, rows] = yrows[:, :d]
        slj[j, rows] = yrows[:, d]


def _check_finite(fy, tau, y):
    if not np.all(np.isfinite(fy)):
        bad = np.flatnonzero(~np.all(np.isfinite(fy), axis=1))
        raise NumericalBlowup(f"non-finite field value at rows {bad[:5].tolist()}")


def integrate(spec: FieldSpec, x0, t_end, cfg: IntegratorConfig | None = None, dense=False) -> FlowTrajectory:
    """Integrate one trajectory, keeping every accepted step."""
    cfg = cfg or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    ts, ys, ks = [], [], []

    def record(t, y, K, h):
        ts.append(t)
        ys.append(y)
        if dense:
            ks.append(K)

    res = integrate_batch(spec, x0, t_end, cfg, record=record)
    d = spec.dim
    final = np.concatenate([res.final[0], res.final_log_jacobian])
    if ys:
        times = np.array(ts + [float(t_end)])
        states = np.array(ys + [final])
    else:
        times = np.array([0.0])
        states = final[None, :]
    return FlowTrajectory(
        times=times,
        positions=states[:, :d],
        log_jacobian=states[:, d],
        accepted_steps=int(res.accepted_steps[0]),
        rejected_steps=int(res.rejected_steps[0]),
        tolerance_used=cfg.rel_tol,
        near_stationary=bool(res.near_stationary[0]),
        stages=np.array(ks) if dense and ks else None,
    )


def flow_map(spec: FieldSpec, x, t, cfg: IntegratorConfig | None = None, track_jacobian=False):
    """``X(t, x)`` for every row of ``x`` (shape ``(n, d)``)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if t == 0:
        return x.copy()
    return integrate_batch(spec, x, t, cfg, track_jacobian=track_jacobian).final


def jacobian_determinant(spec: FieldSpec, x0, t, cfg: IntegratorConfig | None = None) -> float:
    """``det grad_x X(t, x0)`` from the integrated divergence."""
    if t == 0:
        return 1.0
    res = integrate_batch(spec, np.asarray(x0, float).reshape(1, -1), t, cfg)
    return float(np.exp(res.final_log_jacobian[0]))


def finite_difference_flow_jacobian(spec: FieldSpec, x0, t, cfg: IntegratorConfig | None = None, step=1e-5):
    """Central-difference approximation of ``grad_x X(t, x0)`` (column j is
    the derivative along ``e_j``)."""
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    pts = np.concatenate([x0 + step * np.eye(d), x0 - step * np.eye(d)])
    X = flow_map(spec, pts, t, cfg)
    return ((X[:d] - X[d:]) / (2 * step)).T


def check_semigroup(spec: FieldSpec, x0, s, t, cfg: IntegratorConfig | None = None) -> float:
    """``|X(s+t, x0) - X(s, X(t, x0))|`` along two integration paths."""
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    direct = flow_map(spec, x0, s + t, cfg)
    mid = flow_map(spec, x0, t, cfg)
    composed = flow_map(spec, mid, s, cfg)
    return float(np.linalg.norm(direct - composed))


def check_equivariance(spec: FieldSpec, x0, k, t, cfg: IntegratorConfig | None = None) -> float:
    """``|X(t, x0 + k) - X(t, x0) - k|`` for an integer shift ``k``."""
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    k = np.asarray(k)
    if not np.array_equal(k, np.round(k)):
        raise ConfigurationError("equivariance shift must be an integer vector")
    pts = np.concatenate([x0, x0 + k])
    X = flow_map(spec, pts, t, cfg)
    return float(np.linalg.norm(X[1] - X[0] - k))


def ode_residual(spec: FieldSpec, traj: FlowTrajectory):
    """Max over accepted steps of ``|X'(t_mid) - b(X(t_mid))|`` normalized by
    the local tolerance scale; dense output is required.

    Values below :data:`RESIDUAL_CONSTANT` are expected."""
    if traj.stages is None:
        raise ValueError("ode_residual needs a dense trajectory")
    d = spec.dim
    worst = 0.0
    for i in range(len(traj.times) - 1):
        h = traj.times[i + 1] - traj.times[i]
        tm = traj.times[i] + 0.5 * h
        ym = traj.dense_eval(tm)
        dy = traj.dense_eval(tm, derivative=True)[:d]
        res = np.linalg.norm(dy - spec(ym[None, :d])[0])
        scale = traj.tolerance_used / abs(h)
        worst = max(worst, res / scale)
    return worst
