"""Scenario runner: YAML configuration in, JSON and CSV reports out.

Subcommands ``simulate-flow``, ``rotation``, ``invariant``, ``transport``,
``conditions`` and ``verify`` share one configuration file.  Exit codes:
0 on success, 2 when a requested assertion fails, 1 on execution errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError, NonDiffeomorphism, TorusFlowError
from .fields import (FieldSpec, FourierTable, _table_from_config, catalog, eval_divergence,
                     eval_jacobian_matrix, field_from_config, sampled_max_divergence)
from .flow import (IntegratorConfig, check_equivariance, check_semigroup, finite_difference_flow_jacobian,
                   integrate, jacobian_determinant)
from .invariant import (InvariantDensity, QuadratureConfig, closed_form_density, density_transport_check,
                        nonnegative_combination, perturbed_densities, spectral_invariant_densities)
from .rotation import (RotationConfig, RotationSetEstimate, ensemble_rotation, estimate_C_b, estimate_D_b)
from .transport import run_sweep, scenario_from_config

SCHEMA_VERSION = 1
OUT_ENV = "TORUSFLOW_OUT"
COMMANDS = ("simulate-flow", "rotation", "invariant", "transport", "conditions", "verify")
SECTIONS = ("schema_version", "field", "integrator", "quadrature", "rotation", "invariant", "flow",
            "transport", "conditions", "rectification", "report")

EXIT_OK, EXIT_ERROR, EXIT_ASSERTION = 0, 1, 2


# ---------------------------------------------------------------------------
# configuration


def _line_index(text):
    """Map key paths (tuples) of a YAML document to 1-based line numbers."""
    index = {}

    def walk(node, path):
        index.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = path + (k.value,)
                index[key] = k.start_mark.line + 1
                walk(v, key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return index
    if root is not None:
        walk(root, ())
    return index


class _Locator:
    def __init__(self, source, lines):
        self.source = source or "<config>"
        self.lines = lines or {}

    def where(self, *path):
        while path and path not in self.lines:
            path = path[:-1]
        line = self.lines.get(path)
        key = ".".join(str(p) for p in path) if path else "<root>"
        return f"{self.source}:{line}: {key}" if line else f"{self.source}: {key}"

    def fail(self, path, message):
        raise ConfigurationError(f"{self.where(*path)}: {message}")


def _dataclass_from(cls, data, loc, path):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        loc.fail(path, f"expected a mapping for {cls.__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            loc.fail(path + (key,), f"unknown key; expected one of {sorted(names)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        loc.fail(path, str(exc))


@dataclass(frozen=True, eq=False)
class Rectification:
    """``Psi(y) = y + P(y)`` with ``P`` a periodic trigonometric polynomial
    (one output component per axis) and a candidate constant ``xi``."""

    displacement: FourierTable | None
    xi: tuple

    def __post_init__(self):
        object.__setattr__(self, "xi", tuple(float(v) for v in self.xi))
        if self.displacement is not None and self.displacement.n_components != len(self.xi):
            raise ConfigurationError("rectification displacement needs one component per axis")

    @property
    def dim(self):
        return len(self.xi)

    def __call__(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return y if self.displacement is None else y + self.displacement.evaluate(y)

    def jacobian(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        eye = np.broadcast_to(np.eye(self.dim), y.shape[:-1] + (self.dim, self.dim))
        return eye if self.displacement is None else eye + self.displacement.gradient(y)


def verify_rectification(spec: FieldSpec, psi: Rectification, xi=None, sample=None, det_floor=1e-6):
    """``max |grad Psi(y) b(y) - xi|`` over sample points.

    Raises
    ------
    NonDiffeomorphism
        if ``det grad Psi`` drops below ``det_floor`` on the sample.
    """
    xi = np.asarray(psi.xi if xi is None else xi, dtype=float)
    if sample is None:
        n = 64 if spec.dim == 2 else 12
        g = (np.arange(n) + 0.5) / n
        sample = np.stack(np.meshgrid(*([g] * spec.dim), indexing="ij"), -1).reshape(-1, spec.dim)
    sample = np.atleast_2d(np.asarray(sample, dtype=float))
    J = psi.jacobian(sample)
    det = np.linalg.det(J)
    if det.min() < det_floor:
        i = int(np.argmin(det))
        raise NonDiffeomorphism(f"det grad Psi = {det[i]:.3e} < {det_floor:g} at y = {sample[i].tolist()}")
    res = np.einsum("nij,nj->ni", J, spec(sample)) - xi
    return float(np.linalg.norm(res, axis=-1).max())


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Parsed configuration file."""

    field: FieldSpec
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    rotation: RotationConfig = field(default_factory=RotationConfig)
    invariant: dict = field(default_factory=dict)
    flow: dict = field(default_factory=dict)
    transport: dict = field(default_factory=dict)
    conditions: dict = field(default_factory=dict)
    rectification: Rectification | None = None
    out_dir: Path = Path("out")
    source: Path | None = None

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"{path}: cannot read configuration ({exc.strerror})")
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = f":{mark.line + 1}" if mark else ""
            raise ConfigurationError(f"{path}{line}: YAML syntax error: {getattr(exc, 'problem', exc)}")
        return cls.from_mapping(data, source=path, lines=_line_index(text))

    @classmethod
    def from_mapping(cls, data, source=None, lines=None):
        loc = _Locator(str(source) if source else None, lines)
        if not isinstance(data, dict):
            loc.fail((), "configuration must be a mapping")
        for key in data:
            if key not in SECTIONS:
                loc.fail((key,), f"unknown section; expected one of {list(SECTIONS)}")
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            loc.fail(("schema_version",), f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
        if "field" not in data:
            loc.fail((), "missing required section 'field'")
        base_dir = Path(source).parent if source else None
        try:
            spec = field_from_config(data["field"], base_dir=base_dir)
        except (ConfigurationError, KeyError, TypeError, ValueError) as exc:
            loc.fail(("field",), f"invalid field: {exc}")
        integrator = _dataclass_from(IntegratorConfig, data.get("integrator"), loc, ("integrator",))
        quadrature = _dataclass_from(QuadratureConfig, data.get("quadrature"), loc, ("quadrature",))
        rotation = _dataclass_from(RotationConfig, data.get("rotation"), loc, ("rotation",))
        sections = {}
        for name in ("invariant", "flow", "transport", "conditions", "report"):
            sec = data.get(name) or {}
            if not isinstance(sec, dict):
                loc.fail((name,), "expected a mapping")
            sections[name] = sec
        _check_keys(sections["invariant"], {"K", "svd_tol", "kmax", "spectral"}, loc, ("invariant",))
        _check_keys(sections["flow"], {"x0", "t_end", "checks"}, loc, ("flow",))
        _check_keys(sections["transport"], {"u0", "f", "T", "battery", "epsilon_grid", "quadrature", "zeta",
                                            "norms"}, loc, ("transport",))
        _check_keys(sections["conditions"], {"expect", "hom"}, loc, ("conditions",))
        _check_keys(sections["report"], {"out"}, loc, ("report",))
        expect = sections["conditions"].get("expect", {}) or {}
        for key, val in expect.items():
            if key not in CONDITIONS:
                loc.fail(("conditions", "expect", key), f"unknown condition; expected one of {list(CONDITIONS)}")
            if val not in VERDICTS:
                loc.fail(("conditions", "expect", key), f"verdict must be one of {list(VERDICTS)}")
        rect = None
        if data.get("rectification"):
            r = data["rectification"]
            _check_keys(r, {"xi", "displacement"}, loc, ("rectification",))
            if "xi" not in r:
                loc.fail(("rectification",), "needs 'xi'")
            try:
                disp = (_table_from_config(r["displacement"], spec.dim, spec.dim, base_dir)
                        if r.get("displacement") else None)
                rect = Rectification(disp, tuple(r["xi"]))
            except (ConfigurationError, KeyError, TypeError, ValueError) as exc:
                loc.fail(("rectification",), str(exc))
            if rect.dim != spec.dim:
                loc.fail(("rectification", "xi"), f"xi must have dimension {spec.dim}")
        out_dir = Path(sections["report"].get("out", "out"))
        if base_dir is not None and not out_dir.is_absolute():
            out_dir = base_dir / out_dir
        return cls(spec, integrator, quadrature, rotation, sections["invariant"], sections["flow"],
                   sections["transport"], sections["conditions"], rect, out_dir, source)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


def _check_keys(section, allowed, loc, path):
    if not isinstance(section, dict):
        loc.fail(path, "expected a mapping")
    for key in section:
        if key not in allowed:
            loc.fail(path + (key,), f"unknown key; expected one of {sorted(allowed)}")


# ---------------------------------------------------------------------------
# densities shared by several commands


def candidate_densities(spec: FieldSpec, quad: QuadratureConfig | None = None, K=8, svd_tol=1e-8,
                        spectral=True):
    """Closed-form density (if the catalog declares one) plus, for fields
    without an unbounded closed form, the spectral null space elements and
    their extreme nonnegative perturbations.  Returns ``(densities, info)``."""
    dens, info = [], {}
    closed = None
    if spec.closed_form_density() is not None:
        closed = closed_form_density(spec, quad)
        dens.append(closed)
        info["closed_form"] = closed.summary()
    if spectral and not (closed is not None and closed.singular):
        res = spectral_invariant_densities(spec, K=K, svd_tol=svd_tol, quad=quad)
        info["spectral"] = res.summary()
        dens.extend(e for e in res.elements if e.is_density)
        dens.extend(perturbed_densities(res, spec, quad))
        if not any(e.is_density for e in res.elements):
            t, _ = nonnegative_combination(res)
            info["nonnegative_lp_optimum"] = None if not np.isfinite(t) else t
    return dens, info


def _positive_density_exists(dens):
    return any(isinstance(s, InvariantDensity) and s.is_density and s.invariant and s.min_sampled > 0
               for s in dens)


# ---------------------------------------------------------------------------
# conditions report

CONDITIONS = ("Rec", "Erg", "Asy-a.e.", "Asy-e.", "#C_b=1", "#D_b=1", "Hom")
VERDICTS = ("holds", "fails", "not-evaluated")

# (premise, conclusion, needs a positive invariant density)
IMPLICATIONS = (
    ("Rec", "#C_b=1", False),
    ("Rec", "Asy-e.", False),
    ("Rec", "Asy-a.e.", False),
    ("Rec", "#D_b=1", True),
    ("Rec", "Hom", True),
    ("Erg", "Asy-a.e.", True),
    ("Erg", "#D_b=1", True),
    ("Erg", "Hom", True),
    ("Asy-e.", "#C_b=1", False),
    ("#C_b=1", "Asy-e.", False),
    ("Asy-e.", "Asy-a.e.", False),
    ("#C_b=1", "Asy-a.e.", False),
    ("Asy-e.", "#D_b=1", True),
    ("#C_b=1", "#D_b=1", True),
    ("Asy-e.", "Hom", True),
    ("#C_b=1", "Hom", True),
    ("Asy-a.e.", "#D_b=1", True),
    ("#D_b=1", "Asy-a.e.", True),
    ("Asy-a.e.", "Hom", True),
    ("Hom", "Asy-a.e.", True),
    ("#D_b=1", "Hom", True),
    ("Hom", "#D_b=1", True),
)
INCOMPARABLE = (("Rec", "Erg"), ("Erg", "Asy-e."), ("Erg", "#C_b=1"))


@dataclass
class ConditionsReport:
    """Verdicts for the seven conditions and the implication checks."""

    verdicts: dict
    evidence: dict
    hypothesis_met: bool
    checks: list = field(default_factory=list)
    incomparable: list = field(default_factory=list)

    @property
    def violations(self):
        return [c for c in self.checks if c["applicable"] and c["violated"]]

    @property
    def consistent(self):
        return not self.violations

    def summary(self):
        return {
            "verdicts": dict(self.verdicts),
            "positive_density_hypothesis": bool(self.hypothesis_met),
            "consistent": self.consistent,
            "violations": self.violations,
            "checks": self.checks,
            "incomparable_pairs": self.incomparable,
            "evidence": self.evidence,
        }

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["condition", "verdict"])
            for c in CONDITIONS:
                w.writerow([c, self.verdicts[c]])


def implication_checks(verdicts, hypothesis_met):
    """Evaluate every implication of the seven-conditions array on the given
    verdicts; checks needing a positive invariant density are marked
    inapplicable when none was found."""
    checks = []
    for a, b, needs in IMPLICATIONS:
        va, vb = verdicts[a], verdicts[b]
        evaluated = va != "not-evaluated" and vb != "not-evaluated"
        checks.append({
            "premise": a, "conclusion": b,
            "applicable": bool(evaluated and (hypothesis_met or not needs)),
            "violated": bool(evaluated and va == "holds" and vb == "fails"),
        })
    pairs = [{"pair": [a, b], "verdicts": [verdicts[a], verdicts[b]]} for a, b in INCOMPARABLE]
    return checks, pairs


def _set_verdict(est: RotationSetEstimate):
    if est.classification == "singleton":
        return "holds"
    if est.classification in ("segment", "polytope", "empty"):
        return "fails"
    return "not-evaluated"


def conditions_report(cfg: ScenarioConfig, ensemble=None, densities=None, sweep=None,
                      hom=None) -> ConditionsReport:
    """Evaluate the testable conditions for ``cfg.field``.

    ``ensemble``, ``densities`` and ``sweep`` may be supplied to reuse
    earlier runs.  ``hom`` (default from the config, true) switches the
    transport sweep on or off for divergence-free fields.
    """
    spec = cfg.field
    evidence = {}
    if ensemble is None:
        ensemble = ensemble_rotation(spec, cfg=cfg.integrator, rot=cfg.rotation)
    cb = estimate_C_b(spec, cfg=cfg.integrator, rot=cfg.rotation, ensemble=ensemble)
    evidence["ensemble"] = ensemble.summary()
    evidence["C_b"] = cb.summary()
    if densities is None:
        densities, info = candidate_densities(spec, cfg.quadrature, **_invariant_kw(cfg))
        evidence["densities"] = info
    db = estimate_D_b(spec, densities, cfg.quadrature, cfg.rotation)
    evidence["D_b"] = db.summary()
    hyp = _positive_density_exists(densities)

    verdicts = {c: "not-evaluated" for c in CONDITIONS}
    verdicts["Asy-a.e."] = _set_verdict(ensemble)
    verdicts["Asy-e."] = _set_verdict(cb)
    verdicts["#C_b=1"] = _set_verdict(cb)
    verdicts["#D_b=1"] = _set_verdict(db)

    divfree = sampled_max_divergence(spec) < 1e-10
    evidence["divergence_free"] = divfree
    run_hom = cfg.conditions.get("hom", True) if hom is None else hom
    if divfree and (run_hom or sweep is not None):
        if sweep is None:
            sc = scenario_from_config(cfg.transport, spec, cell_quad=cfg.quadrature,
                                      threads=cfg.rotation.threads,
                                      base_dir=cfg.source.parent if cfg.source else None)
            sweep = run_sweep(sc, norms=bool(cfg.transport.get("norms", False)))
        evidence["Hom"] = sweep.summary()
        verdicts["Hom"] = {"converges": "holds", "non-convergent": "fails"}.get(sweep.verdict, "not-evaluated")

    if cfg.rectification is not None:
        # rejecting one candidate map does not rule out another, unless b vanishes somewhere
        refuted = "fails" if len(spec.stationary_points()) else "not-evaluated"
        try:
            res = verify_rectification(spec, cfg.rectification)
            evidence["Rec"] = {"residual": res, "supplied_map_accepted": bool(res < 1e-6)}
            verdicts["Rec"] = "holds" if res < 1e-6 else refuted
        except NonDiffeomorphism as exc:
            evidence["Rec"] = {"error": str(exc), "supplied_map_accepted": False}
            verdicts["Rec"] = refuted

    checks, pairs = implication_checks(verdicts, hyp)
    return ConditionsReport(verdicts, evidence, hyp, checks, pairs)


def _invariant_kw(cfg):
    inv = cfg.invariant
    return {"K": int(inv.get("K", 8)), "svd_tol": float(inv.get("svd_tol", 1e-8)),
            "spectral": bool(inv.get("spectral", True))}


# ---------------------------------------------------------------------------
# commands


def _default_points(d):
    return [[0.1 + 0.2 * j for j in range(d)], [0.5] * d]


def cmd_simulate_flow(cfg: ScenarioConfig, out: Path):
    spec = cfg.field
    pts = cfg.flow.get("x0", _default_points(spec.dim))
    t_end = float(cfg.flow.get("t_end", 10.0))
    rows, tables = [], {}
    for i, x0 in enumerate(pts):
        traj = integrate(spec, x0, t_end, cfg.integrator)
        tables[f"trajectory_{i}.csv"] = traj
        rows.append({
            "x0": [float(v) for v in x0],
            "final_position": traj.final_position.tolist(),
            "final_winding": traj.winding[-1].tolist(),
            "final_log_jacobian": float(traj.final_log_jacobian),
            "accepted_steps": int(traj.accepted_steps),
            "rejected_steps": int(traj.rejected_steps),
            "near_stationary": bool(traj.near_stationary),
        })
    results = {"t_end": t_end, "trajectories": rows}
    if cfg.flow.get("checks", False):
        tight = cfg.integrator.replace(rel_tol=1e-10, abs_tol=1e-12)
        s = t_end / 2
        results["checks"] = [{
            "x0": [float(v) for v in x0],
            "semigroup": check_semigroup(spec, x0, s, s, tight),
            "inverse": check_semigroup(spec, x0, -s, s, tight),
            "equivariance": check_equivariance(spec, x0, [1] + [-1] * (spec.dim - 1), s, tight),
        } for x0 in pts]
    for name, traj in tables.items():
        traj.to_csv(out / name)
    return results, True


def cmd_rotation(cfg: ScenarioConfig, out: Path):
    spec = cfg.field
    ens = ensemble_rotation(spec, cfg=cfg.integrator, rot=cfg.rotation)
    cb = estimate_C_b(spec, cfg=cfg.integrator, rot=cfg.rotation, ensemble=ens)
    ens.to_csv(out / "rotation_points.csv")
    return {"ensemble": ens.summary(), "C_b": cb.summary()}, True


def cmd_invariant(cfg: ScenarioConfig, out: Path):
    spec = cfg.field
    dens, info = candidate_densities(spec, cfg.quadrature, **_invariant_kw(cfg))
    db = estimate_D_b(spec, dens, cfg.quadrature, cfg.rotation)
    with open(out / "densities.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "representation", "label", "mean", "min_sampled", "liouville_residual", "singular"])
        for i, s in enumerate(dens):
            w.writerow([i, s.representation, s.label, repr(float(s.mean)), repr(float(s.min_sampled)),
                        repr(float(s.liouville_residual)), s.singular])
    return {"densities": info, "validated": [s.summary() for s in dens], "D_b": db.summary()}, True


def cmd_transport(cfg: ScenarioConfig, out: Path):
    sc = scenario_from_config(cfg.transport, cfg.field, cell_quad=cfg.quadrature, threads=cfg.rotation.threads,
                              base_dir=cfg.source.parent if cfg.source else None)
    zeta = cfg.transport.get("zeta")
    rep = run_sweep(sc, zeta=None if zeta is None else np.asarray(zeta, float),
                    norms=bool(cfg.transport.get("norms", True)))
    rep.to_csv(out / "sweep.csv")
    return rep.summary(), True


def cmd_conditions(cfg: ScenarioConfig, out: Path):
    rep = conditions_report(cfg)
    rep.to_csv(out / "conditions.csv")
    expect = cfg.conditions.get("expect", {}) or {}
    mismatches = {k: {"expected": v, "got": rep.verdicts[k]} for k, v in expect.items() if rep.verdicts[k] != v}
    res = rep.summary()
    res["expectation_mismatches"] = mismatches
    return res, rep.consistent and not mismatches


def verify_suite(spec: FieldSpec, cfg: IntegratorConfig | None = None, quad: QuadratureConfig | None = None,
                 seed=0, rect: Rectification | None = None):
    """Property checks across modules for one field.  Returns a list of
    ``{name, value, threshold, passed}`` records."""
    rng = np.random.default_rng(seed)
    d = spec.dim
    tight = (cfg or IntegratorConfig()).replace(rel_tol=1e-10, abs_tol=1e-12)
    out = []

    def add(name, value, threshold):
        out.append({"name": name, "value": float(value), "threshold": threshold,
                    "passed": bool(np.isfinite(value) and value < threshold)})

    x = rng.uniform(-1, 2, (100, d))
    k = rng.integers(-2, 3, (100, d))
    add("periodicity", np.abs(spec(x + k) - spec(x)).max(), 1e-12)
    h = 1e-5
    fd = np.stack([(spec(x + h * e) - spec(x - h * e)) / (2 * h) for e in np.eye(d)], axis=-1)
    add("jacobian_vs_finite_difference", np.abs(eval_jacobian_matrix(spec, x) - fd).max(), 1e-6)
    add("divergence_is_trace",
        np.abs(eval_divergence(spec, x) - np.trace(eval_jacobian_matrix(spec, x), axis1=-2, axis2=-1)).max(),
        1e-12)
    probes = rng.uniform(0, 1, (5, d))
    add("semigroup", max(check_semigroup(spec, p, 1.0, 1.5, tight) for p in probes), 1e-6)
    add("inverse_flow", max(check_semigroup(spec, p, -1.5, 1.5, tight) for p in probes), 1e-6)
    add("equivariance", max(check_equivariance(spec, p, rng.integers(-2, 3, d), 2.0, tight) for p in probes), 1e-6)
    add("jacobian_identity", max(abs(jacobian_determinant(spec, p, 0.5, tight)
                                     - np.linalg.det(finite_difference_flow_jacobian(spec, p, 0.5, tight)))
                                 for p in probes), 1e-5)
    if spec.closed_form_density() is not None:
        sigma = closed_form_density(spec, quad)
        add("liouville_residual_closed_form", sigma.liouville_residual, 1e-4)
        add("density_mean", abs(sigma.mean - 1.0), 1e-6)
        if not sigma.singular:
            add("density_transport", density_transport_check(sigma.field, spec, 0.5, probes, tight), 1e-4)
    if rect is not None:
        add("rectification_residual", verify_rectification(spec, rect), 1e-6)
    return out


def cmd_verify(cfg: ScenarioConfig, out: Path, seed=0):
    records = verify_suite(cfg.field, cfg.integrator, cfg.quadrature, seed, cfg.rectification)
    with open(out / "verify.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "value", "threshold", "passed"])
        for r in records:
            w.writerow([r["name"], repr(r["value"]), repr(r["threshold"]), r["passed"]])
    ok = all(r["passed"] for r in records)
    return {"checks": records, "all_passed": ok}, ok


# ---------------------------------------------------------------------------
# entry point


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_report(out: Path, command, cfg: ScenarioConfig, results, ok):
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "field": cfg.field.to_config(),
        "status": "ok" if ok else "assertion-failed",
        "results": results,
    }
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True)
    (out / "report.json").write_text(text + "\n")
    return report


def build_parser():
    p = argparse.ArgumentParser(prog="torusflow", description="Periodic flows on the torus: simulation, "
                                "rotation sets, invariant densities and transport homogenization.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, type=Path, help="YAML scenario file")
    p.add_argument("--out", type=Path, help="output directory (overrides report.out)")
    p.add_argument("--seed", type=int, help="sampler seed (overrides rotation.seed)")
    p.add_argument("--threads", type=int, help="worker threads (overrides rotation.threads)")
    p.add_argument("--catalog-field", choices=sorted(catalog()), help="replace the field by a catalog entry")
    return p


def run(argv=None):
    """Parse arguments, run one command and return the exit code."""
    args = build_parser().parse_args(argv)
    try:
        cfg = ScenarioConfig.from_file(args.config)
        rot_kw = {}
        if args.seed is not None:
            rot_kw["seed"] = args.seed
        if args.threads is not None:
            rot_kw["threads"] = args.threads
        if rot_kw:
            cfg = cfg.replace(rotation=cfg.rotation.replace(**rot_kw))
        if args.catalog_field:
            cfg = cfg.replace(field=catalog()[args.catalog_field])
        out = args.out or (Path(os.environ[OUT_ENV]) if os.environ.get(OUT_ENV) else cfg.out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigurationError(f"output directory {out} is not writable ({exc.strerror})")
        if not os.access(out, os.W_OK):
            raise ConfigurationError(f"output directory {out} is not writable")
        handler = {
            "simulate-flow": cmd_simulate_flow, "rotation": cmd_rotation, "invariant": cmd_invariant,
            "transport": cmd_transport, "conditions": cmd_conditions,
            "verify": lambda c, o: cmd_verify(c, o, cfg.rotation.seed),
        }[args.command]
        results, ok = handler(cfg, out)
        write_report(out, args.command, cfg, results, ok)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except TorusFlowError as exc:
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # surfaced with context rather than a bare traceback
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        traceback.print_exc(file=sys.stderr)
        return EXIT_ERROR
    print(f"{args.command}: {'ok' if ok else 'assertion failed'}; report written to {out / 'report.json'}")
    return EXIT_OK if ok else EXIT_ASSERTION


def main():
    sys.exit(run())


__all__ = [
    "ScenarioConfig", "Rectification", "verify_rectification", "ConditionsReport", "conditions_report",
    "implication_checks", "candidate_densities", "verify_suite", "run", "main", "CONDITIONS", "VERDICTS",
    "IMPLICATIONS", "INCOMPARABLE", "SCHEMA_VERSION",
]
