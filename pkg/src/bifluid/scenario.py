"""Scenario files: parsing, hypothesis validation and construction.

A scenario is a TOML file.  Numbers may be replaced by expression strings
in the coordinates ``x`` (and ``y``), e.g. ``R = "3 + 0.5*sin(2*pi*x)"``.
See ``docs/scenario-format.md`` for the full schema.
"""
from __future__ import annotations

import ast
import copy
import math
import sys
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coupling import FluidState, SchemeParams
from .diagnostics import Bounds
from .geometry import SPECIES, BlendVelocity, BoundaryData, LinearVelocity, Mesh, UniformVelocity
from .momentum import project_rhs
from .thermo import (IsentropicMixture, cone_samples, convexity_check, drP_constant, dzP_check,
                     growth_constants, isentropic_closure, monotone_decomposition_check)


class ScenarioError(ValueError):
    """Invalid scenario; ``violations`` lists ``(tag, message)`` pairs."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(f"{tag}: {msg}" for tag, msg in self.violations))


# --- restricted expressions ---------------------------------------------------

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "tanh": np.tanh, "abs": np.abs, "where": np.where,
    "minimum": np.minimum, "maximum": np.maximum, "clip": np.clip,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
          ast.Compare, ast.operator, ast.unaryop, ast.cmpop, ast.BoolOp, ast.boolop)


def compile_profile(expr, variables=("x", "y")):
    """Compile a number or an arithmetic expression into ``f(points) -> (P,)``."""
    if isinstance(expr, (int, float)) and not isinstance(expr, bool):
        val = float(expr)
        return lambda pts: np.full(np.atleast_2d(pts).shape[0], val)
    if not isinstance(expr, str):
        raise ValueError(f"profile must be a number or an expression string, got {expr!r}")
    tree = ast.parse(expr, mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ValueError(f"disallowed syntax {type(node).__name__} in {expr!r}")
        if isinstance(node, ast.Name) and node.id not in _FUNCS and node.id not in _CONSTS \
                and node.id not in variables:
            raise ValueError(f"unknown name {node.id!r} in {expr!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name)
                                               and node.func.id in _FUNCS):
            raise ValueError(f"only whitelisted functions may be called in {expr!r}")
    code = compile(tree, "<profile>", "eval")

    def f(pts):
        pts = np.atleast_2d(pts)
        env = dict(_FUNCS, **_CONSTS)
        for i, v in enumerate(variables[: pts.shape[1]]):
            env[v] = pts[:, i]
        out = eval(code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(out, float), (pts.shape[0],)).copy()
    return f


# --- scenario ------------------------------------------------------------------

@dataclass
class Scenario:
    name: str
    seed: int
    config: dict
    mesh: Mesh
    bd: BoundaryData
    law: IsentropicMixture
    closure: object
    bounds: Bounds
    params: SchemeParams
    ratio_floor: float
    initial_densities: np.ndarray
    v0: list
    snapshots: int
    alpha0: np.ndarray | None = None
    alpha_B: np.ndarray | None = None

    @property
    def a_lo(self):
        return self.bounds.a_lo

    @property
    def a_hi(self):
        return self.bounds.a_hi

    def initial_state(self, basis):
        d = self.mesh.dim
        v = np.stack([f(self.mesh.centers) for f in self.v0], axis=1).reshape(-1, d)
        return FluidState(self.initial_densities.copy(), project_rhs(v, basis), 0.0)


def _velocity(mesh, spec):
    kind = spec.get("kind", "uniform")
    if kind == "uniform":
        return UniformVelocity(np.atleast_1d(spec["value"]))
    if kind == "linear":
        if mesh.dim != 1:
            raise ValueError("linear lift is 1D only")
        return LinearVelocity(spec["left"], spec["right"], mesh.origin[0], mesh.lengths[0])
    if kind == "blend":
        return BlendVelocity(mesh, {int(k): v for k, v in spec["sides"].items()},
                             spec.get("fraction", 0.2))
    raise ValueError(f"unknown lift kind {kind!r}")


def _densities(section, points, closure, where):
    """Four species from (R, Z, rho, z), (R, s, rho, z) or (alpha, rho, z)."""
    ev = {k: compile_profile(v)(points) for k, v in section.items()
          if k in ("R", "Z", "rho", "z", "s", "alpha")}
    alpha = None
    if "alpha" in ev:
        if closure is None:
            raise ValueError(f"{where}: alpha data needs a [closure] section")
        alpha = ev["alpha"]
        if np.any(alpha <= 0) or np.any(alpha >= 1):
            raise ScenarioError([("Theorem 2", f"{where}: alpha outside (0, 1)")])
        R = closure.f(alpha) * ev["rho"]
        Z = closure.g(alpha) * ev["z"]
        return np.stack([ev["rho"], ev["z"], R, Z], axis=1), alpha
    R = ev["R"]
    Z = ev["Z"] if "Z" in ev else ev["s"] * R
    return np.stack([ev["rho"], ev["z"], R, Z], axis=1), alpha


def _params(cfg, mesh, lift):
    sch = dict(cfg.get("scheme", {}))
    dt_cfl = sch.pop("dt_cfl", None)
    T = float(sch.get("T", SchemeParams.T))
    if dt_cfl is not None:
        umax = float(np.max(np.abs(lift.value(mesh.face_center)))) if mesh.n_faces else 1.0
        umax = max(umax, float(sch.pop("u_ref", 1.0)))
        dt = dt_cfl * float(mesh.h.min()) / umax
        sch["dt"] = T / max(1, math.ceil(T / dt))
    sch.pop("u_ref", None)
    names = {f.name for f in fields(SchemeParams)}
    unknown = set(sch) - names
    if unknown:
        raise ValueError(f"unknown [scheme] keys: {sorted(unknown)}")
    return sch


def build_scenario(config, cells=None, dt=None, **overrides):
    """Build and validate a scenario from a parsed config dictionary."""
    cfg = copy.deepcopy(config)
    if cells is not None:
        cfg.setdefault("mesh", {})["cells"] = list(np.atleast_1d(cells).astype(int).tolist())
    if dt is not None:
        sch = cfg.setdefault("scheme", {})
        sch.pop("dt_cfl", None)
        sch["dt"] = float(dt)
    violations = []
    m = cfg["mesh"]
    mesh = Mesh(m["cells"], m.get("lengths", [1.0] * len(m["cells"])), m.get("origin"))
    pr = cfg.get("pressure", {})
    if pr.get("preset", "isentropic") != "isentropic":
        raise ValueError(f"unknown pressure preset {pr.get('preset')!r}")
    g_plus = float(pr.get("gamma_plus", 2.0))
    g_minus = float(pr.get("gamma_minus", 2.0))
    cone = tuple(pr.get("cone", (0.25, 1.0)))
    law = IsentropicMixture(pr.get("a_plus", 1.0), pr.get("a_minus", 1.0), g_plus, g_minus, cone)
    if g_plus < 2:
        violations.append(("(eq2.6)", f"adiabatic exponent gamma = {g_plus} violates gamma >= 2"))
    closure = None
    if "closure" in cfg:
        cl = cfg["closure"]
        try:
            closure = isentropic_closure(cl.get("gamma_plus", g_plus), cl.get("gamma_minus", g_minus),
                                         tuple(cl.get("alpha_bounds", (0.1, 0.9))))
        except ValueError as exc:
            # alpha data cannot be converted without the closure
            raise ScenarioError(violations + [("(Pg)", str(exc))]) from None
    lift = _velocity(mesh, cfg["boundary"].get("velocity", {"kind": "uniform",
                                                              "value": [0.0] * mesh.dim}))
    sch = _params(cfg, mesh, lift)
    sch.update(overrides)
    try:
        params = SchemeParams(**sch)
    except ValueError as exc:
        for msg in str(exc).split("; "):
            violations.append(("(e4) viscosity" if ("mu" in msg or "lam" in msg) else "scheme", msg))
        params = None
    c_art = float(sch.get("c_art", SchemeParams.c_art))
    if c_art <= max(4.5, law.beta, law.gamma):
        violations.append(("(Pdelta)", f"c = {c_art} must exceed max(9/2, beta, gamma) = "
                                       f"{max(4.5, law.beta, law.gamma)}"))
    try:
        dens0, alpha0 = _densities(cfg["initial"], mesh.centers, closure, "initial")
        densB, alphaB = _densities(cfg["boundary"], mesh.bface_center, closure, "boundary")
    except ScenarioError as exc:
        raise ScenarioError(violations + exc.violations) from None
    bd = BoundaryData(mesh, lift, dict(zip(SPECIES, densB.T)))
    inn = bd.partition.inflow
    for sp, ok in bd.inflow_positive().items():
        if not ok:
            violations.append(("(ruB)", f"inflow boundary density {sp} must be positive"))
    if np.any(dens0 < 0):
        violations.append(("(eq2.1)", "initial densities must be nonnegative"))
    a_lo, a_hi = cone

    def cone_ok(d, where):
        R, Z = d[:, 2], d[:, 3]
        bad = np.sum((Z < a_lo * R - 1e-14 * R) | (Z > a_hi * R + 1e-14 * R))
        if bad:
            violations.append(("(eq2.1)", f"{where}: {bad} points with Z/R outside [{a_lo}, {a_hi}]"))
    cone_ok(dens0, "initial data")
    cone_ok(densB[inn], "inflow data")
    if closure is not None:
        for a, where in ((alpha0, "initial"), (alphaB[inn] if alphaB is not None else None, "inflow")):
            if a is not None and a.size and (a.min() < closure.alpha_lo - 1e-14 or a.max() > closure.alpha_hi + 1e-14):
                violations.append(("Theorem 2", f"{where} alpha outside [{closure.alpha_lo}, "
                                                f"{closure.alpha_hi}]"))
        F_lo, F_hi = closure.F_bounds
        G_lo, G_hi = closure.G_bounds
    else:
        both = np.concatenate([dens0, densB[inn]])
        q, w = both[:, 0] / both[:, 2], both[:, 1] / both[:, 3]
        F_lo, F_hi, G_lo, G_hi = q.min(), q.max(), w.min(), w.max()
    bounds = Bounds(a_lo, a_hi, float(F_lo), float(F_hi), float(G_lo), float(G_hi))
    if closure is not None:
        both = np.concatenate([dens0, densB[inn]])
        tol = 1e-12
        if np.any(both[:, 0] < F_lo * both[:, 2] * (1 - tol)) or np.any(both[:, 0] > F_hi * both[:, 2] * (1 + tol)) \
                or np.any(both[:, 1] < G_lo * both[:, 3] * (1 - tol)) or np.any(both[:, 1] > G_hi * both[:, 3] * (1 + tol)):
            violations.append(("(eq5.1)", "data violate the closure bounds on rho/R or z/Z"))
    if params is not None and not params.frozen_densities:
        pts = np.concatenate([dens0, densB[inn]])[:, 2:4]
        pts = pts[(pts[:, 0] > 0) & (pts[:, 1] > 0)]  # H is smooth only in the open cone
        conv = convexity_check(law, pts[:, 0], pts[:, 1])
        if not conv["convex"]:
            violations.append(("(convH)", f"Helmholtz function not convex at {len(conv['failures'])} "
                                          f"data points, e.g. {conv['failures'][0][:2]}"))
    if params is not None and lift is not None:
        umax = float(np.max(np.abs(lift.value(np.concatenate([mesh.face_center, mesh.bface_center])))))
        cfl = umax * params.dt / float(mesh.h.min())
        if cfl > params.cfl_max:
            violations.append(("CFL", f"lift CFL {cfl:.3f} exceeds {params.cfl_max}"))
    out_cfg = cfg.get("output", {})
    floor = float(out_cfg.get("ratio_floor", a_lo))
    if not a_lo <= floor <= a_hi:
        violations.append(("(renofrac+)", f"ratio floor {floor} outside [{a_lo}, {a_hi}]"))
    if violations:
        raise ScenarioError(violations)
    vspec = cfg["initial"].get("v", 0.0)
    vspec = vspec if isinstance(vspec, list) else [vspec] * mesh.dim
    return Scenario(
        name=cfg.get("name", "scenario"), seed=int(cfg.get("seed", 0)), config=config,
        mesh=mesh, bd=bd, law=law, closure=closure, bounds=bounds, params=params,
        ratio_floor=floor, initial_densities=dens0, v0=[compile_profile(e) for e in vspec],
        snapshots=int(out_cfg.get("snapshots", 10)), alpha0=alpha0,
        alpha_B=alphaB)


def bundled_names():
    return sorted(p.name[:-5] for p in resources.files("bifluid.scenarios").iterdir()
                  if p.name.endswith(".toml"))


def read_config(path):
    """Parse a scenario file (or the name of a bundled preset)."""
    p = Path(path)
    if p.exists():
        text = p.read_text()
    elif str(path) in bundled_names():
        text = resources.files("bifluid.scenarios").joinpath(f"{path}.toml").read_text()
    else:
        raise FileNotFoundError(f"no scenario file or bundled preset named {path!r}")
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([("parse", f"{path}: {exc}")]) from None


def load_scenario(path, **kw):
    return build_scenario(read_config(path), **kw)


def hypothesis_report(scen):
    """Sampled validators of the pressure hypotheses (fitted constants, not proofs)."""
    law = scen.law
    R, Z = cone_samples(law, (0.5, 6.0), 20)
    return {
        "growth_pressure": growth_constants(law, R, Z, "pressure"),
        "growth_helmholtz": growth_constants(law, R, Z, "helmholtz"),
        "dzP": dzP_check(law, R, Z),
        "drP_constant": drP_constant(law, R, Z),
        "monotone_decomposition": {k: v for k, v in monotone_decomposition_check(
            law, np.linspace(law.a_lo, law.a_hi, 5)).items() if k != "violations"},
        "convexity_on_samples": len(convexity_check(law, R, Z)["failures"]),
    }


def reconstruct_alpha(densities, closure, F_floor=None, G_floor=None):
    """alpha from rho/R and from z/Z, with the roundtrip residuals."""
    d = np.asarray(densities, float)
    rho, z, R, Z = d[:, 0], d[:, 1], d[:, 2], d[:, 3]
    F_lo, _ = closure.F_bounds
    G_lo, _ = closure.G_bounds
    from .transport import ratio
    a, na = closure.F_inverse(ratio(rho, R, F_lo if F_floor is None else F_floor))
    at, nt = closure.G_inverse(ratio(z, Z, G_lo if G_floor is None else G_floor))
    return {
        "alpha": a, "alpha_tilde": at, "clamped": na + nt,
        "alpha_gap": a - at,
        "f_residual": closure.f(a) * rho - R,
        "g_residual": closure.g(a) * z - Z,
        "in_range": bool(a.min() >= closure.alpha_lo and a.max() <= closure.alpha_hi),
    }


def alpha_roundtrip_norms(rec, volumes):
    l1 = lambda v: float(np.abs(v) @ volumes)  # noqa: E731
    return {"alpha_gap": l1(rec["alpha_gap"]), "f_residual": l1(rec["f_residual"]),
            "g_residual": l1(rec["g_residual"]),
            "roundtrip": l1(rec["f_residual"]) + l1(rec["g_residual"]),
            "clamped": rec["clamped"], "in_range": rec["in_range"]}


def with_params(scen, **kw):
    return replace(scen, params=replace(scen.params, **kw))
