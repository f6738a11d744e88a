"""Certificates evaluated on recorded trajectories."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import SPECIES
from .transport import (FaceFlux, ParabolicOperator, TransportRecord, boundary_bregman,
                        entropy, mass_ledger, maxmin_certificate, ratio, renorm_budget,
                        square, transport_step, truncated, weak_continuity_residual)

DOMINATION_TOL = 1e-12


# --- report ------------------------------------------------------------------

@dataclass
class Entry:
    value: float
    tolerance: float | None
    kind: str = "abs"  # abs: |v| <= tol, lower: v >= -tol, upper: v <= tol, bool, info
    detail: dict = field(default_factory=dict)

    @property
    def passed(self):
        v = self.value
        if self.kind == "info":
            return True
        if self.kind == "bool":
            return bool(v)
        if v is None or not np.isfinite(v):
            return False
        if self.kind == "abs":
            return abs(v) <= self.tolerance
        if self.kind == "lower":
            return v >= -self.tolerance
        return v <= self.tolerance


class CertificateReport:
    """Named residuals with tolerances and verdicts."""

    def __init__(self, name=""):
        self.name = name
        self.entries: dict[str, Entry] = {}

    def add(self, key, value, tolerance=None, kind="abs", **detail):
        if isinstance(value, (bool, np.bool_)):
            value = bool(value)
        elif value is not None:
            value = float(value)
        self.entries[key] = Entry(value, tolerance, kind, detail)
        return self.entries[key]

    def merge(self, other, prefix=""):
        for k, e in other.entries.items():
            self.entries[prefix + k] = e

    @property
    def ok(self):
        return all(e.passed for e in self.entries.values())

    def failures(self):
        return sorted(k for k, e in self.entries.items() if not e.passed)

    def to_dict(self):
        return {
            "name": self.name,
            "ok": self.ok,
            "failures": self.failures(),
            "entries": {k: {"value": e.value, "tolerance": e.tolerance, "kind": e.kind,
                            "pass": e.passed, **_plain(e.detail)}
                        for k, e in sorted(self.entries.items())},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self):
        lines = [f"{'certificate':36s} {'value':>13s} {'tol':>10s}  verdict"]
        for k, e in sorted(self.entries.items()):
            val = "-" if e.value is None else (str(e.value) if e.kind == "bool" else f"{e.value:.3e}")
            tol = "-" if e.tolerance is None else f"{e.tolerance:.1e}"
            lines.append(f"{k:36s} {val:>13s} {tol:>10s}  {'pass' if e.passed else 'FAIL'}")
        return "\n".join(lines)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# --- domination --------------------------------------------------------------

@dataclass(frozen=True)
class Bounds:
    a_lo: float
    a_hi: float
    F_lo: float
    F_hi: float
    G_lo: float
    G_hi: float


def domination_check(densities, bounds: Bounds, tol=DOMINATION_TOL):
    """Cone margins for stacked densities ``(..., N, 4)`` in the order rho, z, R, Z."""
    d = np.asarray(densities, float)
    rho, z, R, Z = (d[..., i] for i in range(4))
    margins = {
        "Z-aR": Z - bounds.a_lo * R,
        "AR-Z": bounds.a_hi * R - Z,
        "rho-FR": rho - bounds.F_lo * R,
        "FR-rho": bounds.F_hi * R - rho,
        "z-GZ": z - bounds.G_lo * Z,
        "GZ-z": bounds.G_hi * Z - z,
    }
    out = {"margins": {}, "violations": []}
    for name, m in margins.items():
        out["margins"][name] = float(m.min())
        bad = np.argwhere(m < -tol)
        for idx in bad[:20]:
            out["violations"].append({"margin": name, "index": [int(i) for i in idx],
                                      "value": float(m[tuple(idx)])})
    out["min_margin"] = min(out["margins"].values())
    out["ok"] = not out["violations"]
    return out


# --- ratio machinery ------------------------------------------------------------

def ratio_transport_residual(traj, floor):
    """L1 distance between Z/R and the independently transported ratio, per snapshot."""
    R, Z = traj.fields[..., 2], traj.fields[..., 3]
    s_cont = ratio(Z, R, floor)
    return np.abs(s_cont - traj.ratio_field) @ traj.mesh.volumes


def ratio_compactness(mesh, R_n, s_n, s, flux_bnd, times):
    """Interior and outflow-boundary compactness functionals at every snapshot.

    ``R_n, s_n, s`` have shape ``(n+1, N)``; ``flux_bnd`` is ``(n, nb)``.
    """
    R_n, s_n, s = map(np.asarray, (R_n, s_n, s))
    interior = (R_n * (s_n - s) ** 2) @ mesh.volumes
    cb = mesh.bface_cell
    dt = np.diff(times)
    outf = np.where(flux_bnd > 0, flux_bnd, 0.0)
    per = np.sum(outf * R_n[1:, cb] * (s_n[1:, cb] - s[1:, cb]) ** 2, axis=1)
    boundary = np.concatenate([[0.0], np.cumsum(dt * per)])
    return {"interior": interior, "boundary": boundary}


def almost_uniqueness_run(mesh, flux, s0, s_B, rho0, rho_B, dt, nsteps,
                          variants=("explicit", "implicit"), thresh=1e-6):
    """Transport ``s`` with two scheme variants alongside a companion density."""
    sa, sb = np.array(s0, float), np.array(s0, float)
    rho = np.array(rho0, float)
    op = ParabolicOperator(mesh, flux, 0.0, dt)
    for _ in range(nsteps):
        sa = transport_step(sa, flux, dt, mesh, s_B, implicit=variants[0] == "implicit")
        sb = transport_step(sb, flux, dt, mesh, s_B, implicit=variants[1] == "implicit")
        rho = op.solve(rho, rho_B)
    inside = rho > thresh
    diff = np.abs(sa - sb) * mesh.volumes
    return {"inside": float(diff[inside].sum()), "outside": float(diff[~inside].sum()),
            "vacuum_fraction": float(mesh.volumes[~inside].sum() / mesh.measure),
            "s": (sa, sb), "rho": rho}


def observed_orders(hs, errors):
    hs, errors = np.asarray(hs, float), np.asarray(errors, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:])


def almost_uniqueness_test(build, cells_list, variants=("explicit", "implicit"), thresh=1e-6):
    """Scheme-variant disagreement on ``{rho > thresh}`` under refinement.

    ``build(N)`` returns the keyword arguments of :func:`almost_uniqueness_run`
    except ``variants`` and ``thresh``.
    """
    rows = []
    for N in cells_list:
        kw = build(N)
        res = almost_uniqueness_run(variants=variants, thresh=thresh, **kw)
        rows.append({"cells": N, "h": float(kw["mesh"].h[0]), "inside": res["inside"],
                     "outside": res["outside"], "vacuum_fraction": res["vacuum_fraction"]})
    hs = [r["h"] for r in rows]
    orders = observed_orders(hs, [r["inside"] for r in rows]) if len(rows) > 1 else np.array([])
    return {"rows": rows, "orders": orders.tolist(),
            "min_order": float(orders.min()) if orders.size else float("nan")}


# --- Bogovskii and near-boundary pressure ------------------------------------

def bogovskii_1d(r, mesh):
    """Face values of ``B(x) = int_0^x (r - mean r)`` on a 1D mesh.

    ``B`` vanishes at both ends and its difference quotients reproduce
    ``r - mean r`` cell by cell; ``identity_error`` is the round-off left
    in the last cell, where ``B`` is pinned to zero.
    """
    if mesh.dim != 1:
        raise ValueError("bogovskii_1d needs a 1D mesh")
    r = np.asarray(r, float)
    h = mesh.h[0]
    dev = r - r.mean()
    B = np.zeros(r.size + 1)
    B[1:-1] = h * np.cumsum(dev)[:-1]
    deriv = np.diff(B) / h
    return {"faces": B, "cells": 0.5 * (B[1:] + B[:-1]), "derivative": deriv,
            "mean": float(r.mean()), "identity_error": float(np.max(np.abs(deriv - dev)))}


def bogovskii_constant(mesh, fields, p=2.0):
    """Fitted C in ``||B||_{W1p} <= C ||r||_{Lp}`` over an ensemble of fields."""
    h = mesh.h[0]
    ratios = []
    for r in fields:
        out = bogovskii_1d(r, mesh)
        Bn = (h * np.sum(np.abs(out["cells"]) ** p) + h * np.sum(np.abs(out["derivative"]) ** p)) ** (1 / p)
        rn = (h * np.sum(np.abs(r) ** p)) ** (1 / p)
        if rn > 0:
            ratios.append(Bn / rn)
    return float(max(ratios)), ratios


def near_boundary_pressure(mesh, pressure, times, h_list):
    """Space-time pressure integrals over the layers within ``h`` of the boundary
    and the least-squares exponent of their decay in ``h``."""
    P = np.asarray(pressure, float)
    dt = np.diff(times)
    dist = mesh.boundary_distance()
    integrals = []
    for h in h_list:
        layer = dist < h
        integrals.append(float(dt @ (P[1:][:, layer] @ mesh.volumes[layer])))
    integrals = np.array(integrals)
    pos = integrals > 0
    if pos.sum() >= 2:
        slope = float(np.polyfit(np.log(np.asarray(h_list)[pos]), np.log(integrals[pos]), 1)[0])
    else:
        slope = float("nan")
    return {"h": list(map(float, h_list)), "integrals": integrals.tolist(), "exponent": slope,
            "ok": bool(np.isfinite(slope) and slope > 0)}


# --- weak-solution ledgers -----------------------------------------------------

def phi_battery(mesh, T):
    """Tensor products of {1, x, x^2, sin pi x, cos pi x} (scaled x) and {1, t/T, sin(pi t/T)}."""
    x0, L = mesh.origin[0], mesh.lengths[0]
    pi = np.pi
    space = {"1": np.ones_like, "x": lambda x: x, "x2": lambda x: x * x,
             "sin": lambda x: np.sin(pi * x), "cos": lambda x: np.cos(pi * x)}
    time = {"1": lambda t: 1.0, "t": lambda t: t / T, "sin": lambda t: np.sin(pi * t / T)}
    out = {}
    for sn, f in space.items():
        for tn, g in time.items():
            def phi(t, p, f=f, g=g):
                return f((p[:, 0] - x0) / L) * g(t)
            out[f"{sn}*{tn}"] = phi
    return out


def alpha_transport_residual(traj, closure, alpha_B, phi, floor_F):
    """Weak residual of ``alpha_t + u . grad alpha = 0`` with ``alpha = F^-1(rho/R)``.

    Discretized like :func:`weak_continuity_residual`, with the
    non-conservative term written as ``div(alpha u) - alpha div u``.
    """
    mesh = traj.mesh
    vol = mesh.volumes
    L, R, cb = mesh.face_left, mesh.face_right, mesh.bface_cell
    alphas = [closure.F_inverse(ratio(d[:, 0], d[:, 2], floor_F))[0] for d in traj.fields]
    res = 0.0
    for n in range(traj.n_steps):
        t0, t1 = traj.times[n], traj.times[n + 1]
        dt = t1 - t0
        a0, a1 = alphas[n], alphas[n + 1]
        fl = traj.flux(n)
        div = fl.divergence(mesh)
        p0, p1 = phi(t0, mesh.centers), phi(t1, mesh.centers)
        conv = np.sum(fl.interior * 0.5 * (a1[L] + a1[R]) * (p1[R] - p1[L]))
        Fb = fl.boundary
        ab = np.where(Fb > 0, a1[cb], alpha_B)
        res += (vol @ (a1 * p1 - a0 * p0) - vol @ (a1 * (p1 - p0))
                - dt * (conv + vol @ (a1 * p1 * div)) + dt * np.sum(Fb * ab * p1[cb]))
    return float(res), alphas


def weak_solution_ledgers(traj, scenario, energy=None):
    """Weak continuity residuals over the test battery, the Galerkin momentum
    residual, the alpha-transport residual and the energy defect sign."""
    rep = CertificateReport("weak_solution_ledgers")
    battery = phi_battery(traj.mesh, float(traj.times[-1]))
    mass = mass_ledger(traj)
    vol = traj.mesh.volumes
    scale = np.maximum(np.abs(traj.fields[0]).T @ vol, 1e-300)
    for name, phi in battery.items():
        res = weak_continuity_residual(traj, None if name == "1*1" else phi)
        cum = np.abs(res.sum(0)) / scale
        for j, sp in enumerate(traj.species):
            rep.add(f"continuity[{sp}][{name}]", cum[j], None, "info")
    same = np.array_equal(weak_continuity_residual(traj), mass["per_step"])
    rep.add("phi1_matches_mass_ledger", same, None, "bool")
    rep.add("momentum_galerkin_residual", float(np.max(traj.momentum_residual, initial=0.0)),
            1e-10, "upper")
    if getattr(scenario, "closure", None) is not None:
        rB = scenario.bd.stacked()
        aB = scenario.closure.F_inverse(ratio(rB[:, 0], rB[:, 2], scenario.bounds.F_lo))[0]
        for name, phi in battery.items():
            r, _ = alpha_transport_residual(traj, scenario.closure, aB, phi, scenario.bounds.F_lo)
            rep.add(f"alpha_transport[{name}]", abs(r) / traj.mesh.measure, None, "info")
    if energy is not None:
        rep.add("energy_defect_sign", energy["min_defect_relative"], 1e-6, "lower")
    return rep


# --- full run certification ------------------------------------------------------

def certify_run(traj, scenario):
    """Every certificate of a level-I run, as one report."""
    from .coupling import energy_ledger
    rep = CertificateReport(getattr(scenario, "name", ""))
    ml = mass_ledger(traj)
    for j, sp in enumerate(traj.species):
        rep.add(f"mass_{sp}", ml["relative"][j], 1e-10, "abs")
    dom = domination_check(traj.fields, scenario.bounds)
    rep.add("domination_check", dom["min_margin"], DOMINATION_TOL, "lower",
            violations=dom["violations"][:5])
    rep.add("positivity", float(traj.fields.min()), 0.0, "lower")
    mm = maxmin_certificate(traj)
    for j, sp in enumerate(traj.species):
        scale = max(1.0, abs(float(mm["M"][j])))
        rep.add(f"max_principle_{sp}", mm["upper_margin"][j] / scale, 1e-12, "lower",
                continuum_margin=float(mm["upper_margin_continuum"][j]),
                div_norm=mm["div_norm"])
        rep.add(f"min_principle_{sp}", mm["lower_margin"][j] / scale, 1e-12, "lower",
                continuum_margin=float(mm["lower_margin_continuum"][j]))
    rb = renorm_budget(square(), traj)
    rep.add("renorm_s2", float(rb["relative"].max()), 1e-8, "abs")
    rep.add("renorm_s2_bregman_min", float(np.min(boundary_bregman(square(), traj), initial=0.0)),
            0.0, "lower")
    rep.add("renorm_s2_dissipation_sign", rb["dissipation_nonnegative"], None, "bool")
    for B in (entropy(), truncated(2)):
        b = renorm_budget(B, traj)
        rep.add(f"renorm_{B.name}", float(b["relative"].max()), 1e-8, "abs")
    en = energy_ledger(traj, scenario.law, scenario.bd)
    rep.add("energy_defect", en["min_defect_relative"], 1e-6, "lower")
    rep.add("energy_identity", float(np.abs(np.cumsum(en["identity"])).max(initial=0.0))
            / max(en["energy_scale"], 1e-300), 1e-8, "abs")
    rep.add("momentum_residual", float(np.max(traj.momentum_residual, initial=0.0)), 1e-10, "upper")
    rep.add("fixed_point_converged", traj.failure is None, None, "bool",
            max_iterations=int(np.max(traj.iterations, initial=0)))
    rt = ratio_transport_residual(traj, scenario.ratio_floor)
    rep.add("ratio_transport_residual", float(rt[-1]), None, "info")
    s = traj.ratio_field
    rep.add("ratio_range", float(min(s.min() - scenario.a_lo, scenario.a_hi - s.max())), 1e-12, "lower")
    return rep
