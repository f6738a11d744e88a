"""Per-step fixed point between the density solves and the Galerkin momentum,
the level-I time loop, the discrete energy ledger and parameter sweeps."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import SPECIES
from .momentum import GalerkinBasis, MassFlux, MomentumProblem, viscous_stress
from .thermo import ArtificialHelmholtz, check_artificial_exponent
from .transport import (FaceFlux, ParabolicOperator, TransportRecord, ratio,
                        transport_step)

log = logging.getLogger(__name__)


class FixedPointError(RuntimeError):
    def __init__(self, message, state=None, info=None):
        super().__init__(message)
        self.state, self.info = state, info


class CFLError(ValueError):
    pass


@dataclass(frozen=True)
class SchemeParams:
    eps: float = 0.0
    delta: float = 0.0
    c_art: float = 5.0
    modes: int = 4
    dt: float = 1e-3
    T: float = 0.1
    mu: float = 1.0
    lam: float = 0.0
    theta_fp: float = 0.7
    tol_fp: float = 1e-11
    max_iter: int = 200
    cfl_max: float = 0.5
    frozen_densities: bool = False
    abort_on_failure: bool = True

    def __post_init__(self):
        errs = []
        if self.eps < 0:
            errs.append("eps must be >= 0")
        if self.delta < 0:
            errs.append("delta must be >= 0")
        if self.dt <= 0 or self.T <= 0:
            errs.append("dt and T must be positive")
        if self.modes < 1:
            errs.append("need at least one Galerkin mode")
        if self.mu <= 0:
            errs.append("mu must be positive")
        if self.lam + 2.0 / 3.0 * self.mu < 0:
            errs.append("lam + 2/3 mu must be nonnegative")
        if not 0 < self.theta_fp <= 1:
            errs.append("theta_fp must lie in (0, 1]")
        if self.tol_fp <= 0 or self.max_iter < 1:
            errs.append("tol_fp and max_iter must be positive")
        if errs:
            raise ValueError("; ".join(errs))

    @property
    def n_steps(self):
        return max(1, int(round(self.T / self.dt)))


@dataclass
class FluidState:
    """Densities ``(N, 4)`` in the order rho, z, R, Z; Galerkin coefficients; time."""

    densities: np.ndarray
    coeffs: np.ndarray
    time: float = 0.0

    def species(self, name):
        return self.densities[:, SPECIES.index(name)]


@dataclass
class StepInfo:
    iterations: int
    increment: float
    rates: list
    c_star: np.ndarray
    flux: FaceFlux
    G: MassFlux
    residual: float
    cfl: float


@dataclass
class Trajectory(TransportRecord):
    coeffs: np.ndarray | None = None
    coeffs_star: np.ndarray | None = None
    G_int: np.ndarray | None = None
    G_bnd: np.ndarray | None = None
    iterations: np.ndarray | None = None
    momentum_residual: np.ndarray | None = None
    ratio_field: np.ndarray | None = None
    ratio_B: np.ndarray | None = None
    cfl: np.ndarray | None = None
    params: SchemeParams | None = None
    basis: GalerkinBasis | None = None
    failure: str | None = None

    def state(self, n):
        return FluidState(self.fields[n], self.coeffs[n], float(self.times[n]))


# --- one step ----------------------------------------------------------------

def mass_flux(mesh, flux: FaceFlux, eps, rho, rho_B):
    """Total mass flux of the density scheme for the total density ``rho``."""
    F = flux.interior
    L, R = mesh.face_left, mesh.face_right
    kd = eps * mesh.face_area / mesh.face_dist
    G = np.maximum(F, 0) * rho[L] + np.minimum(F, 0) * rho[R] - kd * (rho[R] - rho[L])
    Fb = flux.boundary
    Gb = np.where(Fb > 0, Fb * rho[mesh.bface_cell], np.where(Fb < 0, Fb * rho_B, 0.0))
    return MassFlux(G, Gb)


def _face_flux(basis, bd, c):
    return FaceFlux.from_normal_velocity(basis.mesh, basis.face_normal(c) + bd.un_faces, bd.un)


def _cfl(mesh, flux, dt):
    h = mesh.face_dist
    a = np.abs(flux.interior) / mesh.face_area
    ab = np.abs(flux.boundary) / mesh.bface_area
    return float(max(np.max(a * dt / h), np.max(ab * dt / mesh.bface_width)))


def pressure_cells(law, params, R, Z):
    R, Z = np.maximum(R, 0.0), np.maximum(Z, 0.0)
    return law.pressure(R, Z) + params.delta * (R ** params.c_art + Z ** params.c_art)


def transport_map(state, basis, bd, law, params, dt, c_star, r_B):
    """One application of the fixed-point map at the guess ``c_star``."""
    mesh = basis.mesh
    flux = _face_flux(basis, bd, c_star)
    rho_old = state.densities[:, 0] + state.densities[:, 1]
    if params.frozen_densities:
        dens = state.densities
        G = MassFlux(np.zeros(mesh.n_faces), np.zeros(mesh.n_bfaces))
        P = np.zeros(mesh.n_cells)
    else:
        op = ParabolicOperator(mesh, flux, params.eps, dt)
        dens = op.solve(state.densities, r_B)
        G = mass_flux(mesh, flux, params.eps, dens[:, 0] + dens[:, 1], r_B[:, 0] + r_B[:, 1])
        P = pressure_cells(law, params, dens[:, 2], dens[:, 3])
    prob = MomentumProblem(basis, bd, rho_old, dens[:, 0] + dens[:, 1], G, P, state.coeffs,
                           dt, params.mu, params.lam, convection=not params.frozen_densities)
    c_new = prob.solve()
    return dens, c_new, flux, G, prob


def fixed_point_solve(state: FluidState, basis, bd, law, params: SchemeParams, dt=None):
    """Damped iteration of the density/momentum map until the velocity settles.

    The accepted velocity is the momentum output at the last guess, so the
    momentum balance holds to round-off and the densities are those
    transported with the guess.
    """
    dt = params.dt if dt is None else dt
    r_B = bd.stacked()
    c_star = state.coeffs.copy()
    rates, prev = [], None
    for k in range(1, params.max_iter + 1):
        dens, c_new, flux, G, prob = transport_map(state, basis, bd, law, params, dt, c_star, r_B)
        inc = float(np.linalg.norm(c_new - c_star))
        if prev:
            rates.append(inc / prev)
        prev = inc
        if inc <= params.tol_fp * (1.0 + float(np.linalg.norm(c_new))):
            res = prob.residual(c_new)
            A, f = prob.assemble()
            scale = 1.0 + float(np.max(np.abs(f)))
            info = StepInfo(k, inc, rates, c_star, flux, G, float(np.max(np.abs(res))) / scale,
                            _cfl(basis.mesh, flux, dt))
            return FluidState(dens, c_new, state.time + dt), info
        c_star = (1.0 - params.theta_fp) * c_star + params.theta_fp * c_new
    info = StepInfo(params.max_iter, inc, rates, c_star, flux, G, np.nan, _cfl(basis.mesh, flux, dt))
    raise FixedPointError(f"fixed point did not converge in {params.max_iter} iterations "
                          f"(last increment {inc:.3e})", FluidState(dens, c_new, state.time + dt),
                          info)


# --- time loop ---------------------------------------------------------------

def run_level1(scenario, params: SchemeParams | None = None, certify=True):
    """Full level-I run of a scenario; returns ``(trajectory, report)``.

    ``scenario`` supplies ``mesh``, ``bd``, ``law``, ``initial`` (a
    :class:`FluidState`) and ``ratio_floor``.
    """
    params = scenario.params if params is None else params
    check_artificial_exponent(scenario.law, params.c_art)
    mesh, bd, law = scenario.mesh, scenario.bd, scenario.law
    basis = GalerkinBasis(mesh, params.modes)
    state = scenario.initial_state(basis)
    nsteps = params.n_steps
    dt = params.T / nsteps
    r_B = bd.stacked()
    floor = scenario.ratio_floor
    s_B = ratio(r_B[:, 3], r_B[:, 2], floor)
    s = ratio(state.densities[:, 3], state.densities[:, 2], floor)

    fields, coeffs, cstar, Fi, Fb, Gi, Gb = [state.densities], [state.coeffs], [], [], [], [], []
    iters, mres, cfls, ucells, ratios, times = [], [], [], [], [s], [0.0]
    failure = None
    for n in range(nsteps):
        try:
            new, info = fixed_point_solve(state, basis, bd, law, params, dt)
        except FixedPointError as exc:
            failure = f"step {n}: {exc}"
            if params.abort_on_failure:
                raise
            log.warning(failure)
            new, info = exc.state, exc.info
        if info.cfl > params.cfl_max + 1e-12:
            raise CFLError(f"step {n}: convective CFL {info.cfl:.3f} exceeds {params.cfl_max}")
        s = transport_step(s, info.flux, dt, mesh, s_B, implicit=True)
        fields.append(new.densities)
        coeffs.append(new.coeffs)
        cstar.append(info.c_star)
        Fi.append(info.flux.interior)
        Fb.append(info.flux.boundary)
        Gi.append(info.G.interior)
        Gb.append(info.G.boundary)
        iters.append(info.iterations)
        mres.append(info.residual)
        cfls.append(info.cfl)
        ucells.append(basis.field(info.c_star) + bd.u_cells)
        ratios.append(s)
        times.append((n + 1) * dt)
        state = new
        if failure:
            break
    nst = len(times) - 1
    traj = Trajectory(
        mesh=mesh, times=np.array(times), fields=np.array(fields),
        flux_int=np.array(Fi).reshape(nst, mesh.n_faces),
        flux_bnd=np.array(Fb).reshape(nst, mesh.n_bfaces),
        r_B=np.broadcast_to(r_B, (nst,) + r_B.shape), eps=params.eps,
        u_cells=np.array(ucells).reshape(nst, mesh.n_cells, mesh.dim), species=SPECIES,
        coeffs=np.array(coeffs), coeffs_star=np.array(cstar).reshape(nst, basis.n),
        G_int=np.array(Gi).reshape(nst, mesh.n_faces),
        G_bnd=np.array(Gb).reshape(nst, mesh.n_bfaces),
        iterations=np.array(iters, int), momentum_residual=np.array(mres),
        ratio_field=np.array(ratios), ratio_B=s_B, cfl=np.array(cfls),
        params=params, basis=basis, failure=failure)
    report = None
    if certify:
        from .diagnostics import certify_run
        report = certify_run(traj, scenario)
    return traj, report


# --- energy ------------------------------------------------------------------

ENERGY_TERMS = ("kinetic", "helmholtz", "viscous", "outflow", "inflow_relative", "eps_hessian",
                "inflow", "pressure_work", "viscous_lift_work", "convective_lift_work",
                "time_kinetic", "upwind_kinetic", "boundary_kinetic", "time_helmholtz",
                "upwind_helmholtz", "fixed_point_mismatch", "momentum_solve")


def energy_ledger(traj: Trajectory, law, bd):
    """Every term of the discrete energy balance, per step.

    ``lhs = dKE + dH + viscous + outflow + inflow_relative + eps_hessian``,
    ``rhs = inflow + pressure_work + viscous_lift_work + convective_lift_work``
    and the defect ``rhs - lhs`` equals the nonnegative numerical dissipation
    (time and upwind Bregman terms) minus the fixed-point mismatch.
    ``identity`` is what is left after subtracting those, i.e. the round-off
    in the discrete energy identity.
    """
    params, basis, mesh = traj.params, traj.basis, traj.mesh
    vol = mesh.volumes
    L, R = mesh.face_left, mesh.face_right
    H = ArtificialHelmholtz(law, params.delta, params.c_art)
    frozen = params.frozen_densities
    nst = traj.n_steps
    out = {k: np.zeros(nst) for k in ENERGY_TERMS}
    b = bd.u_cells
    gb = bd.grad_cells
    div_b = FaceFlux.from_normal_velocity(mesh, bd.un_faces, bd.un).divergence(mesh)
    kd = params.eps * mesh.face_area / mesh.face_dist
    XB = bd.stacked(("R", "Z"))

    def kinetic(n):
        v = basis.field(traj.coeffs[n])
        rho = traj.fields[n][:, 0] + traj.fields[n][:, 1]
        return 0.5 * vol @ (rho * np.sum(v * v, axis=1))

    def helm(n):
        X = traj.fields[n]
        return vol @ H.value(X[:, 2], X[:, 3])

    ke0, h0 = kinetic(0), (0.0 if frozen else helm(0))
    ke_prev, h_prev = ke0, h0
    for n in range(nst):
        dt = traj.dt(n)
        d0, d1 = traj.fields[n], traj.fields[n + 1]
        rho0, rho1 = d0[:, 0] + d0[:, 1], d1[:, 0] + d1[:, 1]
        c0, c1, cs = traj.coeffs[n], traj.coeffs[n + 1], traj.coeffs_star[n]
        v0, v1 = basis.field(c0), basis.field(c1)
        u1 = v1 + b
        gu1 = basis.grad(c1) + gb
        S = viscous_stress(gu1, params.mu, params.lam)
        ke = kinetic(n + 1)
        out["kinetic"][n] = ke - ke_prev
        ke_prev = ke
        out["viscous"][n] = dt * np.einsum("k,kcd,kcd->", vol, S, gu1)
        out["viscous_lift_work"][n] = dt * np.einsum("k,kcd,kcd->", vol, S, gb)
        out["time_kinetic"][n] = 0.5 * vol @ (rho0 * np.sum((v1 - v0) ** 2, axis=1))
        if not frozen:
            G, Gb = traj.G_int[n], traj.G_bnd[n]
            up = np.where(G >= 0, L, R)
            down = np.where(G >= 0, R, L)
            out["upwind_kinetic"][n] = 0.5 * dt * np.abs(G) @ np.sum((v1[L] - v1[R]) ** 2, axis=1)
            cb = mesh.bface_cell
            vb2 = np.sum(v1[cb] ** 2, axis=1)
            out["boundary_kinetic"][n] = 0.5 * dt * np.abs(Gb) @ vb2
            lift = np.abs(G) @ np.sum((b[down] - b[up]) * v1[down], axis=1)
            inn = Gb < 0
            lift += Gb[inn] @ np.sum((bd.u_bfaces[inn] - b[cb[inn]]) * v1[cb[inn]], axis=1)
            out["convective_lift_work"][n] = -dt * lift

            X0, X1 = d0[:, 2:4], d1[:, 2:4]
            hv = helm(n + 1)
            out["helmholtz"][n] = hv - h_prev
            h_prev = hv
            F, Fb = traj.flux_int[n], traj.flux_bnd[n]
            o, i = Fb > 0, Fb < 0
            gH = H.grad(X1[:, 0], X1[:, 1])
            out["eps_hessian"][n] = dt * np.sum(kd[:, None] * (X1[R] - X1[L]) * (gH[R] - gH[L]))
            out["outflow"][n] = dt * Fb[o] @ H.value(X1[cb[o], 0], X1[cb[o], 1])
            out["inflow_relative"][n] = -dt * Fb[i] @ H.bregman(XB[i], X1[cb[i]])
            out["inflow"][n] = -dt * Fb[i] @ H.value(XB[i, 0], XB[i, 1])
            P = H.pressure(X1[:, 0], X1[:, 1])
            out["pressure_work"][n] = -dt * vol @ (P * div_b)
            out["time_helmholtz"][n] = vol @ H.bregman(X0, X1)
            upF = np.where(F > 0, L, R)
            dnF = np.where(F > 0, R, L)
            out["upwind_helmholtz"][n] = dt * np.abs(F) @ H.bregman(X1[upF], X1[dnF])
            out["fixed_point_mismatch"][n] = dt * vol @ (
                P * (basis.divergence(cs) - basis.divergence(c1)))
        # the momentum balance tested with v itself (solver round-off)
        prob = MomentumProblem(basis, bd, rho0, rho1,
                               MassFlux(traj.G_int[n], traj.G_bnd[n]),
                               pressure_cells(law, params, d1[:, 2], d1[:, 3]) if not frozen
                               else np.zeros(mesh.n_cells),
                               c0, dt, params.mu, params.lam, convection=not frozen)
        out["momentum_solve"][n] = dt * prob.residual(c1) @ c1
        del u1
    lhs = (out["kinetic"] + out["helmholtz"] + out["viscous"] + out["outflow"]
           + out["inflow_relative"] + out["eps_hessian"])
    rhs = out["inflow"] + out["pressure_work"] + out["viscous_lift_work"] + out["convective_lift_work"]
    numdiss = (out["time_kinetic"] + out["upwind_kinetic"] + out["boundary_kinetic"]
               + out["time_helmholtz"] + out["upwind_helmholtz"])
    defect = rhs - lhs
    identity = defect - numdiss - out["fixed_point_mismatch"] + out["momentum_solve"]
    e0 = abs(ke0) + abs(h0)
    cum_defect = np.cumsum(defect)
    return {
        "terms": out,
        "defect": defect,
        "cumulative_defect": cum_defect,
        "numerical_dissipation": numdiss,
        "identity": identity,
        "initial_energy": ke0 + h0,
        "energy_scale": e0,
        "min_defect_relative": float(cum_defect.min() / max(e0, 1e-300)) if nst else 0.0,
        "ok": bool(nst == 0 or cum_defect.min() >= -1e-6 * max(e0, 1e-300)),
        "kinetic_loss": -float(out["kinetic"].sum()),
        "dissipation": float(out["viscous"].sum() + out["time_kinetic"].sum()),
        "viscous_only": float(out["viscous"].sum()),
    }


# --- sweeps ------------------------------------------------------------------

def _workers(n):
    env = os.environ.get("BIFLUID_WORKERS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n))


def _run_member(config, overrides):
    from .scenario import build_scenario
    scen = build_scenario(config)
    params = replace(scen.params, **overrides)
    try:
        traj, report = run_level1(scen, params)
    except Exception as exc:  # recorded, sweep continues
        return {"error": f"{type(exc).__name__}: {exc}"}
    R, Z = traj.fields[:, :, 2], traj.fields[:, :, 3]
    s = ratio(Z, R, scen.ratio_floor)
    P = pressure_cells(scen.law, params, R, Z)
    vol = traj.mesh.volumes
    return {
        "R": R, "Z": Z, "s": s, "fields": traj.fields, "pressure": P,
        "flux_bnd": traj.flux_bnd, "bface_cell": traj.mesh.bface_cell,
        "volumes": vol, "times": traj.times,
        "R_c_integral": float(np.max((R ** params.c_art) @ vol)),
        "report": report.to_dict() if report is not None else None,
    }


def _run_all(config, overrides_list):
    workers = _workers(len(overrides_list))
    if workers == 1:
        return [_run_member(config, o) for o in overrides_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_member, [config] * len(overrides_list), overrides_list))


def _compactness(run, ref):
    vol = run["volumes"]
    R, s, sr = run["R"], run["s"], ref["s"]
    interior = (R * (s - sr) ** 2) @ vol
    Fb = run["flux_bnd"]
    cb = run["bface_cell"]
    dt = np.diff(run["times"])
    outf = np.where(Fb > 0, Fb, 0.0)
    bnd = np.cumsum(dt * np.sum(outf * (R[1:, cb] * (s[1:, cb] - sr[1:, cb]) ** 2), axis=1))
    return interior, np.concatenate([[0.0], bnd])


def _sweep(scenario, key, values):
    values = [float(v) for v in values]
    runs = _run_all(scenario.config, [{key: v} for v in values])
    ok = [r for r in runs if "error" not in r]
    ref = runs[-1] if "error" not in runs[-1] else None
    rows = []
    for i, (val, run) in enumerate(zip(values, runs)):
        row = {key: val}
        if "error" in run:
            row["error"] = run["error"]
            rows.append(row)
            continue
        vol = run["volumes"]
        if ref is not None:
            interior, bnd = _compactness(run, ref)
            row["ratio_functional"] = float(interior[-1])
            row["ratio_functional_boundary"] = float(bnd[-1])
            row["ratio_functional_bound"] = float(
                (scenario.a_hi - scenario.a_lo) ** 2 * (run["R"][-1] @ vol))
        if i + 1 < len(runs) and "error" not in runs[i + 1]:
            nxt = runs[i + 1]
            row["cauchy_fields"] = float(np.max(np.abs(run["fields"][-1] - nxt["fields"][-1]).T @ vol))
            row["cauchy_pressure"] = float(np.abs(run["pressure"][-1] - nxt["pressure"][-1]) @ vol)
        row["delta_R_c"] = val * run["R_c_integral"] if key == "delta" else None
        rep = run["report"]
        if rep is not None:
            row["certificates_ok"] = rep["ok"]
            row["energy_min_defect"] = rep["entries"]["energy_defect"]["value"]
            row["mass_residual"] = max(v["value"] for k, v in rep["entries"].items()
                                       if k.startswith("mass_"))
        rows.append(row)
    return {"parameter": key, "values": values, "rows": rows, "n_ok": len(ok)}


def sweep_epsilon(scenario, eps_list):
    """Runs over a decreasing list of eps; the finest run is the reference."""
    eps_list = list(eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    return _sweep(scenario, "eps", eps_list)


def sweep_delta(scenario, delta_list):
    delta_list = list(delta_list)
    if any(b >= a for a, b in zip(delta_list, delta_list[1:])):
        raise ValueError("delta list must be strictly decreasing")
    return _sweep(scenario, "delta", delta_list)
