"""Acceptance criteria, one test per criterion, each recording a pass/fail line.

The lines are printed in the terminal summary of every pytest run.
"""
import filecmp
import time

import numpy as np
import pytest

from bifluid.cli import main
from bifluid.coupling import energy_ledger, run_level1, sweep_epsilon
from bifluid.diagnostics import (almost_uniqueness_test, bogovskii_1d, domination_check,
                                 near_boundary_pressure, observed_orders,
                                 ratio_transport_residual)
from bifluid.geometry import LinearVelocity, Mesh, UniformVelocity
from bifluid.output import save_trajectory
from bifluid.scenario import (alpha_roundtrip_norms, bundled_names, load_scenario,
                              reconstruct_alpha)
from bifluid.thermo import (PressureLaw, cone_samples, helmholtz, helmholtz_pde_residual,
                            truncation_L, truncation_T)
from bifluid.transport import (FaceFlux, TransportRecord, mass_ledger, maxmin_certificate,
                               transport_step)

import mms
from conftest import RUNTIMES, cached_run

ALL = bundled_names()
ONE_D_200 = [n for n in ALL if load_scenario(n).mesh.shape == (200,)]


def test_criterion_01_mass_ledgers(record):
    worst, slow = {}, {}
    for name in ALL:
        _, traj, _ = cached_run(name)
        worst[name] = float(mass_ledger(traj)["relative"].max())
    for name in ONE_D_200:
        slow[name] = RUNTIMES[(name, None)]
    ok = max(worst.values()) <= 1e-10 and max(slow.values()) < 10.0
    record(1, "mass ledgers", ok,
           f"max relative residual {max(worst.values()):.2e} over {len(ALL)} scenarios, "
           f"slowest 200-cell run {max(slow.values()):.1f} s")
    assert ok, (worst, slow)


def test_criterion_02_domination(record):
    margins, steps = {}, {}
    for name in ALL:
        scen, traj, _ = cached_run(name)
        margins[name] = domination_check(traj.fields, scen.bounds)["min_margin"]
        steps[name] = traj.n_steps
    ok = min(margins.values()) >= -1e-12 and max(steps.values()) >= 2000
    record(2, "domination", ok,
           f"min margin {min(margins.values()):.2e}, longest run {max(steps.values())} steps")
    assert ok, margins


def test_criterion_03_max_min_principles(record):
    failed = [n for n in ALL if not maxmin_certificate(cached_run(n)[1])["ok"]]
    # divergence-free flow: the bound is max(r0, r_B) with no growth factor
    _, traj, _ = cached_run("constant")
    mm = maxmin_certificate(traj)
    tol = 1e-12 * np.abs(mm["M"])
    exact_1d = mm["div_norm"] < 1e-12 and np.all(traj.fields.max(axis=(0, 1)) <= mm["M"] + tol) \
        and np.all(traj.fields.min(axis=(0, 1)) >= mm["m"] - tol)
    mesh = Mesh.rectangle(20, 10)
    flux = FaceFlux.from_field(mesh, UniformVelocity([1.0, 0.5]))
    x, y = mesh.centers.T
    r = [1.0 + 0.5 * np.sin(3 * x) * np.cos(2 * y)]
    rB = 1.2
    for _ in range(40):
        r.append(transport_step(r[-1], flux, 0.02, mesh, rB))
    r = np.array(r)
    bound_2d = np.all(r <= max(r[0].max(), rB) + 1e-12) and np.all(r >= min(r[0].min(), rB) - 1e-12)
    nb = mesh.n_bfaces
    rec = TransportRecord(mesh=mesh, times=0.02 * np.arange(41), fields=r[:, :, None],
                          flux_int=np.tile(flux.interior, (40, 1)),
                          flux_bnd=np.tile(flux.boundary, (40, 1)),
                          r_B=np.full((40, nb, 1), rB), eps=0.0)
    exact_2d = maxmin_certificate(rec)["ok"] and maxmin_certificate(rec)["div_norm"] < 1e-12
    ok = not failed and bool(exact_1d) and bool(bound_2d) and exact_2d
    record(3, "max/min principles", ok,
           f"{len(ALL) - len(failed)}/{len(ALL)} scenarios certified; divergence-free runs stay "
           f"in [min(r0, rB), max(r0, rB)]: {bool(exact_1d) and bool(bound_2d)}")
    assert ok, failed


def test_criterion_04_energy(record):
    defects = {}
    for name in ALL:
        scen, traj, _ = cached_run(name)
        defects[name] = energy_ledger(traj, scen.law, scen.bd)["min_defect_relative"]
    scen, traj, _ = cached_run("viscous-decay")
    en = energy_ledger(traj, scen.law, scen.bd)
    gap = abs(en["kinetic_loss"] - en["dissipation"]) / en["kinetic_loss"]
    ok = min(defects.values()) >= -1e-6 and gap <= 1e-6
    record(4, "energy inequality", ok,
           f"min relative defect {min(defects.values()):.2e}, viscous-decay loss/dissipation "
           f"gap {gap:.2e}")
    assert ok, (defects, gap)


def test_criterion_05_renormalized_square(record):
    res, breg = [], []
    for name in ALL:
        rep = cached_run(name)[2]
        res.append(rep.entries["renorm_s2"].value)
        breg.append(rep.entries["renorm_s2_bregman_min"].value)
    ok = max(res) <= 1e-8 and min(breg) >= 0.0
    record(5, "renormalized identity B=s^2", ok,
           f"max relative residual {max(res):.2e}, min boundary Bregman {min(breg):.2e}")
    assert ok


def test_criterion_06_helmholtz(record):
    laws = {n: load_scenario(n).law for n in ("smooth", "two-isentropic-gases", "compressive")}
    laws["quadrature"] = PressureLaw(lambda R, Z: R ** 2 + Z ** 2, cone=(0.25, 1.0))
    Zs = np.linspace(0.0, 3.0, 7)
    edges = max(max(np.abs(helmholtz(law, 1.0, Zs)).max(), np.abs(helmholtz(law, 0.0, Zs)).max())
                for law in laws.values())
    pde = max(float(np.max(helmholtz_pde_residual(law, *cone_samples(law, (0.5, 4.0), 20))))
              for law in laws.values())
    s = np.linspace(0.05, 10.0, 400)
    h = 1e-6
    lt = 0.0
    for k in (1.0, 2.0, 5.0):
        dL = (truncation_L(k, s + h) - truncation_L(k, s - h)) / (2 * h)
        lt = max(lt, float(np.abs(s * dL - truncation_L(k, s) - truncation_T(k, s)).max()))
    ok = edges == 0.0 and pde <= 1e-6 and lt <= 1e-6
    record(6, "Helmholtz consistency", ok,
           f"H(1,Z), H(0,Z) max {edges:.1e}, PDE residual {pde:.2e} on 20x20, "
           f"L/T identity {lt:.2e}")
    assert ok


def test_criterion_07_ratio_machinery(record):
    cells = [50, 100, 200, 400]
    res = []
    for N in cells:
        scen, traj, _ = cached_run("smooth", N)
        res.append(float(ratio_transport_residual(traj, scen.ratio_floor)[-1]))
    halving = [b / a for a, b in zip(res, res[1:])]
    halves = all(0.4 <= q <= 0.6 for q in halving)
    start = time.perf_counter()
    sweep = sweep_epsilon(load_scenario("smooth"), [1e-1, 1e-2, 1e-3, 1e-4])
    elapsed = time.perf_counter() - start
    fun = [r["ratio_functional"] for r in sweep["rows"]]
    decreasing = all(b < a for a, b in zip(fun, fun[1:]))
    ok = halves and decreasing and elapsed < 120 and sweep["n_ok"] == 4
    record(7, "ratio machinery", ok,
           f"residual ratios {', '.join(f'{q:.2f}' for q in halving)}; functional "
           f"{', '.join(f'{f:.2e}' for f in fun)}; sweep {elapsed:.1f} s")
    assert ok, (res, fun, elapsed)


def _uniqueness_case(N):
    mesh = Mesh.interval(N)
    x = mesh.centers[:, 0]
    dt = 0.5 * mesh.h[0]
    return dict(mesh=mesh, flux=FaceFlux.from_field(mesh, LinearVelocity(1.0, 0.5)),
                s0=0.5 + 0.2 * np.sin(2 * np.pi * x), s_B=0.5,
                rho0=np.where(x < 0.5, 0.0, 1.0 + x), rho_B=0.0, dt=dt, nsteps=round(0.3 / dt))


def test_criterion_08_almost_uniqueness(record):
    res = almost_uniqueness_test(_uniqueness_case, [50, 100, 200, 400])
    ok = res["min_order"] >= 0.9
    record(8, "almost-uniqueness proxy", ok,
           f"orders {', '.join(f'{o:.2f}' for o in res['orders'])} on rho > 1e-6")
    assert ok


def test_criterion_09_alpha_roundtrip(record):
    t0, orders, in_range = [], [], True
    for name in ("two-isentropic-gases", "smooth"):
        scen = load_scenario(name)
        t0.append(alpha_roundtrip_norms(reconstruct_alpha(scen.initial_densities, scen.closure),
                                        scen.mesh.volumes)["roundtrip"])
        errs = []
        for N in (100, 200, 400):
            scen, traj, _ = cached_run(name, N)
            for d in traj.fields[:: max(1, traj.n_steps // 10)]:
                in_range &= reconstruct_alpha(d, scen.closure)["in_range"]
            rec = reconstruct_alpha(traj.fields[-1], scen.closure)
            in_range &= rec["in_range"]
            errs.append(alpha_roundtrip_norms(rec, scen.mesh.volumes)["roundtrip"])
        orders.extend(observed_orders([1 / 100, 1 / 200, 1 / 400], errs))
    ok = max(t0) <= 1e-12 and min(orders) >= 0.9 and in_range
    record(9, "alpha roundtrip", ok,
           f"t=0 norm {max(t0):.1e}, orders at T {', '.join(f'{o:.2f}' for o in orders)}, "
           f"alpha in range {in_range}")
    assert ok


def test_criterion_10_manufactured_solutions(record):
    hs = [1 / N for N in mms.MESHES]
    par = observed_orders(hs, [mms.parabolic_error(N) for N in mms.MESHES])
    imp = observed_orders(hs, [mms.transport_error(N) for N in mms.MESHES])
    exp = observed_orders(hs, [mms.transport_error(N, implicit=False) for N in mms.MESHES])
    worst = min(par.min(), imp.min(), exp.min())
    ok = worst >= 0.9
    record(10, "manufactured solutions", ok,
           f"min L2 order parabolic {par.min():.2f}, transport implicit {imp.min():.2f}, "
           f"explicit {exp.min():.2f}")
    assert ok


def test_criterion_11_bogovskii(record):
    mesh = Mesh.interval(200)
    rng = np.random.default_rng(11)
    ends, ident = 0.0, 0.0
    for r in [rng.normal(size=200) for _ in range(20)] + [mesh.centers[:, 0] ** 2]:
        out = bogovskii_1d(r, mesh)
        ends = max(ends, abs(out["faces"][0]), abs(out["faces"][-1]))
        ident = max(ident, out["identity_error"])
    mesh = Mesh.interval(400)
    times = np.linspace(0.0, 0.5, 6)
    nb = near_boundary_pressure(mesh, np.full((6, 400), 2.0), times, [0.01, 0.02, 0.04, 0.08])
    gamma = nb["exponent"]
    ok = ends == 0.0 and ident <= 1e-13 and abs(gamma - 1.0) <= 0.05
    record(11, "Bogovskii", ok,
           f"end values {ends:.1e}, identity error {ident:.1e}, fitted exponent {gamma:.3f}")
    assert ok


def test_criterion_12_determinism(record, tmp_path):
    same = []
    for name in ALL:
        scen, traj, rep = cached_run(name)
        again, rep2 = run_level1(load_scenario(name))
        save_trajectory(tmp_path / "a.npz", traj)
        save_trajectory(tmp_path / "b.npz", again)
        same.append(filecmp.cmp(tmp_path / "a.npz", tmp_path / "b.npz", shallow=False)
                    and rep.to_json() == rep2.to_json())
    dirs = []
    for k in range(2):
        dirs.append(tmp_path / f"cli{k}")
        assert main(["simulate", "--scenario", "inflow-fill", "--cells", "60",
                     "--out", str(dirs[-1])]) == 0
    cmp = filecmp.dircmp(dirs[0], dirs[1])
    files = sorted(p.name for p in dirs[0].iterdir())
    _, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], files, shallow=False)
    cli_same = not mismatch and not errors and not cmp.left_only and not cmp.right_only
    ok = all(same) and cli_same
    record(12, "determinism", ok,
           f"{sum(same)}/{len(ALL)} scenarios byte-identical, CLI outputs "
           f"({len(files)} files) identical: {cli_same}")
    assert ok
