import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bifluid.coupling import run_level1
from bifluid.diagnostics import (Bounds, CertificateReport, almost_uniqueness_test,
                                 bogovskii_1d, bogovskii_constant, certify_run, domination_check,
                                 near_boundary_pressure, observed_orders, phi_battery,
                                 ratio_compactness, ratio_transport_residual,
                                 weak_solution_ledgers)
from bifluid.geometry import LinearVelocity, Mesh
from bifluid.scenario import load_scenario
from bifluid.transport import FaceFlux, mass_ledger, weak_continuity_residual

from oracles import bogovskii_x


def test_report_entry_kinds():
    rep = CertificateReport("x")
    rep.add("a", 1e-12, 1e-10, "abs")
    rep.add("b", -1e-7, 1e-6, "lower")
    rep.add("c", 3.0, 2.0, "upper")
    rep.add("d", np.bool_(True), None, "bool")
    rep.add("e", float("nan"), None, "info")
    rep.add("f", float("nan"), 1.0, "abs")
    assert rep.failures() == ["c", "f"] and not rep.ok
    d = rep.to_dict()
    assert d["entries"]["d"]["value"] is True and d["failures"] == ["c", "f"]
    assert "FAIL" in rep.summary()


@pytest.mark.parametrize("name", ["constant", "inflow-fill", "smooth", "two-isentropic-gases"])
def test_initial_margins_nonnegative(name):
    scen = load_scenario(name)
    assert domination_check(scen.initial_densities, scen.bounds)["min_margin"] >= -1e-15


def test_ratio_transport_residual_constant(run):
    scen, traj, _ = run("constant")
    assert np.abs(ratio_transport_residual(traj, scen.ratio_floor)).max() < 1e-13


def test_ratio_floor_irrelevant_when_R_positive(run):
    scen, traj, _ = run("smooth")
    assert traj.fields[..., 2].min() > 0
    a = ratio_transport_residual(traj, scen.a_lo)
    b = ratio_transport_residual(traj, scen.a_hi)
    assert np.array_equal(a, b)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 16))
def test_ratio_compactness_properties(seed):
    rng = np.random.default_rng(seed)
    mesh = Mesh.interval(20)
    lo, hi = 0.25, 1.0
    R = rng.uniform(0, 3, (4, 20))
    s_n, s = rng.uniform(lo, hi, (4, 20)), rng.uniform(lo, hi, (4, 20))
    Fb = np.tile([-1.0, 1.0], (3, 1))
    times = np.linspace(0, 0.3, 4)
    out = ratio_compactness(mesh, R, s_n, s, Fb, times)
    assert np.all(out["interior"] >= 0) and np.all(out["boundary"] >= 0)
    assert np.all(out["interior"] <= (hi - lo) ** 2 * (R @ mesh.volumes) + 1e-15)
    same = ratio_compactness(mesh, R, s, s, Fb, times)
    assert np.all(same["interior"] == 0) and np.all(same["boundary"] == 0)
    # vanishing where R_n = 0 does not count
    R0 = np.where(s_n != s, 0.0, R)
    assert np.all(ratio_compactness(mesh, R0, s_n, s, Fb, times)["interior"] == 0)


def build_uniqueness(N):
    mesh = Mesh.interval(N)
    x = mesh.centers[:, 0]
    dt = 0.5 * mesh.h[0]
    return dict(mesh=mesh, flux=FaceFlux.from_field(mesh, LinearVelocity(1.0, 0.5)),
                s0=0.5 + 0.2 * np.sin(2 * np.pi * x), s_B=0.5,
                rho0=np.where(x < 0.5, 0.0, 1.0 + x), rho_B=0.0, dt=dt, nsteps=round(0.3 / dt))


def test_almost_uniqueness_identical_variants():
    res = almost_uniqueness_test(build_uniqueness, [50, 100], variants=("implicit", "implicit"))
    assert all(r["inside"] == 0 and r["outside"] == 0 for r in res["rows"])


def test_almost_uniqueness_order_and_vacuum_listing():
    res = almost_uniqueness_test(build_uniqueness, [50, 100, 200, 400])
    assert res["min_order"] >= 0.9
    # the inflow carries vacuum, which is reported but not asserted
    assert all(r["vacuum_fraction"] > 0.4 and r["outside"] > 0 for r in res["rows"])


def test_observed_orders():
    assert np.allclose(observed_orders([1, 0.5, 0.25], [4, 1, 0.25]), 2.0)


def test_bogovskii_examples():
    mesh = Mesh.interval(64)
    out = bogovskii_1d(np.full(64, 3.0), mesh)
    assert np.all(out["faces"] == 0)
    x = mesh.centers[:, 0]
    out = bogovskii_1d(x, mesh)
    xf = np.linspace(0, 1, 65)
    assert out["mean"] == pytest.approx(0.5)
    # midpoint sums of a linear function are exact
    assert np.allclose(out["faces"], bogovskii_x(xf), atol=1e-15)
    assert out["faces"][0] == 0 and out["faces"][-1] == 0
    with pytest.raises(ValueError):
        bogovskii_1d(np.ones(4), Mesh.rectangle(2, 2))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 16), N=st.integers(2, 200))
def test_bogovskii_identities(seed, N):
    mesh = Mesh.interval(N, 2.0)
    r = np.random.default_rng(seed).normal(size=N)
    out = bogovskii_1d(r, mesh)
    assert out["faces"][0] == 0.0 and out["faces"][-1] == 0.0
    assert out["identity_error"] <= 1e-13 * max(1.0, np.abs(r).max()) * N


def test_bogovskii_constant_bounded():
    mesh = Mesh.interval(100)
    rng = np.random.default_rng(0)
    C, ratios = bogovskii_constant(mesh, [rng.normal(size=100) for _ in range(50)])
    assert 0 < C < 2 and len(ratios) == 50


def test_near_boundary_pressure_uniform_and_zero():
    mesh = Mesh.interval(400)
    times = np.linspace(0, 0.5, 6)
    P = np.full((6, 400), 2.0)
    hs = [0.01, 0.02, 0.04, 0.08]
    out = near_boundary_pressure(mesh, P, times, hs)
    assert out["exponent"] == pytest.approx(1.0, rel=0.05)
    assert np.allclose(out["integrals"], 2.0 * 0.5 * 2 * np.array(hs))
    zero = near_boundary_pressure(mesh, np.zeros((6, 400)), times, hs)
    assert zero["integrals"] == [0.0] * 4 and not zero["ok"]


def test_near_boundary_pressure_standard_scenario(run):
    scen, traj, _ = run("inflow-fill")
    R, Z = traj.fields[..., 2], traj.fields[..., 3]
    out = near_boundary_pressure(traj.mesh, scen.law.pressure(R, Z), traj.times,
                                 [0.02, 0.04, 0.08, 0.16])
    assert out["ok"] and out["exponent"] > 0


def test_phi_one_matches_mass_ledger_bitwise(run):
    scen, traj, _ = run("smooth")
    rep = weak_solution_ledgers(traj, scen)
    assert rep.entries["phi1_matches_mass_ledger"].value is True
    assert np.array_equal(weak_continuity_residual(traj), mass_ledger(traj)["per_step"])


def test_weak_ledgers_constant(run):
    scen, traj, _ = run("constant")
    rep = weak_solution_ledgers(traj, scen)
    vals = [e.value for k, e in rep.entries.items() if k.startswith(("continuity", "alpha"))]
    assert max(vals) <= 1e-10
    assert rep.ok


@pytest.mark.slow
def test_weak_residuals_decay_under_refinement(run):
    cells = [100, 200, 400]
    res = {}
    for N in cells:
        scen, traj, _ = run("smooth", N)
        bat = phi_battery(traj.mesh, traj.times[-1])
        for name in ("x*1", "sin*t", "x2*sin", "cos*1"):
            res.setdefault(name, []).append(
                np.abs(weak_continuity_residual(traj, bat[name]).sum(0)).max())
    for name, errs in res.items():
        assert observed_orders([1 / N for N in cells], errs).min() >= 0.9, name


def test_certificates_are_pure(run):
    scen, traj, rep = run("inflow-fill")
    again = certify_run(traj, scen)
    assert again.to_json() == rep.to_json()
