"""Deterministic writers: CSV tables, sorted JSON and a fixed-timestamp npz."""
from __future__ import annotations

import csv
import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .coupling import Trajectory
from .geometry import SPECIES
from .momentum import GalerkinBasis
from .transport import ratio

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)
TRAJECTORY_ARRAYS = ("times", "fields", "flux_int", "flux_bnd", "u_cells", "coeffs",
                     "coeffs_star", "G_int", "G_bnd", "iterations", "momentum_residual",
                     "ratio_field", "ratio_B", "cfl")


def fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def save_npz(path, arrays):
    """Like ``np.savez`` but with fixed member timestamps, so bytes are reproducible."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_FIXED_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def save_trajectory(path, traj: Trajectory):
    arrays = {k: getattr(traj, k) for k in TRAJECTORY_ARRAYS}
    arrays["r_B"] = np.asarray(traj.r_B[0] if traj.n_steps else np.zeros(0))
    arrays["eps"] = np.array(traj.eps)
    save_npz(path, arrays)


def load_trajectory(path, scenario):
    """Rebuild a trajectory recorded for ``scenario`` (mesh and lift come from it)."""
    with np.load(path, allow_pickle=False) as data:
        arr = {k: data[k] for k in data.files}
    nst = len(arr["times"]) - 1
    params = scenario.params.__class__(**{**scenario.params.__dict__, "eps": float(arr["eps"])})
    return Trajectory(
        mesh=scenario.mesh, times=arr["times"], fields=arr["fields"],
        flux_int=arr["flux_int"], flux_bnd=arr["flux_bnd"],
        r_B=np.broadcast_to(arr["r_B"], (nst,) + arr["r_B"].shape), eps=float(arr["eps"]),
        u_cells=arr["u_cells"], species=SPECIES, coeffs=arr["coeffs"],
        coeffs_star=arr["coeffs_star"], G_int=arr["G_int"], G_bnd=arr["G_bnd"],
        iterations=arr["iterations"], momentum_residual=arr["momentum_residual"],
        ratio_field=arr["ratio_field"], ratio_B=arr["ratio_B"], cfl=arr["cfl"],
        params=params, basis=GalerkinBasis(scenario.mesh, params.modes))


def snapshot_indices(n_steps, snapshots):
    k = max(1, int(snapshots))
    return sorted({int(round(i * n_steps / k)) for i in range(k + 1)})


def write_fields(path, traj, n, floor, lift_cells):
    mesh = traj.mesh
    d = traj.fields[n]
    s = ratio(d[:, 3], d[:, 2], floor)
    u = traj.basis.field(traj.coeffs[n]) + lift_cells
    coords = ["x", "y"][: mesh.dim]
    vel = ["u", "v"][: mesh.dim]
    rows = (list(mesh.centers[k]) + list(d[k]) + [s[k]] + list(u[k]) for k in range(mesh.n_cells))
    write_csv(path, coords + list(SPECIES) + ["s"] + vel, rows)
