"""Cartesian meshes, boundary bookkeeping and inflow/outflow classification.

Cells are flattened in C order, so in 2D cell ``(i, j)`` has index
``i * ny + j``.  Interior faces carry a unit normal pointing from their
``left`` cell to their ``right`` cell; boundary faces carry the outward
normal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOL_BC = 1e-12


class Mesh:
    """Uniform Cartesian mesh on an interval or a rectangle."""

    def __init__(self, cells, lengths, origin=None):
        cells = tuple(int(n) for n in np.atleast_1d(cells))
        lengths = tuple(float(l) for l in np.atleast_1d(lengths))
        if len(cells) not in (1, 2) or len(lengths) != len(cells):
            raise ValueError("only 1D and 2D meshes are supported")
        if min(cells) < 2:
            raise ValueError("need at least two cells per axis")
        if min(lengths) <= 0:
            raise ValueError("domain lengths must be positive")
        self.dim = len(cells)
        self.shape = cells
        self.lengths = np.array(lengths)
        self.origin = np.zeros(self.dim) if origin is None else np.asarray(origin, float)
        self.h = self.lengths / np.array(cells)
        self.n_cells = int(np.prod(cells))

        axes = [self.origin[a] + (np.arange(cells[a]) + 0.5) * self.h[a]
                for a in range(self.dim)]
        grids = np.meshgrid(*axes, indexing="ij")
        self.centers = np.stack([g.ravel() for g in grids], axis=1)
        self.volumes = np.full(self.n_cells, float(np.prod(self.h)))
        self._build_faces()
        self.centers.setflags(write=False)
        self.volumes.setflags(write=False)

    @classmethod
    def interval(cls, n, length=1.0, origin=0.0):
        return cls([n], [length], [origin])

    @classmethod
    def rectangle(cls, nx, ny, lx=1.0, ly=1.0, origin=(0.0, 0.0)):
        return cls([nx, ny], [lx, ly], origin)

    @property
    def measure(self):
        return float(np.prod(self.lengths))

    def _build_faces(self):
        idx = np.arange(self.n_cells).reshape(self.shape)
        left, right, normal, area, dist, center = [], [], [], [], [], []
        b_cell, b_normal, b_area, b_center, b_side = [], [], [], [], []
        for a in range(self.dim):
            e = np.zeros(self.dim)
            e[a] = 1.0
            face_area = float(np.prod(np.delete(self.h, a))) if self.dim > 1 else 1.0
            lo = np.take(idx, np.arange(self.shape[a] - 1), axis=a).ravel()
            hi = np.take(idx, np.arange(1, self.shape[a]), axis=a).ravel()
            left.append(lo)
            right.append(hi)
            normal.append(np.tile(e, (lo.size, 1)))
            area.append(np.full(lo.size, face_area))
            dist.append(np.full(lo.size, self.h[a]))
            center.append(0.5 * (self.centers[lo] + self.centers[hi]))
            for side, sign in ((0, -1.0), (1, 1.0)):
                pos = 0 if side == 0 else self.shape[a] - 1
                cells = np.take(idx, pos, axis=a).ravel()
                c = self.centers[cells].copy()
                c[:, a] += sign * 0.5 * self.h[a]
                b_cell.append(cells)
                b_normal.append(np.tile(sign * e, (cells.size, 1)))
                b_area.append(np.full(cells.size, face_area))
                b_center.append(c)
                b_side.append(np.full(cells.size, 2 * a + side))
        self.face_left = np.concatenate(left)
        self.face_right = np.concatenate(right)
        self.face_normal = np.concatenate(normal)
        self.face_area = np.concatenate(area)
        self.face_dist = np.concatenate(dist)
        self.face_center = np.concatenate(center)
        self.bface_cell = np.concatenate(b_cell)
        self.bface_normal = np.concatenate(b_normal)
        self.bface_area = np.concatenate(b_area)
        self.bface_center = np.concatenate(b_center)
        # 0/1 = low/high end of x, 2/3 = low/high end of y
        self.bface_side = np.concatenate(b_side)
        # cell width across each boundary face
        self.bface_width = self.h[self.bface_side // 2]
        for arr in (self.face_left, self.face_right, self.face_normal, self.face_area,
                    self.face_dist, self.face_center, self.bface_cell, self.bface_normal,
                    self.bface_area, self.bface_center, self.bface_side, self.bface_width):
            arr.setflags(write=False)

    @property
    def n_faces(self):
        return self.face_left.size

    @property
    def n_bfaces(self):
        return self.bface_cell.size

    def boundary_distance(self, points=None):
        """Distance from points (default: cell centers) to the boundary."""
        pts = self.centers if points is None else np.atleast_2d(points)
        lo = pts - self.origin
        hi = self.origin + self.lengths - pts
        return np.minimum(lo, hi).min(axis=1)

    def integrate(self, field):
        """Midpoint rule over cells; ``field`` may carry trailing axes."""
        return np.tensordot(self.volumes, field, axes=(0, 0))

    def __repr__(self):
        return f"Mesh(cells={self.shape}, lengths={tuple(self.lengths)})"


@dataclass(frozen=True)
class BoundaryPartition:
    """Boundary face indices split by the sign of u_B . n."""

    inflow: np.ndarray
    outflow: np.ndarray
    wall: np.ndarray
    normal_velocity: np.ndarray

    def sets(self):
        return {"in": self.inflow, "out": self.outflow, "0": self.wall}


def _boundary_velocity(mesh, u_B):
    if hasattr(u_B, "value"):
        return u_B.value(mesh.bface_center)
    vals = np.asarray(u_B, float)
    if vals.ndim == 1 and vals.size == mesh.dim:
        return np.tile(vals, (mesh.n_bfaces, 1))
    return vals.reshape(mesh.n_bfaces, mesh.dim)


def classify_boundary(mesh, u_B, tol=TOL_BC):
    """Split the boundary faces into inflow, outflow and tangential sets.

    ``u_B`` is a velocity field object (anything with ``value(points)``),
    a constant vector, or an array of boundary-face velocities.
    """
    un = np.einsum("fd,fd->f", _boundary_velocity(mesh, u_B), mesh.bface_normal)
    faces = np.arange(mesh.n_bfaces)
    return BoundaryPartition(
        inflow=faces[un < -tol],
        outflow=faces[un > tol],
        wall=faces[np.abs(un) <= tol],
        normal_velocity=un,
    )


def boundary_flux(mesh, r, u_B, faces):
    """Midpoint quadrature of the flux of ``r u_B . n`` over a set of boundary faces.

    ``r`` holds one value per boundary face of the mesh (or a scalar).
    """
    faces = np.asarray(faces, dtype=int)
    un = np.einsum("fd,fd->f", _boundary_velocity(mesh, u_B), mesh.bface_normal)
    r = np.broadcast_to(np.asarray(r, float), (mesh.n_bfaces,))
    return float(np.sum(r[faces] * un[faces] * mesh.bface_area[faces]))


# --- prescribed boundary velocity fields -------------------------------------

class UniformVelocity:
    """Constant velocity everywhere."""

    def __init__(self, value):
        self.vector = np.atleast_1d(np.asarray(value, float))

    def value(self, points):
        points = np.atleast_2d(points)
        return np.tile(self.vector, (points.shape[0], 1))

    def gradient(self, points):
        points = np.atleast_2d(points)
        d = self.vector.size
        return np.zeros((points.shape[0], d, d))


class LinearVelocity:
    """1D velocity interpolating linearly between the two end values."""

    def __init__(self, left, right, x0=0.0, length=1.0):
        self.left, self.right = float(left), float(right)
        self.x0, self.length = float(x0), float(length)

    def value(self, points):
        x = np.atleast_2d(points)[:, 0]
        t = (x - self.x0) / self.length
        return (self.left + (self.right - self.left) * t)[:, None]

    def gradient(self, points):
        n = np.atleast_2d(points).shape[0]
        return np.full((n, 1, 1), (self.right - self.left) / self.length)


class BlendVelocity:
    """Boundary velocities extended inward by a linear-in-distance cutoff.

    ``sides`` maps side codes (0/1 = low/high x, 2/3 = low/high y) to the
    velocity vector prescribed there.  Each side contributes
    ``U_side * max(0, 1 - dist/width)``; contributions of adjacent sides add up
    near corners.
    """

    def __init__(self, mesh, sides, fraction=0.2):
        self.dim = mesh.dim
        self.origin = mesh.origin.copy()
        self.lengths = mesh.lengths.copy()
        self.width = fraction * self.lengths
        self.sides = {int(k): np.atleast_1d(np.asarray(v, float)) for k, v in sides.items()}

    def _dist(self, x, side):
        a, hi = divmod(side, 2)
        if hi:
            return self.origin[a] + self.lengths[a] - x[:, a], -1.0
        return x[:, a] - self.origin[a], 1.0

    def value(self, points):
        x = np.atleast_2d(points)
        out = np.zeros((x.shape[0], self.dim))
        for side, vec in self.sides.items():
            d, _ = self._dist(x, side)
            w = self.width[side // 2]
            out += np.clip(1.0 - d / w, 0.0, None)[:, None] * vec
        return out

    def gradient(self, points):
        x = np.atleast_2d(points)
        out = np.zeros((x.shape[0], self.dim, self.dim))
        for side, vec in self.sides.items():
            a = side // 2
            d, ddist = self._dist(x, side)
            w = self.width[a]
            active = (d < w).astype(float)
            out[:, :, a] += (-active * ddist / w)[:, None] * vec
        return out


SPECIES = ("rho", "z", "R", "Z")


class BoundaryData:
    """Prescribed velocity field and boundary densities.

    ``densities`` maps species names to arrays with one value per boundary
    face (only the inflow entries matter to the solvers).
    """

    def __init__(self, mesh, velocity, densities, tol=TOL_BC):
        self.mesh = mesh
        self.velocity = velocity
        self.partition = classify_boundary(mesh, velocity, tol)
        self.densities = {}
        for name, vals in densities.items():
            arr = np.broadcast_to(np.asarray(vals, float), (mesh.n_bfaces,)).copy()
            arr.setflags(write=False)
            self.densities[name] = arr
        self.un = self.partition.normal_velocity
        # velocity of the lift at cells / faces, used by every solver
        self.u_cells = velocity.value(mesh.centers)
        self.grad_cells = velocity.gradient(mesh.centers)
        self.un_faces = np.einsum("fd,fd->f", velocity.value(mesh.face_center),
                                  mesh.face_normal)
        self.u_bfaces = velocity.value(mesh.bface_center)

    def stacked(self, species=SPECIES):
        return np.stack([self.densities[s] for s in species], axis=1)

    def inflow_positive(self):
        """Hypothesis (ruB) restricted to the faces where it matters."""
        faces = self.partition.inflow
        return {s: bool(np.all(v[faces] > 0)) for s, v in self.densities.items()}
