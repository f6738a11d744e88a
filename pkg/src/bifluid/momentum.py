"""Galerkin velocity, viscous stress and the discrete momentum balance.

The velocity is ``u = v + u_B`` with ``v = sum_i c_i w_i`` in a span of
sine modes that vanish on the boundary, and ``u_B`` a prescribed lift.

The momentum step is the conservative balance

    sum |K| (rho u - rho_old u_old) . phi_K / dt
      + sum_int G_f u_hat_f . (phi_L - phi_R) + sum_bnd G_b u_hat_b . phi_K
      - sum |K| P_K div_K(phi) + sum |K| S(grad u) : grad phi = 0

for every mode ``phi``, where ``G`` is the total mass flux of the density
scheme and ``u_hat`` is upwinded by the sign of ``G``.  It is linear in the
new coefficients: implicit in viscosity and in the transported velocity,
with the mass flux and pressure frozen from the density solve.
"""
from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla


class GalerkinBasis:
    """Tensor sine modes on a Cartesian mesh.

    In 1D ``w_k = sqrt(2/L) sin(k pi (x - x0)/L)``, ``k = 1..n``.  In 2D the
    modes are ``e_c w_kx(x) w_ky(y)`` for each component ``c``.  With at most
    ``N - 1`` modes per axis the family is orthonormal in the midpoint
    discrete inner product and its gradients are orthogonal as well.
    """

    def __init__(self, mesh, n):
        n = int(n)
        if n < 1:
            raise ValueError("need at least one mode")
        if n > min(mesh.shape) - 1:
            raise ValueError(f"at most {min(mesh.shape) - 1} modes per axis on this mesh")
        self.mesh, self.n_axis = mesh, n
        d = mesh.dim
        ks = np.arange(1, n + 1)
        if d == 1:
            labels = [(0, (k,)) for k in ks]
        else:
            labels = [(c, (kx, ky)) for c in range(d) for kx in ks for ky in ks]
        self.labels = labels
        self.n = len(labels)
        self.values = self._eval(mesh.centers)
        self.gradients = self._eval_grad(mesh.centers)
        face_vals = self._eval(mesh.face_center)
        self.face_normal_values = np.einsum("ifd,fd->if", face_vals, mesh.face_normal)
        # modes vanish on boundary faces; drop the sin(k pi) round-off
        self.bface_values = np.zeros((self.n, mesh.n_bfaces, d))
        self.div_cells = self._divergence()
        self.eigenvalues = np.array([
            sum((k * np.pi / L) ** 2 for k, L in zip(ks_, mesh.lengths)) for _, ks_ in labels])
        self.mass = np.einsum("k,ikd,jkd->ij", mesh.volumes, self.values, self.values)

    def _factors(self, points):
        pts = np.atleast_2d(points)
        out = []
        for a in range(self.mesh.dim):
            L, x0 = self.mesh.lengths[a], self.mesh.origin[a]
            arg = np.pi * np.outer(np.arange(1, self.n_axis + 1), pts[:, a] - x0) / L
            k = np.arange(1, self.n_axis + 1)[:, None] * np.pi / L
            out.append((np.sqrt(2 / L) * np.sin(arg), np.sqrt(2 / L) * k * np.cos(arg)))
        return out

    def _eval(self, points):
        fac = self._factors(points)
        P = np.atleast_2d(points).shape[0]
        d = self.mesh.dim
        vals = np.zeros((self.n, P, d))
        for i, (c, ks) in enumerate(self.labels):
            v = np.ones(P)
            for a, k in enumerate(ks):
                v = v * fac[a][0][k - 1]
            vals[i, :, c] = v
        return vals

    def _eval_grad(self, points):
        fac = self._factors(points)
        P = np.atleast_2d(points).shape[0]
        d = self.mesh.dim
        grads = np.zeros((self.n, P, d, d))
        for i, (c, ks) in enumerate(self.labels):
            for a in range(d):
                g = np.ones(P)
                for b, k in enumerate(ks):
                    g = g * (fac[b][1][k - 1] if a == b else fac[b][0][k - 1])
                grads[i, :, c, a] = g
        return grads

    def _divergence(self):
        """Face-based discrete divergence of every mode, per cell."""
        m = self.mesh
        net = np.zeros((self.n, m.n_cells))
        fl = self.face_normal_values * m.face_area
        for i in range(self.n):
            np.add.at(net[i], m.face_left, fl[i])
            np.add.at(net[i], m.face_right, -fl[i])
        return net / m.volumes

    def field(self, c):
        """Cell values of ``v = sum c_i w_i`` with shape ``(N, d)``."""
        return np.tensordot(np.asarray(c, float), self.values, axes=(0, 0))

    def grad(self, c):
        return np.tensordot(np.asarray(c, float), self.gradients, axes=(0, 0))

    def face_normal(self, c):
        return np.asarray(c, float) @ self.face_normal_values

    def divergence(self, c):
        return np.asarray(c, float) @ self.div_cells

    def stiffness(self):
        return np.einsum("k,ikcd,jkcd->ij", self.mesh.volumes, self.gradients, self.gradients)

    def norm(self, c):
        """Discrete L2 norm of the Galerkin field (equal to |c| by orthonormality)."""
        v = self.field(c)
        return float(np.sqrt(self.mesh.volumes @ np.sum(v * v, axis=1)))


def viscous_stress(grad_u, mu, lam):
    """``S = mu (grad u + grad u^T) + lam tr(grad u) I`` on the trailing two axes."""
    g = np.asarray(grad_u, float)
    if g.ndim < 2:
        g = g.reshape(g.shape + (1, 1))
    d = g.shape[-1]
    tr = np.trace(g, axis1=-2, axis2=-1)
    return mu * (g + np.swapaxes(g, -1, -2)) + lam * tr[..., None, None] * np.eye(d)


def project_rhs(field, basis):
    """Discrete L2 projection of a cell field onto the Galerkin span."""
    f = np.asarray(field, float).reshape(basis.mesh.n_cells, -1)
    return np.einsum("k,kd,ikd->i", basis.mesh.volumes, f, basis.values)


class MassFlux:
    """Total mass flux on interior and boundary faces with the matching upwind side."""

    def __init__(self, interior, boundary):
        self.interior = np.asarray(interior, float)
        self.boundary = np.asarray(boundary, float)


def _upwind_index(mesh, G):
    return np.where(G >= 0, mesh.face_left, mesh.face_right)


class MomentumProblem:
    """Assembled linear momentum system for one step.

    Parameters are the cell densities (old and new total density), the
    mass flux ``G`` consistent with the new densities, the cell pressure,
    the old velocity coefficients, the lift data and the viscosities.
    ``convection=False`` drops the mass-flux terms (frozen densities).
    """

    def __init__(self, basis, bd, rho_old, rho, G: MassFlux, pressure, c_old, dt, mu, lam,
                 convection=True):
        self.basis, self.bd = basis, bd
        self.rho_old, self.rho = np.asarray(rho_old, float), np.asarray(rho, float)
        self.G, self.P = G, np.asarray(pressure, float)
        self.c_old = np.asarray(c_old, float)
        self.dt, self.mu, self.lam = float(dt), float(mu), float(lam)
        self.convection = convection

    def velocity(self, c):
        """Cell velocity ``u = v + u_B`` and its gradient."""
        b = self.basis
        return b.field(c) + self.bd.u_cells, b.grad(c) + self.bd.grad_cells

    def residual(self, c):
        """Momentum balance tested with every mode, evaluated term by term."""
        b, m, bd = self.basis, self.basis.mesh, self.bd
        vol = m.volumes
        u, gu = self.velocity(c)
        u_old, _ = self.velocity(self.c_old)
        res = np.einsum("k,kd,ikd->i", vol / self.dt,
                        self.rho[:, None] * u - self.rho_old[:, None] * u_old, b.values)
        if self.convection:
            G = self.G.interior
            up = _upwind_index(m, G)
            diff = b.values[:, m.face_left] - b.values[:, m.face_right]
            res += np.einsum("f,fd,ifd->i", G, u[up], diff)
            Gb = self.G.boundary
            uhat = np.where((Gb > 0)[:, None], u[m.bface_cell], bd.u_bfaces)
            res += np.einsum("f,fd,ifd->i", Gb, uhat, b.values[:, m.bface_cell])
            res -= b.div_cells @ (vol * self.P)
        S = viscous_stress(gu, self.mu, self.lam)
        res += np.einsum("k,kcd,ikcd->i", vol, S, b.gradients)
        return res

    def assemble(self):
        """Matrix ``A`` and right side ``f`` with ``residual(c) = A c - f``."""
        b, m, bd = self.basis, self.basis.mesh, self.bd
        vol = m.volumes
        W = b.values
        A = np.einsum("k,ikd,jkd->ij", vol * self.rho / self.dt, W, W)
        u_old, _ = self.velocity(self.c_old)
        f = np.einsum("k,kd,ikd->i", vol / self.dt,
                      self.rho_old[:, None] * u_old - self.rho[:, None] * bd.u_cells, W)
        if self.convection:
            G = self.G.interior
            up = _upwind_index(m, G)
            diff = W[:, m.face_left] - W[:, m.face_right]
            A += np.einsum("f,jfd,ifd->ij", G, W[:, up], diff)
            f -= np.einsum("f,fd,ifd->i", G, bd.u_cells[up], diff)
            Gb = self.G.boundary
            out = Gb > 0
            cells = m.bface_cell
            A += np.einsum("f,jfd,ifd->ij", Gb[out], W[:, cells[out]], W[:, cells[out]])
            f -= np.einsum("f,fd,ifd->i", Gb[out], bd.u_cells[cells[out]], W[:, cells[out]])
            f -= np.einsum("f,fd,ifd->i", Gb[~out], bd.u_bfaces[~out], W[:, cells[~out]])
            f += b.div_cells @ (vol * self.P)
        A += viscous_matrix(b, self.mu, self.lam)
        f -= np.einsum("k,kcd,ikcd->i", vol, viscous_stress(bd.grad_cells, self.mu, self.lam),
                       b.gradients)
        return A, f

    def solve(self):
        A, f = self.assemble()
        try:
            with warnings.catch_warnings():
                # a zero pivot is reported below with a condition estimate
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu = sla.lu_factor(A)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise np.linalg.LinAlgError(f"singular Galerkin system: {exc}") from exc
        if np.any(np.abs(np.diag(lu[0])) == 0):
            raise np.linalg.LinAlgError(
                f"singular Galerkin system (condition estimate {np.linalg.cond(A):.3e})")
        return sla.lu_solve(lu, f)


def viscous_matrix(basis, mu, lam):
    """``V_ij = sum |K| S(grad w_j) : grad w_i``, cached on the basis."""
    cache = basis.__dict__.setdefault("_viscous", {})
    key = (float(mu), float(lam))
    if key not in cache:
        S = viscous_stress(basis.gradients, mu, lam)
        cache[key] = np.einsum("k,jkcd,ikcd->ij", basis.mesh.volumes, S, basis.gradients)
    return cache[key]


def momentum_step(basis, bd, rho_old, rho, G, pressure, c_old, dt, mu, lam, convection=True):
    """Advance the Galerkin coefficients one step; returns ``(c_new, residual)``."""
    prob = MomentumProblem(basis, bd, rho_old, rho, G, pressure, c_old, dt, mu, lam, convection)
    c = prob.solve()
    return c, prob.residual(c)
