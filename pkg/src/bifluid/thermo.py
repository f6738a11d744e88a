"""Pressure laws, Helmholtz functions, bi-fluid closures and truncations.

The pressure potential (Helmholtz function) is

    H(R, Z) = R * int_1^R P(s, s Z / R) / s**2 ds,   H(0, Z) = 0,

which solves ``R dH/dR + Z dH/dZ - H = P``.  The isentropic mixture has a
closed form; any other law falls back to adaptive Simpson quadrature.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.optimize import brentq


class QuadratureError(RuntimeError):
    def __init__(self, message, error_estimate):
        super().__init__(f"{message} (error estimate {error_estimate:.3e})")
        self.error_estimate = error_estimate


def adaptive_simpson(f, a, b, rtol=1e-10, max_depth=50):
    """Adaptive composite Simpson rule; returns ``(value, error_estimate)``."""
    if a == b:
        return 0.0, 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4 * fm + fb)
    scale = max(abs(whole), 1e-300)
    err_total = 0.0
    stack = [(a, b, fa, fm, fb, whole, 0)]
    total = 0.0
    while stack:
        lo, hi, flo, fmid, fhi, est, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = (mid - lo) / 6.0 * (flo + 4 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4 * frm + fhi)
        err = abs(left + right - est) / 15.0
        width = (hi - lo) / (b - a)
        if err <= rtol * scale * abs(width) or depth >= max_depth:
            if depth >= max_depth and err > rtol * scale * abs(width):
                raise QuadratureError("Simpson quadrature did not converge", err)
            total += left + right + (left + right - est) / 15.0
            err_total += err
        else:
            stack.append((lo, mid, flo, flm, fmid, left, depth + 1))
            stack.append((mid, hi, fmid, frm, fhi, right, depth + 1))
    return total, err_total


class PressureLaw:
    """Barotropic pressure ``P(R, Z)`` on the cone ``a_lo R < Z < a_hi R``.

    Subclasses override :meth:`pressure` (and the closed forms when known).
    The generic Helmholtz machinery integrates :meth:`pressure` numerically
    and differentiates by central differences.
    """

    gamma = 2.0
    beta = 2.0
    gamma_lo = 1.0
    gamma_hi = 1.0

    def __init__(self, evaluator=None, *, gamma=2.0, beta=2.0, gamma_lo=1.0,
                 gamma_hi=1.0, cone=(0.0, 1.0)):
        self._evaluator = evaluator
        self.gamma, self.beta = float(gamma), float(beta)
        self.gamma_lo, self.gamma_hi = float(gamma_lo), float(gamma_hi)
        self.a_lo, self.a_hi = map(float, cone)
        if not 0 <= self.a_lo < self.a_hi:
            raise ValueError("cone bounds must satisfy 0 <= a_lo < a_hi")

    @property
    def gamma_bog(self):
        return min(2.0 / 3.0 * self.gamma - 1.0, self.gamma / 2.0)

    # --- pressure ---------------------------------------------------------
    def pressure(self, R, Z):
        return self._evaluator(np.asarray(R, float), np.asarray(Z, float))

    def dP_dR(self, R, Z, step=1e-6):
        R, Z = np.asarray(R, float), np.asarray(Z, float)
        hs = step * np.maximum(1.0, R)
        return (self.pressure(R + hs, Z) - self.pressure(np.maximum(R - hs, 0), Z)) / (
            R + hs - np.maximum(R - hs, 0))

    def dP_dZ(self, R, Z, step=1e-6):
        R, Z = np.asarray(R, float), np.asarray(Z, float)
        hs = step * np.maximum(1.0, Z)
        return (self.pressure(R, Z + hs) - self.pressure(R, np.maximum(Z - hs, 0))) / (
            Z + hs - np.maximum(Z - hs, 0))

    # --- Helmholtz function -------------------------------------------------
    def _helmholtz_scalar(self, R, Z, rtol=1e-10):
        if R == 0.0:
            return 0.0
        ratio = Z / R
        val, _ = adaptive_simpson(
            lambda s: float(self.pressure(s, s * ratio)) / s ** 2, 1.0, R, rtol=rtol)
        return R * val

    def helmholtz(self, R, Z):
        R, Z = np.broadcast_arrays(np.asarray(R, float), np.asarray(Z, float))
        out = np.array([self._helmholtz_scalar(r, z) for r, z in zip(R.ravel(), Z.ravel())])
        return out.reshape(R.shape) if R.ndim else float(out[0])

    def helmholtz_grad(self, R, Z, step=1e-5):
        R, Z = np.asarray(R, float), np.asarray(Z, float)
        dR = (self.helmholtz(R + step, Z) - self.helmholtz(R - step, Z)) / (2 * step)
        dZ = (self.helmholtz(R, Z + step) - self.helmholtz(R, Z - step)) / (2 * step)
        return np.stack([dR, dZ], axis=-1)

    def helmholtz_hessian(self, R, Z, step=1e-4):
        R, Z = float(R), float(Z)
        g = lambda r, z: self.helmholtz_grad(r, z, step=step)  # noqa: E731
        hR = (g(R + step, Z) - g(R - step, Z)) / (2 * step)
        hZ = (g(R, Z + step) - g(R, Z - step)) / (2 * step)
        H = np.array([hR, hZ])
        return 0.5 * (H + H.T)


class IsentropicMixture(PressureLaw):
    """``P = a_plus R**gamma_plus + a_minus Z**gamma_minus`` with closed-form H."""

    def __init__(self, a_plus=1.0, a_minus=1.0, gamma_plus=2.0, gamma_minus=2.0,
                 cone=(0.25, 1.0)):
        super().__init__(gamma=gamma_plus, beta=gamma_minus, gamma_lo=1.0,
                         gamma_hi=1.0, cone=cone)
        self.a_plus, self.a_minus = float(a_plus), float(a_minus)
        self.gamma_plus, self.gamma_minus = float(gamma_plus), float(gamma_minus)
        if min(self.a_plus, self.a_minus) <= 0:
            raise ValueError("pressure coefficients must be positive")
        # dP/dZ = g a Z^(g-1) = g a s^(g-1) R^(g-1) on the cone
        self.gamma_lo = min(1.0, self.gamma_minus)
        self.gamma_hi = max(1.0, self.gamma_minus)

    def pressure(self, R, Z):
        R, Z = np.asarray(R, float), np.asarray(Z, float)
        return self.a_plus * R ** self.gamma_plus + self.a_minus * Z ** self.gamma_minus

    def dP_dR(self, R, Z):
        R = np.asarray(R, float)
        return self.a_plus * self.gamma_plus * R ** (self.gamma_plus - 1) + 0 * np.asarray(Z)

    def dP_dZ(self, R, Z):
        Z = np.asarray(Z, float)
        return self.a_minus * self.gamma_minus * Z ** (self.gamma_minus - 1) + 0 * np.asarray(R)

    def helmholtz(self, R, Z):
        R, Z = np.asarray(R, float), np.asarray(Z, float)
        gp, gm, ap, am = self.gamma_plus, self.gamma_minus, self.a_plus, self.a_minus
        pos = R > 0
        Rs = np.where(pos, R, 1.0)
        Zs = np.where(pos, Z, 0.0)
        if gp == 1.0:
            hp = ap * Rs * np.log(Rs)
        else:
            hp = ap * (Rs ** gp - Rs) / (gp - 1)
        if gm == 1.0:
            hm = am * Zs * np.log(Rs)
        else:
            hm = am * Zs ** gm * (1.0 - Rs ** (1 - gm)) / (gm - 1)
        out = np.where(pos, hp + hm, 0.0)
        return out if out.ndim else float(out)

    def helmholtz_grad(self, R, Z):
        R, Z = np.asarray(R, float), np.asarray(Z, float)
        gp, gm, ap, am = self.gamma_plus, self.gamma_minus, self.a_plus, self.a_minus
        if gp == 1.0:
            dR = ap * (np.log(R) + 1)
        else:
            dR = ap * (gp * R ** (gp - 1) - 1) / (gp - 1)
        dR = dR + am * Z ** gm * R ** (-gm)
        if gm == 1.0:
            dZ = am * np.log(R)
        else:
            dZ = am * gm / (gm - 1) * Z ** (gm - 1) * (1.0 - R ** (1 - gm))
        return np.stack(np.broadcast_arrays(dR, dZ), axis=-1)

    def helmholtz_hessian(self, R, Z):
        R, Z = np.asarray(R, float), np.asarray(Z, float)
        gp, gm, ap, am = self.gamma_plus, self.gamma_minus, self.a_plus, self.a_minus
        hRR = ap * gp * R ** (gp - 2) - am * gm * Z ** gm * R ** (-gm - 1)
        hRZ = am * gm * Z ** (gm - 1) * R ** (-gm)
        if gm == 1.0:
            hZZ = 0.0 * R
        else:
            hZZ = am * gm * Z ** (gm - 2) * (1.0 - R ** (1 - gm))
        hRR, hRZ, hZZ = np.broadcast_arrays(hRR, hRZ, hZZ)
        return np.stack([np.stack([hRR, hRZ], -1), np.stack([hRZ, hZZ], -1)], -2)


# --- operations --------------------------------------------------------------

def _check_nonneg(R, Z):
    if np.any(np.asarray(R) < 0) or np.any(np.asarray(Z) < 0):
        raise ValueError("densities must be nonnegative")


def pressure(law, R, Z):
    _check_nonneg(R, Z)
    return law.pressure(R, Z)


def check_artificial_exponent(law, c_art, allow_override=False):
    bound = max(4.5, law.beta, law.gamma)
    if c_art <= bound:
        msg = f"artificial pressure exponent {c_art} must exceed max(9/2, beta, gamma) = {bound}"
        if not allow_override:
            raise ValueError(msg)
        warnings.warn(msg, stacklevel=3)


def pressure_delta(law, R, Z, delta, c_art, allow_override=False):
    """Pressure with the artificial term ``delta (R**c + Z**c)``."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    check_artificial_exponent(law, c_art, allow_override)
    _check_nonneg(R, Z)
    R, Z = np.asarray(R, float), np.asarray(Z, float)
    return law.pressure(R, Z) + delta * (R ** c_art + Z ** c_art)


def helmholtz(law, R, Z):
    _check_nonneg(R, Z)
    return law.helmholtz(R, Z)


class ArtificialHelmholtz:
    """H_delta = H + delta/(c-1) (R**c + Z**c), the potential of P_delta."""

    def __init__(self, law, delta, c_art):
        self.law, self.delta, self.c = law, float(delta), float(c_art)

    def pressure(self, R, Z):
        R, Z = np.asarray(R, float), np.asarray(Z, float)
        return self.law.pressure(R, Z) + self.delta * (R ** self.c + Z ** self.c)

    def value(self, R, Z):
        R, Z = np.asarray(R, float), np.asarray(Z, float)
        extra = self.delta / (self.c - 1) * (R ** self.c + Z ** self.c)
        return self.law.helmholtz(R, Z) + extra

    def grad(self, R, Z):
        R, Z = np.asarray(R, float), np.asarray(Z, float)
        k = self.delta * self.c / (self.c - 1)
        g = self.law.helmholtz_grad(R, Z)
        return g + k * np.stack(np.broadcast_arrays(R ** (self.c - 1), Z ** (self.c - 1)), -1)

    def bregman(self, a, b):
        """E_H(a | b) for stacked (R, Z) pairs along the last axis."""
        a, b = np.asarray(a, float), np.asarray(b, float)
        return (self.value(a[..., 0], a[..., 1]) - self.value(b[..., 0], b[..., 1])
                - np.sum(self.grad(b[..., 0], b[..., 1]) * (a - b), axis=-1))


def helmholtz_pde_residual(law, R, Z, step=1e-4):
    """|R dH/dR + Z dH/dZ - H - P| with central differences of H."""
    dR = (law.helmholtz(R + step, Z) - law.helmholtz(R - step, Z)) / (2 * step)
    dZ = (law.helmholtz(R, Z + step) - law.helmholtz(R, Z - step)) / (2 * step)
    return np.abs(R * dR + Z * dZ - law.helmholtz(R, Z) - law.pressure(R, Z))


# --- closures ----------------------------------------------------------------

class Closure:
    """Strictly monotone positive closure functions f, g on (0, 1).

    ``F = 1/f`` and ``G = 1/g`` are inverted by bracketing on
    ``[alpha_lo, alpha_hi]`` unless closed-form inverses are supplied.
    """

    def __init__(self, f, g, alpha_bounds=(0.1, 0.9), F_inv=None, G_inv=None):
        self.f, self.g = f, g
        self.alpha_lo, self.alpha_hi = map(float, alpha_bounds)
        if not 0 < self.alpha_lo < self.alpha_hi < 1:
            raise ValueError("alpha bounds must satisfy 0 < lo < hi < 1")
        self._F_inv, self._G_inv = F_inv, G_inv
        for name, fn in (("f", f), ("g", g)):
            vals = fn(np.linspace(self.alpha_lo, self.alpha_hi, 257))
            d = np.diff(vals)
            if np.any(vals <= 0) or not (np.all(d > 0) or np.all(d < 0)):
                raise ValueError(f"closure {name} must be positive and strictly monotone")

    def F(self, alpha):
        return 1.0 / self.f(alpha)

    def G(self, alpha):
        return 1.0 / self.g(alpha)

    def _bounds(self, fn):
        vals = fn(np.array([self.alpha_lo, self.alpha_hi]))
        return float(vals.min()), float(vals.max())

    @property
    def F_bounds(self):
        return self._bounds(self.F)

    @property
    def G_bounds(self):
        return self._bounds(self.G)

    def _invert(self, fn, closed, q):
        """Invert ``fn`` on the alpha range; returns (alpha, clamped_count)."""
        q = np.atleast_1d(np.asarray(q, float))
        lo, hi = self._bounds(fn)
        qc = np.clip(q, lo, hi)
        clamped = int(np.sum(qc != q))
        if closed is not None:
            alpha = closed(qc)
        else:
            alpha = np.array([
                brentq(lambda a, t=t: fn(a) - t, self.alpha_lo, self.alpha_hi, xtol=1e-15)
                for t in qc])
        return np.clip(alpha, self.alpha_lo, self.alpha_hi), clamped

    def F_inverse(self, q):
        return self._invert(self.F, self._F_inv, q)

    def G_inverse(self, q):
        return self._invert(self.G, self._G_inv, q)


def isentropic_closure(gamma_plus, gamma_minus, alpha_bounds=(0.1, 0.9)):
    """f(s) = s**(1/g+ - 1), g(s) = (1-s)**(1/g- - 1) of the two-gas mixture."""
    gp, gm = float(gamma_plus), float(gamma_minus)
    if gp == 1.0 or gm == 1.0:
        raise ValueError("isentropic closure is constant (not strictly monotone) for gamma = 1")
    ep, em = 1.0 / gp - 1.0, 1.0 / gm - 1.0
    return Closure(
        f=lambda s: np.asarray(s, float) ** ep,
        g=lambda s: (1.0 - np.asarray(s, float)) ** em,
        alpha_bounds=alpha_bounds,
        F_inv=lambda q: q ** (-1.0 / ep),
        G_inv=lambda q: 1.0 - q ** (-1.0 / em),
    )


def closure_eval(cl, which, alpha):
    alpha = np.asarray(alpha, float)
    if np.any(alpha <= 0) or np.any(alpha >= 1):
        raise ValueError("alpha must lie in the open interval (0, 1)")
    fn = {"f": cl.f, "g": cl.g, "F": cl.F, "G": cl.G}[which]
    out = fn(alpha)
    return float(out) if np.ndim(out) == 0 else out


# --- truncations -------------------------------------------------------------

def _T(s):
    s = np.asarray(s, float)
    t = s - 1.0
    return np.where(s <= 1.0, s, np.where(s >= 3.0, 2.0, 1.0 + t - 0.25 * t * t))


def truncation_T(k, s):
    """k T(s/k) with T(s) = s on [0,1], 2 on [3, inf) and a concave C1 blend between.

    The C1 cubic matching the endpoint values and slopes degenerates to the
    quadratic ``1 + t - t**2/4`` with ``t = s - 1``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    s = np.asarray(s, float)
    out = np.where(s <= k, s, k * _T(s / k))
    return float(out) if np.ndim(out) == 0 else out


def _antideriv_Tk_over_t2(k, t):
    """Continuous antiderivative of T_k(t)/t**2 on (0, inf), zero at t = k."""
    t = np.asarray(t, float)
    lin = np.log(t / k)

    def blend(x):
        # int [x - (x-k)^2/(4k)] / x^2 dx
        return np.log(x) - (x - 2 * k * np.log(x) - k * k / x) / (4 * k)

    mid = blend(t) - blend(k)
    at3k = blend(3 * k) - blend(k)
    tail = at3k + 2 * k * (1.0 / (3 * k) - 1.0 / t)
    return np.where(t <= k, lin, np.where(t <= 3 * k, mid, tail))


def truncation_L(k, s):
    """L_k(s) = s int_1^s T_k(t)/t**2 dt, with L_k(0) = 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    s = np.asarray(s, float)
    safe = np.where(s > 0, s, 1.0)
    out = np.where(s > 0, safe * (_antideriv_Tk_over_t2(k, safe) - _antideriv_Tk_over_t2(k, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def truncation_L_prime(k, s):
    s = np.asarray(s, float)
    return _antideriv_Tk_over_t2(k, s) - _antideriv_Tk_over_t2(k, 1.0) + truncation_T(k, s) / s


# --- hypothesis validators ---------------------------------------------------

def cone_samples(law, R_range=(0.5, 4.0), n=20, interior=True):
    """n x n grid of (R, Z) points in the cone, ratio strictly inside if requested."""
    Rs = np.linspace(*R_range, n)
    lo, hi = law.a_lo, law.a_hi
    if interior:
        pad = 1e-3 * (hi - lo)
        lo, hi = lo + pad, hi - pad
    ss = np.linspace(lo, hi, n)
    RR, SS = np.meshgrid(Rs, ss, indexing="ij")
    return RR.ravel(), (RR * SS).ravel()


def monotone_decomposition_check(law, ratio, R_samples=None):
    """Check that R -> P(R, R s) is non-decreasing for each sampled ratio s.

    Also reports the largest ``d`` for which ``P(R, R s) - d R**gamma`` stays
    non-decreasing on the sample grid.
    """
    ratio = np.atleast_1d(np.asarray(ratio, float))
    if np.any(ratio < law.a_lo - 1e-12) or np.any(ratio > law.a_hi + 1e-12):
        raise ValueError("ratio samples must lie in [a_lo, a_hi]")
    R = np.linspace(0.0, 5.0, 201) if R_samples is None else np.sort(np.asarray(R_samples, float))
    violations = []
    d_max = math.inf
    for s in ratio:
        Pi = law.pressure(R, R * s)
        dPi = np.diff(Pi)
        bad = np.nonzero(dPi < -1e-14 * np.maximum(1.0, np.abs(Pi[1:])))[0]
        violations.extend((float(s), float(R[i]), float(R[i + 1])) for i in bad)
        dpow = np.diff(R ** law.gamma)
        ok = dpow > 0
        if np.any(ok):
            d_max = min(d_max, float(np.min(dPi[ok] / dpow[ok])))
    return {"monotone": not violations, "violations": violations, "d_max": d_max}


def growth_constants(law, R, Z, which="pressure"):
    """Fitted c1, c2 with c1 (R^g + Z^b - 1) <= F <= c2 (R^g + Z^b + 1) on samples."""
    R, Z = np.asarray(R, float), np.asarray(Z, float)
    F = law.pressure(R, Z) if which == "pressure" else law.helmholtz(R, Z)
    Q = R ** law.gamma + Z ** law.beta
    c2 = float(np.max(F / (Q + 1)))
    # c1 (Q - 1) <= F: an upper limit on c1 where Q > 1, a lower limit where Q < 1
    above, below = Q > 1, Q < 1
    c1 = float(np.min(F[above] / (Q[above] - 1))) if np.any(above) else math.inf
    c1_floor = float(np.max(F[below] / (Q[below] - 1))) if np.any(below) else -math.inf
    return {"c1": c1, "c1_floor": c1_floor, "c2": c2,
            "lower_ok": bool(c1 > 0 and c1 >= c1_floor), "upper_ok": bool(np.isfinite(c2))}


def convexity_check(law, R, Z, tol=1e-10):
    """Sampled PSD test of the Hessian of H; returns the failing points."""
    R, Z = np.asarray(R, float), np.asarray(Z, float)
    fails = []
    for r, z in zip(R, Z):
        Hs = np.asarray(law.helmholtz_hessian(r, z), float)
        lam = np.linalg.eigvalsh(0.5 * (Hs + Hs.T))
        if lam[0] < -tol * max(1.0, abs(lam[-1])):
            fails.append((float(r), float(z), float(lam[0])))
    return {"convex": not fails, "failures": fails}


def dzP_check(law, R, Z):
    dz = np.asarray(law.dP_dZ(R, Z))
    return {"ok": bool(np.all(dz >= 0)), "min": float(dz.min())}


def drP_constant(law, R, Z):
    """Fitted c with c R^(gamma-1) <= dP/dR on the samples (positive R)."""
    R, Z = np.asarray(R, float), np.asarray(Z, float)
    m = R > 0
    return float(np.min(law.dP_dR(R[m], Z[m]) / R[m] ** (law.gamma - 1)))
