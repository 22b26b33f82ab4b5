"""Hyperbolic density of the twice punctured plane C minus {0, 1} (curvature -1).

rho(z) = 1 / (Im tau * |lambda'(tau)|) for any tau with lambda(tau) = z,
lambda the modular function.  tau comes from complete elliptic integrals
via the AGM; the derivative either from the Legendre relation ("agm") or
from theta series after a Newton polish of tau ("qseries").  Points are
first moved by one of the six anharmonic isometries to where the AGM
branch choices are unambiguous.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

PUNCTURE_GUARD = 1e-12

# the six anharmonic maps: (T, |T'|)
_ANHARMONIC = (
    (lambda z: z, lambda z: np.ones_like(np.abs(z))),
    (lambda z: 1 - z, lambda z: np.ones_like(np.abs(z))),
    (lambda z: 1 / z, lambda z: 1 / np.abs(z) ** 2),
    (lambda z: 1 / (1 - z), lambda z: 1 / np.abs(1 - z) ** 2),
    (lambda z: z / (z - 1), lambda z: 1 / np.abs(z - 1) ** 2),
    (lambda z: (z - 1) / z, lambda z: 1 / np.abs(z) ** 2),
)


def agm(a, b, iters=60):
    """Complex arithmetic-geometric mean with the 'right' root choice."""
    a = np.asarray(a, complex)
    b = np.asarray(b, complex)
    for _ in range(iters):
        an = 0.5 * (a + b)
        bn = np.sqrt(a * b)
        flip = np.abs(an - bn) > np.abs(an + bn)
        bn = np.where(flip, -bn, bn)
        done = np.all(np.abs(an - bn) <= 1e-16 * np.abs(an))
        a, b = an, bn
        if done:
            break
    return 0.5 * (a + b)


def _ellip_K(m):
    """K and K' for parameter m = k^2 (principal branches)."""
    k = np.sqrt(np.asarray(m, complex))
    kp = np.sqrt(1 - np.asarray(m, complex))
    return np.pi / (2 * agm(1, kp)), np.pi / (2 * agm(1, k))


def theta_functions(q, terms=40):
    """theta2, theta3, theta4 at nome q (|q| < 1)."""
    q = np.asarray(q, complex)
    n = np.arange(1, terms + 1)[:, None]
    qn2 = q[None, ...] ** (n * n)
    t3 = 1 + 2 * qn2.sum(0)
    t4 = 1 + 2 * (((-1.0) ** n) * qn2).sum(0)
    m = np.arange(0, terms)[:, None]
    # theta2 = 2 q^(1/4) sum q^(m(m+1))
    t2 = 2 * (q ** 0.25) * (q[None, ...] ** (m * (m + 1))).sum(0)
    return t2, t3, t4


def modular_lambda(tau):
    tau = np.asarray(tau, complex)
    q = np.exp(1j * np.pi * tau)
    t2, t3, t4 = theta_functions(q)
    # q^(1/4) must be exp(i pi tau / 4), not the principal fourth root of q
    t2 = t2 / (q ** 0.25) * np.exp(0.25j * np.pi * tau)
    return (t2 / t3) ** 4


def modular_lambda_prime(tau):
    tau = np.asarray(tau, complex)
    q = np.exp(1j * np.pi * tau)
    _, _, t4 = theta_functions(q)
    return 1j * np.pi * modular_lambda(tau) * t4 ** 4


def _tau_of(z):
    K, Kp = _ellip_K(z)
    return 1j * Kp / K, K, Kp


def _reduce(z):
    """Pick the anharmonic image with the largest Im tau that round-trips through lambda."""
    best_t = np.full(z.shape, -np.inf)
    best = np.zeros(z.shape, int)
    for idx, (T, _) in enumerate(_ANHARMONIC):
        with np.errstate(divide="ignore", invalid="ignore"):
            w = T(z)
            tau, _, _ = _tau_of(w)
            ok = np.isfinite(tau) & (tau.imag > 0.3)
            ok &= np.abs(modular_lambda(np.where(ok, tau, 1j)) - w) <= 1e-9 * np.maximum(1, np.abs(w))
        better = ok & (tau.imag > best_t)
        best = np.where(better, idx, best)
        best_t = np.where(better, tau.imag, best_t)
    if np.any(~np.isfinite(best_t)):
        raise ArithmeticError("no anharmonic image with a valid modular preimage")
    return best


@dataclass
class HypDensityEval:
    point: complex
    density: float
    method: str


def density_X(z, method="agm"):
    """Hyperbolic density of C minus {0,1} at z (curvature -1)."""
    z = np.asarray(z, complex)
    if np.any(np.minimum(np.abs(z), np.abs(z - 1)) < PUNCTURE_GUARD):
        raise ValueError("point too close to a puncture")
    if not np.all(np.isfinite(z)):
        raise ValueError("point must be finite")
    flat = z.ravel()
    which = _reduce(flat)
    out = np.empty(flat.shape)
    for idx, (T, dT) in enumerate(_ANHARMONIC):
        sel = which == idx
        if not np.any(sel):
            continue
        w = T(flat[sel])
        scale = dT(flat[sel])
        if method == "agm":
            K, Kp = _ellip_K(w)
            rho = np.pi / (4 * np.abs(w) * np.abs(1 - w) * np.real(Kp * np.conj(K)))
        elif method == "asymptotic":
            # cusp form: lambda ~ 16 q near tau = i infinity; only good when w is small
            rho = 1 / (np.abs(w) * (np.log(16) - np.log(np.abs(w))))
        elif method == "qseries":
            tau, _, _ = _tau_of(w)
            for _ in range(3):  # polish tau against the theta-series lambda
                tau = tau - (modular_lambda(tau) - w) / modular_lambda_prime(tau)
            rho = 1 / (tau.imag * np.abs(modular_lambda_prime(tau)))
        else:
            raise ValueError(f"unknown method {method!r}")
        out[sel] = rho * scale
    out = out.reshape(z.shape)
    return float(out) if out.ndim == 0 else out


def density_eval(z, method="agm"):
    return HypDensityEval(complex(z), float(density_X(z, method)), method)


def pullback_density(T, dT, z, method="agm"):
    """rho(T z) |T'(z)|, equal to rho(z) whenever T is an isometry."""
    return float(density_X(T(z), method) * abs(dT(z)))


# ------------------------------------------------------------------ length
class QuadratureError(RuntimeError):
    pass


_GL = {n: np.polynomial.legendre.leggauss(n) for n in (8,)}


def hyp_length(curve, rtol=1e-6, max_level=14, method="agm"):
    """Hyperbolic length of a polyline by composite Gauss-Legendre with halving."""
    pts = np.asarray(curve, complex)
    if len(pts) < 2:
        return 0.0
    if np.any(np.abs(np.diff(pts)) == 0):
        raise ValueError("consecutive curve points must be distinct")
    x, w = _GL[8]
    a, b = pts[:-1], pts[1:]
    prev = None
    for level in range(max_level):
        m = 2 ** level
        t0 = np.arange(m) / m
        nodes = (t0[:, None] + (x[None, :] + 1) / (2 * m)).ravel()
        wts = np.tile(w / (2 * m), m)
        z = a[:, None] + nodes[None, :] * (b - a)[:, None]
        val = float((density_X(z, method) * wts[None, :]).sum(1).dot(np.abs(b - a)))
        if prev is not None and abs(val - prev) <= rtol * abs(val):
            return val
        prev = val
    raise QuadratureError(f"no convergence: last estimates {prev}")


# ------------------------------------------------------------- contraction
@dataclass
class BranchedMap:
    """Holomorphic map with derivative and a seed for the first inverse branch."""
    f: object
    df: object
    seed: object


def square_double():
    return BranchedMap(lambda z: z * z, lambda z: 2 * z, lambda w: np.sqrt(w))


class ContinuationError(RuntimeError):
    def __init__(self, msg, prefix):
        super().__init__(msg)
        self.prefix = prefix


def pullback(fmap: BranchedMap, curve, max_halvings=20, tol=1e-13):
    """Continue an inverse branch along a sampled curve by Newton steps."""
    curve = np.asarray(curve, complex)
    out = [complex(fmap.seed(curve[0]))]
    z = out[0]
    for k in range(1, len(curve)):
        w0, w1 = curve[k - 1], curve[k]
        frac, step = 0.0, 1.0
        halvings = 0
        while frac < 1.0:
            tgt = w0 + min(frac + step, 1.0) * (w1 - w0)
            zz = z
            for _ in range(30):
                dz = (fmap.f(zz) - tgt) / fmap.df(zz)
                zz = zz - dz
                if abs(dz) < tol * max(1, abs(zz)):
                    break
            # accept only small moves, which keeps the branch
            if abs(fmap.f(zz) - tgt) < 1e-10 * max(1, abs(tgt)) and abs(zz - z) < 0.25 * max(abs(z), 1e-3):
                z = zz
                frac = min(frac + step, 1.0)
                step = min(1.0 - frac, 2 * step) or step
            else:
                step /= 2
                halvings += 1
                if halvings > max_halvings:
                    raise ContinuationError(f"branch continuation failed at curve sample {k}", np.array(out))
        out.append(z)
    return np.array(out)


def euclidean_diameter(pts):
    pts = np.asarray(pts, complex)
    if len(pts) < 3:
        return float(np.ptp(np.abs(pts[:, None] - pts[None, :]))) if len(pts) > 1 else 0.0
    xy = np.stack([pts.real, pts.imag], -1)
    try:
        hull = xy[ConvexHull(xy).vertices]
    except Exception:  # collinear samples
        hull = xy
    d = np.hypot(hull[:, None, 0] - hull[None, :, 0], hull[:, None, 1] - hull[None, :, 1])
    return float(d.max())


@dataclass
class ContractionWitness:
    n: int
    curve: np.ndarray
    diameter: float
    hyp_length: float
    base_length: float


def contraction_witness(fmap: BranchedMap, L=4.0, n=1, samples=400, check=True):
    """Pull [-L, -1] back n times along the seeded branch chain."""
    base = np.linspace(-L, -1, samples) + 0j
    curve = base
    for _ in range(n):
        curve = pullback(fmap, curve)
    l0 = hyp_length(base)
    ln = hyp_length(curve) if n else l0
    if check and ln > l0 * (1 + 1e-5):
        raise AssertionError(f"pullback lengthened the curve: {ln} > {l0}")
    return ContractionWitness(n, curve, euclidean_diameter(curve), ln, l0)


def first_small_pullback(fmap: BranchedMap, L=4.0, nmax=12):
    for n in range(nmax + 1):
        w = contraction_witness(fmap, L, n)
        if w.diameter < 1:
            return n, w
    return None, None
