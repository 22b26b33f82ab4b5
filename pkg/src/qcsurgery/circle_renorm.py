"""Boundary renormalization: conjugating an expanding circle map to z^2.

The conjugacy h is computed from binary itineraries.  Its extension H to
the disk is built on the upper half-disk U: the boundary map (h on the
arc, a piecewise-linear map on [-1, 1]) is moved to the unit circle by
a Riemann map of U, then to the real line by a Cayley transform, where
the Beurling-Ahlfors formula extends it.  The lower half is the mirror
image.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

TWO_PI = 2 * np.pi


@dataclass
class CircleMapModel:
    """Degree-2 circle map given by its lift on angles (fixing 0)."""
    lift: object
    name: str = "circle map"

    def __post_init__(self):
        th = np.linspace(0, TWO_PI, 4097)
        v = self.lift(th)
        if abs(self.lift(np.array(0.0))) > 1e-12:
            raise ValueError("the lift must fix 0")
        if abs(v[-1] - v[0] - 2 * TWO_PI) > 1e-9:
            raise ValueError("lift does not have degree 2")
        dv = np.diff(v) / np.diff(th)
        if dv.min() <= 1:
            raise ValueError(f"map is not expanding (min derivative {dv.min():.4f})")
        self.expansion = float(dv.min())
        eps = 1e-6
        self.multiplier = float((self.lift(np.array(eps)) - self.lift(np.array(-eps))) / (2 * eps))
        # the other preimage of the fixed point splits the circle into the two branches
        self.cut = brentq(lambda t: float(self.lift(np.array(t))) - TWO_PI, 0.0, TWO_PI, xtol=1e-15)

    def __call__(self, theta):
        return np.mod(self.lift(np.asarray(theta, float)), TWO_PI)

    def on_circle(self, z):
        z = np.asarray(z, complex)
        return np.exp(1j * self(np.angle(z)))


def squaring_model():
    return CircleMapModel(lambda t: 2 * t, "squaring")


def perturbed_model(eps=0.2):
    """theta -> 2 theta + eps sin theta, the boundary map of z^2 exp(eps (z - 1/z) / 2)."""
    return CircleMapModel(lambda t: 2 * t + eps * np.sin(t), f"2t + {eps} sin t")


def perturbed_exterior(eps=0.2):
    def G(z):
        z = np.asarray(z, complex)
        return z * z * np.exp(0.5 * eps * (z - 1 / z))
    return G


@dataclass
class ConjugacyTable:
    theta: np.ndarray
    h: np.ndarray
    depth: int
    residual: float
    quasisymmetry: float
    continuity: dict
    ambiguous: int

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "h"])
            for a, b in zip(self.theta, self.h):
                w.writerow([repr(float(a)), repr(float(b))])


def _conj_eval(model, theta, depth):
    """h(theta) from the first ``depth`` itinerary bits plus the scaled remainder."""
    x = np.mod(np.asarray(theta, float), TWO_PI)
    acc = np.zeros_like(x)
    w = np.pi
    amb = np.zeros(x.shape, bool)
    for _ in range(depth):
        amb |= np.abs(x - model.cut) < 1e-12
        bit = x >= model.cut
        acc += w * bit
        w /= 2
        x = model(x)
    # after depth steps one unit of angle counts 2^-depth
    return acc + x * 2.0 ** (-depth), amb


def quasisymmetry_constant(theta, h, max_shift=64):
    """Largest ratio of h-lengths of adjacent equal arcs, over shifts up to max_shift samples."""
    n = len(theta)
    hu = np.unwrap(h)
    ext = np.r_[hu, hu + TWO_PI, hu + 2 * TWO_PI]
    M = 1.0
    max_shift = min(max_shift, n // 4)
    base = np.arange(n) + n
    for k in (2 ** np.arange(int(np.log2(max_shift)) + 1)):
        right = ext[base + k] - ext[base]
        left = ext[base] - ext[base - k]
        r = np.maximum(right / left, left / right)
        M = max(M, float(r.max()))
    return M


def circle_conjugacy(model: CircleMapModel, depth=24, samples=4096):
    if depth < 20:
        raise ValueError("depth must be at least 20")
    theta = TWO_PI * np.arange(samples) / samples
    h, amb = _conj_eval(model, theta, depth)
    hg, amb2 = _conj_eval(model, model(theta), depth)
    res = np.abs(np.angle(np.exp(1j * (hg - 2 * h))))
    hu = np.unwrap(h)
    cont = {}
    for k in (k for k in (1, 4, 16, 64) if k < samples):
        cont[float(TWO_PI * k / samples)] = float(np.max(np.abs(np.roll(hu, -k)[:-k] - hu[:-k])))
    return ConjugacyTable(theta, h, depth, float(res.max()),
                          quasisymmetry_constant(theta, h), cont, int(amb.sum() + amb2.sum()))


def conjugacy_function(model: CircleMapModel, depth=24):
    """Callable h on angles, values in [0, 2 pi)."""
    def h(theta):
        return _conj_eval(model, theta, depth)[0]
    return h


# ----------------------------------------------------------- real segment
def real_axis_grid(lam, kmax=60):
    """Odd piecewise-linear map of [-1, 1] sending 1 - lam^-k to 1 - 2^-k."""
    if lam <= 1:
        raise ValueError("lambda must exceed 1")
    # past this k, 1 - lam^-k rounds to 1 and the grid stops being injective
    kmax = min(kmax, int(52 / np.log2(lam)))
    ks = np.arange(kmax + 1)
    xk = 1 - lam ** (-ks.astype(float))
    yk = 1 - 2.0 ** (-ks)

    def h(x):
        x = np.asarray(x, float)
        a = np.abs(x)
        k = np.zeros(a.shape, int)
        inner = a < 1
        with np.errstate(divide="ignore"):
            k[inner] = np.floor(-np.log1p(-a[inner]) / np.log(lam)).astype(int)
        k = np.clip(k, 0, kmax - 1)
        # guard against rounding in the logarithm
        k = np.where(a < xk[k], k - 1, k)
        k = np.where((k + 1 <= kmax) & (a >= xk[np.minimum(k + 1, kmax)]) & (k + 1 < kmax), k + 1, k)
        k = np.clip(k, 0, kmax - 1)
        y = yk[k] + (yk[k + 1] - yk[k]) * (a - xk[k]) / (xk[k + 1] - xk[k])
        y = np.where(a >= 1, 1.0, y)
        out = np.sign(x) * y
        return float(out) if out.ndim == 0 else out

    h.grid = (xk, yk)
    return h


# ------------------------------------------------------ half-disk charts
def halfdisk_map(z):
    """Riemann map of the upper half-disk onto the disk fixing -1, 1 and sending 0 to -i."""
    z = np.asarray(z, complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        m = (1 + z) / (1 - z)
        m2 = m * m
        out = (m2 - 1j) / (m2 + 1j)
    out = np.where(z == 1, 1 + 0j, out)
    return complex(out) if out.ndim == 0 else out


def halfdisk_inverse(w):
    w = np.asarray(w, complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = 1j * (1 + w) / (1 - w)
        # fold rounding noise (and the sign of zero) into the closed upper half-plane
        s = s.real + 1j * np.abs(s.imag)
        m = np.sqrt(s)  # principal root: m in the first quadrant
        out = (m - 1) / (m + 1)
    out = np.where(w == 1, 1 + 0j, out)
    return complex(out) if out.ndim == 0 else out


def cayley(w):
    """Disk -> upper half-plane, 1 -> infinity, -1 -> 0."""
    w = np.asarray(w, complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        return 1j * (1 + w) / (1 - w)


def cayley_inverse(s):
    s = np.asarray(s, complex)
    return (s - 1j) / (s + 1j)


# ---------------------------------------------------------------- extension
_GL_X, _GL_W = np.polynomial.legendre.leggauss(48)
_GL_T = 0.5 * (_GL_X + 1)
_GL_W = 0.5 * _GL_W


class HalfDiskExtension:
    """Quasiconformal extension H of a boundary map of the upper half-disk."""

    def __init__(self, h_arc, h_seg):
        self.h_arc, self.h_seg = h_arc, h_seg
        self._check_monotone()

    def _check_monotone(self):
        t = np.linspace(0, np.pi, 2001)
        a = self.h_arc(t)
        x = np.linspace(-1, 1, 2001)
        s = self.h_seg(x)
        if np.any(np.diff(a) <= 0) or np.any(np.diff(s) <= 0):
            raise ValueError("boundary map is not monotone")
        if abs(self.h_arc(np.array(0.0))) > 1e-12 or abs(self.h_arc(np.array(np.pi)) - np.pi) > 1e-9:
            raise ValueError("arc map must fix the endpoints 1 and -1")

    def boundary(self, z):
        """Boundary map on dU: arc points by angle, real points by the segment map."""
        z = np.asarray(z, complex)
        out = np.where(np.abs(z.imag) < 1e-15, self.h_seg(np.clip(z.real, -1, 1)) + 0j,
                       np.exp(1j * self.h_arc(np.clip(np.angle(z), 0, np.pi))))
        return out

    def line_map(self, t):
        """Boundary map transported to the real line (fixes infinity)."""
        t = np.asarray(t, float)
        w = cayley_inverse(t + 0j)
        z = halfdisk_inverse(w)
        # snap to the exact boundary pieces
        on_seg = np.abs(z.imag) < 1e-12 * np.maximum(1, np.abs(z))
        z = np.where(on_seg, z.real + 0j, z / np.abs(z))
        return cayley(halfdisk_map(self.boundary(z))).real

    def _ba(self, s):
        """Beurling-Ahlfors extension in the upper half-plane."""
        x, y = s.real[..., None], s.imag[..., None]
        fp = self.line_map(x + _GL_T * y)
        fm = self.line_map(x - _GL_T * y)
        a = (fp * _GL_W).sum(-1)
        b = (fm * _GL_W).sum(-1)
        return 0.5 * (a + b) + 1j * (a - b)

    def __call__(self, z):
        z = np.asarray(z, complex)
        flat = z.ravel()
        lower = flat.imag < 0
        u = np.where(lower, np.conj(flat), flat)
        out = np.empty(u.shape, complex)
        bd = (np.abs(u.imag) == 0) | (np.abs(u) >= 1)
        ub = u[bd]
        big = np.abs(ub) > 1
        ub[big] = ub[big] / np.abs(ub[big])
        out[bd] = self.boundary(ub)
        inn = ~bd
        if np.any(inn):
            s = cayley(halfdisk_map(u[inn]))
            out[inn] = halfdisk_inverse(cayley_inverse(self._ba(s)))
        out = np.where(lower, np.conj(out), out).reshape(z.shape)
        return complex(out) if out.ndim == 0 else out

    def _ba_parts(self, s):
        x, y = s.real, s.imag
        fp = self.line_map(x[..., None] + _GL_T * y[..., None])
        fm = self.line_map(x[..., None] - _GL_T * y[..., None])
        a = (fp * _GL_W).sum(-1)
        b = (fm * _GL_W).sum(-1)
        f0, f1, f2 = self.line_map(x), self.line_map(x + y), self.line_map(x - y)
        # a is the mean of f over [x, x+y], b over [x-y, x]
        ax, ay = (f1 - f0) / y, (f1 - a) / y
        bx, by = (f0 - f2) / y, (f2 - b) / y
        val = 0.5 * (a + b) + 1j * (a - b)
        return val, (0.5 * (ax + bx), 0.5 * (ay + by), ax - bx, ay - by)

    def _ba_inverse(self, target, maxiter=80, tol=1e-14):
        s = target.copy()
        act = np.arange(s.size)
        for _ in range(maxiter):
            if act.size == 0:
                break
            val, (ux, uy, vx, vy) = self._ba_parts(s[act])
            r = target[act] - val
            det = ux * vy - uy * vx
            d = ((r.real * vy - r.imag * uy) + 1j * (ux * r.imag - vx * r.real)) / det
            new = s[act] + d
            # stay in the upper half-plane
            while np.any(new.imag <= 0):
                bad = new.imag <= 0
                d[bad] /= 2
                new = s[act] + d
            s[act] = new
            scale = np.maximum(1.0, np.abs(new))
            act = act[np.abs(d) > tol * scale]
        return s

    def inverse(self, w):
        """H^-1: exact on the boundary pieces, Newton on the half-plane extension inside."""
        w = np.asarray(w, complex)
        flat = w.ravel()
        lower = flat.imag < 0
        t = np.where(lower, np.conj(flat), flat)
        z = np.empty(t.shape, complex)
        real = t.imag == 0
        if np.any(real):
            z[real] = _invert_monotone(self.h_seg, t[real].real)
        circ = ~real & (np.abs(t) >= 1)
        if np.any(circ):
            z[circ] = np.exp(1j * _invert_monotone(self.h_arc, np.angle(t[circ]), 0.0, np.pi))
        inn = ~(real | circ)
        if np.any(inn):
            s = self._ba_inverse(cayley(halfdisk_map(t[inn])))
            z[inn] = halfdisk_inverse(cayley_inverse(s))
        z = np.where(lower, np.conj(z), z).reshape(w.shape)
        return complex(z) if z.ndim == 0 else z


def _invert_monotone(f, y, a=-1.0, b=1.0):
    y = np.atleast_1d(y)
    lo = np.full(y.shape, a)
    hi = np.full(y.shape, b)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        up = f(mid) < y
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    return 0.5 * (lo + hi)


def extend_H(h_arc, h_seg):
    """H on the disk from the arc map (angles in [0, pi]) and the segment map on [-1, 1]."""
    return HalfDiskExtension(h_arc, h_seg)


def identity_arc(t):
    return np.asarray(t, float)


def identity_segment(x):
    return np.asarray(x, float)


def assemble_Ghat(G, H, z):
    """G outside the unit disk, H^-1(H(z)^2) inside."""
    z = np.asarray(z, complex)
    out = np.empty(z.shape, complex)
    outside = np.abs(z) >= 1
    if np.any(outside):
        out[outside] = G(z[outside])
    inside = ~outside
    if np.any(inside):
        w = H(z[inside])
        out[inside] = H.inverse(w * w)
    return complex(out) if out.ndim == 0 else out


def arc_from_model(model: CircleMapModel, depth=24):
    """Conjugacy restricted to the upper arc (angles in [0, pi])."""
    def h(t):
        v, _ = _conj_eval(model, np.asarray(t, float), depth)
        t = np.asarray(t, float)
        return np.where(t >= np.pi, np.pi, v)
    return h
