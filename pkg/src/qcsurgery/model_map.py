"""The quasiregular model map F on a tiling.

F is the square map on the unit disk, a radial power on every diamond
(degree d about the center, boundary wrapped proportionally onto the
circle), and sigma(w) = exp(i*pi*(1 - w)/2) (or its negative) composed
with the strip chart on each half-strip.  Values are carried as
(log-modulus, argument) pairs because |F| grows like exp(pi*v/2) along
the strips.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tiling import (CORNER, DIAMOND, DISK, HEAD, HLEG, OUTSIDE, STRIP, STUB_LENGTH,
                     VLEG, OutsideModel, Tiling)

OVERFLOW_LOG = 700.0


@dataclass
class LogPolarValue:
    log_modulus: object
    argument: object

    def to_complex(self, limit=OVERFLOW_LOG):
        lm = np.asarray(self.log_modulus, float)
        if np.any(lm >= limit):
            raise OverflowError(f"log-modulus {np.max(lm):.4g} exceeds {limit}; keep the log-polar form")
        out = np.exp(lm + 1j * np.asarray(self.argument, float))
        return complex(out) if out.ndim == 0 else out

    def __iter__(self):
        yield self.log_modulus
        yield self.argument


def _quadrant(theta):
    """Split theta in [0, 2pi] into quadrant number and offset phi in [0, pi/2]."""
    q = np.clip(np.floor(theta / (np.pi / 2)), 0, 3)
    return q, theta - q * np.pi / 2


def boundary_angle(tiling, n, theta):
    """(R, xi) for diamond n: boundary radius seen from the center and the boundary angle map."""
    d = tiling.diameters[n - 1]
    theta = np.mod(np.asarray(theta, float), 2 * np.pi)
    q, phi = _quadrant(theta)
    s, c = np.sin(phi), np.cos(phi)
    R = (d / 2) / (s + c)
    xi = (np.pi / 2) * d * (q + s / (s + c))
    return R, xi


def boundary_angle_full(tiling, n, theta):
    """Like boundary_angle but with the full-turn endpoint: theta=2pi gives xi = 2*pi*d."""
    d = tiling.diameters[n - 1]
    theta = np.asarray(theta, float)
    q, phi = _quadrant(theta)
    s, c = np.sin(phi), np.cos(phi)
    return (d / 2) / (s + c), (np.pi / 2) * d * (q + s / (s + c))


def boundary_angle_derivatives(tiling, n, theta):
    """(R'/R, xi') at theta; one-sided from the right at the corners."""
    d = tiling.diameters[n - 1]
    q, phi = _quadrant(np.mod(np.asarray(theta, float), 2 * np.pi))
    s, c = np.sin(phi), np.cos(phi)
    return (s - c) / (s + c), (np.pi / 2) * d / (s + c) ** 2


# ---------------------------------------------------------------- charts
def _piece_coords(tiling, index, piece, w):
    """Strip chart (u, v) for upper-half points w with known strip and piece."""
    u = np.full(w.shape, np.nan)
    v = np.full(w.shape, np.nan)
    x, y = w.real, w.imag
    m = piece == HLEG
    if np.any(m):
        yi, wd, ki, ko = tiling.hleg_coeffs(index[m])
        t = (y[m] - yi) / wd
        u[m] = 1 - 2 * t
        v[m] = x[m] + ki + (ko - ki) * t
    m = piece == VLEG
    if np.any(m):
        xo, wd, lo, li = tiling.vleg_coeffs(index[m])
        t = (x[m] - xo) / wd
        u[m] = -1 + 2 * t
        v[m] = y[m] + lo + (li - lo) * t
    m = piece == CORNER
    if np.any(m):
        M, z0, w0 = tiling.corner_affine
        dx, dy = x[m] - z0.real, y[m] - z0.imag
        u[m] = w0.real + M[0, 0] * dx + M[0, 1] * dy
        v[m] = w0.imag + M[1, 0] * dx + M[1, 1] * dy
    for j in (1, 2):
        m = (piece == HEAD) & (index == j)
        if np.any(m):
            head = tiling.heads[j]
            a, t = head.inverse(w[m])
            u[m] = 2 * a - 1
            v[m] = head.cut * t
    return u, v


def _piece_jacobian(tiling, index, piece, w):
    """Real Jacobian entries (ux, uy, vx, vy) of the strip chart."""
    shape = w.shape
    J = [np.full(shape, np.nan) for _ in range(4)]
    m = piece == HLEG
    if np.any(m):
        _, wd, ki, ko = tiling.hleg_coeffs(index[m])
        J[0][m], J[1][m], J[2][m], J[3][m] = 0.0, -2 / wd, 1.0, (ko - ki) / wd
    m = piece == VLEG
    if np.any(m):
        _, wd, lo, li = tiling.vleg_coeffs(index[m])
        J[0][m], J[1][m], J[2][m], J[3][m] = 2 / wd, 0.0, (li - lo) / wd, 1.0
    m = piece == CORNER
    if np.any(m):
        M = tiling.corner_affine[0]
        J[0][m], J[1][m], J[2][m], J[3][m] = M[0, 0], M[0, 1], M[1, 0], M[1, 1]
    for j in (1, 2):
        m = (piece == HEAD) & (index == j)
        if np.any(m):
            head = tiling.heads[j]
            a, t = head.inverse(w[m])
            J[0][m], J[1][m], J[2][m], J[3][m] = head.jacobian(a, t)
    return J


def strip_chart(tiling: Tiling, j, z):
    """Chart of strip j onto the half-strip {-1 < Re < 1, Im > 0}.

    Lower half-plane points use the mirrored strip and come back conjugated.
    """
    z = np.asarray(z, complex)
    kind, index, piece, mirrored = tiling.classify(z)
    w = np.where(mirrored, np.conj(z), z)
    ok = (kind == STRIP) & (index == j)
    if not np.all(ok):
        # closed strip: accept boundary points by nudging into the strip
        bad = np.flatnonzero(~ok.ravel())
        for b in bad:
            zb = w.ravel()[b]
            found = False
            for r in (1e-12, 1e-10, 1e-8):
                ring = zb + r * max(1.0, abs(zb)) * np.exp(2j * np.pi * np.arange(8) / 8)
                k2, i2, p2, _ = tiling.classify(ring)
                hit = np.flatnonzero((k2 == STRIP) & (i2 == j))
                if hit.size:
                    piece.ravel()[b] = p2[hit[0]]
                    index.ravel()[b] = j
                    found = True
                    break
            if not found:
                raise ValueError(f"point {zb} is not in strip {j}")
    u, v = _piece_coords(tiling, index, piece, w)
    out = u + 1j * v
    out = np.where(mirrored, np.conj(out), out)
    return complex(out) if out.ndim == 0 else out


def chart_inverse(tiling: Tiling, j, s):
    """Inverse strip chart: point of the half-strip S -> point of strip j (upper copy)."""
    s = np.asarray(s, complex)
    u, v = s.real, s.imag
    z = np.full(s.shape, np.nan + 0j)
    # decide piece on the S side
    if j >= 2:
        br, tl = tiling.bend_corners(j)
        vbr = float(tiling.rail_vertical_offset(j - 1) + br.imag)
        vtl = float(tiling.rail_vertical_offset(j) + tl.imag)
        # diagonal in S from (1, vbr) to (-1, vtl); horizontal part lies above it
        above = (v - vbr) * 2 - (vtl - vbr) * (1 - u) >= 0
    else:
        above = np.ones(s.shape, bool)
    head = np.zeros(s.shape, bool)
    corner = np.zeros(s.shape, bool)
    if j in (1, 2):
        head = v < tiling.heads[j].cut
        above = above & ~head
    if j == 3:
        corner = v < STUB_LENGTH * (u + 1) / 2  # line through -1 and 1 + i*stub in S
        above = above & ~corner
    vert = ~(above | head | corner)
    if np.any(above):
        yi, wd, ki, ko = (float(c) for c in tiling.hleg_coeffs(j))
        t = (1 - u[above]) / 2
        y = yi + wd * t
        x = v[above] - ki - (ko - ki) * t
        z[above] = x + 1j * y
    if np.any(vert):
        xo, wd, lo, li = (float(c) for c in tiling.vleg_coeffs(j))
        t = (u[vert] + 1) / 2
        x = xo + wd * t
        y = v[vert] - lo - (li - lo) * t
        z[vert] = x + 1j * y
    if np.any(head):
        h = tiling.heads[j]
        z[head] = h.forward((u[head] + 1) / 2, v[head] / h.cut)
    if np.any(corner):
        M, z0, w0 = tiling.corner_affine
        Mi = np.linalg.inv(M)
        du, dv = u[corner] - w0.real, v[corner] - w0.imag
        z[corner] = (z0.real + Mi[0, 0] * du + Mi[0, 1] * dv) + 1j * (z0.imag + Mi[1, 0] * du + Mi[1, 1] * dv)
    return complex(z) if z.ndim == 0 else z


# -------------------------------------------------------------- evaluation
def eval_logpolar(tiling: Tiling, z, classified=None):
    """Vectorized F in log-polar form.  Outside points give nan."""
    z = np.asarray(z, complex)
    kind, index, piece, mirrored = classified if classified is not None else tiling.classify(z)
    w = np.where(mirrored, np.conj(z), z)
    L = np.full(z.shape, np.nan)
    A = np.full(z.shape, np.nan)

    m = kind == DISK
    if np.any(m):
        with np.errstate(divide="ignore"):
            L[m] = 2 * np.log(np.abs(w[m]))
        A[m] = 2 * np.angle(w[m])

    m = kind == DIAMOND
    if np.any(m):
        n = index[m] - 1
        d = tiling._d[n]
        rel = w[m] - tiling._centers[n]
        r = np.abs(rel)
        q, phi = _quadrant(np.angle(rel))
        s, c = np.sin(phi), np.cos(phi)
        with np.errstate(divide="ignore"):
            L[m] = d * (np.log(r) - np.log((d / 2) / (s + c)))
        A[m] = (np.pi / 2) * d * (q + s / (s + c))

    m = kind == STRIP
    if np.any(m):
        u, v = _piece_coords(tiling, index[m], piece[m], w[m])
        L[m] = np.pi * v / 2
        A[m] = np.pi * (1 - u) / 2 + np.pi * (index[m] % 2 == 0)

    A = np.where(mirrored, -A, A)
    return L, A, kind


def eval_F(tiling: Tiling, z, outside="raise"):
    """F(z) as a LogPolarValue (scalar or array fields)."""
    arr = np.asarray(z, complex)
    if not np.all(np.isfinite(arr)):
        raise ValueError("eval_F expects finite points")
    L, A, kind = eval_logpolar(tiling, arr)
    if outside == "raise" and np.any(kind == OUTSIDE):
        bad = arr[kind == OUTSIDE].ravel()[0]
        raise OutsideModel(f"{bad} lies beyond the last rail (x < {tiling.x_min} or y > {tiling.y_max}); "
                           "the model is truncated there")
    if arr.ndim == 0:
        return LogPolarValue(float(L), float(A))
    return LogPolarValue(L, A)


def F_complex(tiling, z, outside="nan"):
    """Complex values of F, with inf where the log-modulus overflows."""
    L, A, _ = eval_logpolar(tiling, np.asarray(z, complex))
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.where(L > OVERFLOW_LOG, np.inf, np.exp(np.minimum(L, OVERFLOW_LOG)) * np.exp(1j * A))
    return out


# ---------------------------------------------------------- critical points
@dataclass
class CriticalPoint:
    point: float
    degree: int
    image: complex


@dataclass
class CriticalPointList:
    centers: list
    vertices: list


def critical_points(tiling: Tiling, verify=False):
    centers = [CriticalPoint(dm.center, dm.diameter, 0j) for dm in tiling.diamonds]
    verts = [CriticalPoint(v, 2, 1 + 0j) for v in tiling.vertices()]
    out = CriticalPointList(centers, verts)
    if verify:
        for cp in centers:
            assert winding_degree(tiling, circle(cp.point, 1e-3), target=0) == cp.degree
        for cp in verts:
            if cp.point >= tiling.x_min + 1e-3:
                assert winding_degree(tiling, circle(cp.point, 1e-3), target=1) == 2
    return out


# ---------------------------------------------------------------- winding
class WindingError(RuntimeError):
    pass


def circle(center, radius, n=4096):
    return center + radius * np.exp(2j * np.pi * np.arange(n) / n)


def winding_degree(tiling: Tiling, curve, target=0.0, max_step=np.pi / 3):
    """Number of turns of F - target along a closed sampled curve."""
    curve = np.asarray(curve, complex)
    L, A, kind = eval_logpolar(tiling, curve)
    if np.any(kind == OUTSIDE):
        raise OutsideModel("curve leaves the model")
    if target == 0:
        if np.any(np.isneginf(L)):
            raise WindingError("curve passes through a zero of F")
        ang = A
    else:
        big = L > 40
        val = np.exp(np.where(big, 0.0, L) + 1j * A) - target
        ang = np.where(big, A, np.angle(val))
        if np.any(~big & (np.abs(val) < 1e-14)):
            raise WindingError("curve passes through a target preimage")
    steps = np.diff(np.r_[ang, ang[0]])
    steps = (steps + np.pi) % (2 * np.pi) - np.pi
    if np.max(np.abs(steps)) > max_step:
        raise WindingError(f"argument jumps by {np.max(np.abs(steps)):.3f} rad between samples; refine the curve")
    total = steps.sum() / (2 * np.pi)
    k = int(round(total))
    if abs(total - k) > 1e-6:
        raise WindingError(f"non-integral winding {total}")
    return k


# --------------------------------------------------------------- continuity
def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def logpolar_gap(L1, A1, L2, A2):
    return np.hypot(L1 - L2, _wrap(A1 - A2))


def _boundary_samples(tiling: Tiling, n, rng):
    """Points on internal boundaries with unit normals, per boundary family."""
    fam = {}
    k = max(n // 6, 1)
    th = rng.uniform(0.02, np.pi - 0.02, k)
    th = th * rng.choice([-1, 1], k)
    p = np.exp(1j * th)
    fam["disk/strip"] = (p, p)
    # diamond sides
    nd = rng.integers(0, len(tiling.diamonds), k)
    d = tiling._d[nd]
    c = tiling._centers[nd]
    side = rng.integers(0, 4, k)
    t = rng.uniform(0.02, 0.98, k)
    corners = np.stack([c + d / 2, c + 1j * d / 2, c - d / 2, c - 1j * d / 2, c + d / 2], -1)
    a0 = corners[np.arange(k), side]
    a1 = corners[np.arange(k), side + 1]
    p = a0 + t * (a1 - a0)
    nrm = -1j * (a1 - a0) / np.abs(a1 - a0)
    keep = np.abs(p.real - np.round(p.real)) > 1e-6  # stay off rail feet
    fam["diamond/strip"] = (p[keep], nrm[keep])
    # rails (vertical and horizontal parts, stub)
    M = tiling.n_strips
    j = rng.integers(1, min(M, 400), k, endpoint=True) if M > 1 else np.ones(k, int)
    pts, nrms = [], []
    for jj in j:
        rail = tiling.rail(int(jj))
        s_corner = rail.corner_arclengths
        s = rng.uniform(0.01, s_corner[-1] + 5.0)
        if np.min(np.abs(s - s_corner)) < 1e-3:
            s += 2e-3
        pt = complex(rail.point(np.array(s)))
        if pt.real < tiling.x_min + 1e-3 or pt.imag > tiling.y_max - 1e-3:
            continue
        pts.append(pt)
        nrms.append(complex(1j * rail.tangent(np.array(s))))
    pts, nrms = np.array(pts, complex), np.array(nrms, complex)
    flip = rng.random(len(pts)) < 0.5
    fam["strip/strip"] = (np.where(flip, np.conj(pts), pts), np.where(flip, np.conj(nrms), nrms))
    # real axis right of 1
    x = 1 + rng.exponential(5.0, k)
    x = x[x < 1e3]
    fam["real axis"] = (x + 0j, np.ones_like(x) * 1j)
    # internal piece cuts: bend diagonals, head cuts, corner line
    pts, nrms = [], []
    for jj in rng.integers(2, min(M, 200) + 1, k) if M >= 2 else []:
        br, tl = (complex(q) for q in tiling.bend_corners(int(jj)))
        t0 = rng.uniform(0.05, 0.95)
        pts.append(br + t0 * (tl - br))
        nrms.append(1j * (tl - br) / abs(tl - br))
    for jj in (1, 2):
        h = tiling.heads[jj]
        a = rng.uniform(0.05, 0.95, max(k // 8, 1))
        z0 = h.forward(a, np.ones_like(a))
        pa, _ = h.derivatives(a, np.ones_like(a))
        pts.extend(z0)
        nrms.extend(1j * pa / np.abs(pa))
    e, b = -2 + 1j, complex(tiling.rail(2).vertices[1])
    for t0 in rng.uniform(0.05, 0.95, max(k // 8, 1)):
        pts.append(e + t0 * (b - e))
        nrms.append(1j * (b - e) / abs(b - e))
    fam["piece cuts"] = (np.array(pts), np.array(nrms))
    return fam


def continuity_check(tiling: Tiling, samples=10_000, delta=1e-7, seed=0, detail=False):
    """Largest log-polar jump of F across internal boundaries at offset delta."""
    rng = np.random.default_rng(seed)
    fam = _boundary_samples(tiling, samples, rng)
    worst, per = 0.0, {}
    for name, (p, nrm) in fam.items():
        if len(p) == 0:
            continue
        zp, zm = p + delta * nrm, p - delta * nrm
        L1, A1, k1 = eval_logpolar(tiling, zp)
        L2, A2, k2 = eval_logpolar(tiling, zm)
        ok = (k1 != OUTSIDE) & (k2 != OUTSIDE)
        gap = logpolar_gap(L1[ok], A1[ok], L2[ok], A2[ok])
        per[name] = float(np.max(gap, initial=0.0))
        worst = max(worst, per[name])
    return (worst, per) if detail else worst


# ------------------------------------------------------------------ bound
BOUND_SLOPE = float(np.sqrt(5.0))
BOUND_OFFSET = 1.0


def bound_on_disk(tiling: Tiling, r):
    """Explicit bound B(r) for |F| on the closed disk of radius r.

    On the generic horizontal legs the chart height is at most x + 2y,
    whose maximum over the disk is sqrt(5) r; vertical legs give at most
    y, and the three special strips stay below sqrt(5) r + 1.
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    return float(np.exp(np.pi * (BOUND_SLOPE * r + BOUND_OFFSET) / 2))


def log_bound_on_disk(r):
    return np.pi * (BOUND_SLOPE * r + BOUND_OFFSET) / 2
