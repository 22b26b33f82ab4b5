"""Beltrami coefficient of the model map, piece by piece.

mu is returned in the z chart (the true dF/dzbar / dF/dz).  On a diamond
the natural quantity lives in the log chart around the center; the two
differ by the unimodular factor exp(2i*theta), see ``diamond_mu_log``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import model_map as mm
from .tiling import DIAMOND, DISK, HEAD, CORNER, OUTSIDE, STRIP, Tiling

# mask codes of a mu grid
CLASS_DISK, CLASS_DIAMOND, CLASS_LEG, CLASS_BEND, CLASS_SPECIAL = 0, 1, 2, 3, 4
CLASS_OUTSIDE, CLASS_EDGE = 5, 6
CLASS_NAMES = {CLASS_DISK: "disk", CLASS_DIAMOND: "diamond", CLASS_LEG: "strip-leg",
               CLASS_BEND: "bend", CLASS_SPECIAL: "special"}

DIAMOND_SUP = float(np.hypot(1 - np.pi / 2, 1) / np.hypot(1 + np.pi / 2, 1))


def diamond_mu_log(theta):
    """mu of F on a diamond in the log chart log(z - center); free of the diameter."""
    q, phi = mm._quadrant(np.mod(np.asarray(theta, float), 2 * np.pi))
    s, c = np.sin(phi), np.cos(phi)
    # divide the log-chart formula by d: (1 - xi'/d - i c) / (1 + xi'/d + i c)
    xr = (np.pi / 2) / (s + c) ** 2
    cr = (s - c) / (s + c)
    return (1 - xr - 1j * cr) / (1 + xr + 1j * cr)


def _mu_from_jacobian(ux, uy, vx, vy):
    gx, gy = ux + 1j * vx, uy + 1j * vy
    return (gx + 1j * gy) / (gx - 1j * gy)


def mu_field(tiling: Tiling, z, classified=None):
    """Vectorized mu (z chart).  nan outside the model."""
    z = np.asarray(z, complex)
    kind, index, piece, mirrored = classified if classified is not None else tiling.classify(z)
    w = np.where(mirrored, np.conj(z), z)
    mu = np.full(z.shape, np.nan + 0j)
    mu[kind == DISK] = 0
    m = kind == DIAMOND
    if np.any(m):
        rel = w[m] - tiling._centers[index[m] - 1]
        th = np.angle(rel)
        mu[m] = diamond_mu_log(th) * np.exp(2j * th)
    m = kind == STRIP
    if np.any(m):
        J = mm._piece_jacobian(tiling, index[m], piece[m], w[m])
        mu[m] = _mu_from_jacobian(*J)
    return np.where(mirrored, np.conj(mu), mu)


def _classes(tiling, kind, index, piece, w):
    cls = np.full(kind.shape, CLASS_OUTSIDE, np.uint8)
    cls[kind == DISK] = CLASS_DISK
    cls[kind == DIAMOND] = CLASS_DIAMOND
    st = kind == STRIP
    special = st & (index <= 3)
    cls[special] = CLASS_SPECIAL
    gen = st & ~special
    if np.any(gen):
        j = index[gen]
        br, tl = tiling.bend_corners(j)
        x, y = w.real[gen], w.imag[gen]
        bend = (x >= tl.real) & (x <= br.real) & (y >= br.imag) & (y <= tl.imag)
        cls[gen] = np.where(bend, CLASS_BEND, CLASS_LEG)
    return cls


def _near_piece_edge(tiling, z, key, eps):
    edge = np.zeros(z.shape, bool)
    for k in range(8):
        off = eps * np.exp(2j * np.pi * k / 8)
        k2, i2, p2, m2 = tiling.classify(z + off)
        edge |= (k2 != key[0]) | (i2 != key[1]) | (p2 != key[2]) | (m2 != key[3])
    return edge


@dataclass
class MuValue:
    value: complex
    on_boundary: bool


def mu_analytic(tiling: Tiling, z, edge_eps=1e-9):
    """mu at a single point; on a piece boundary the value from the side holding z is flagged."""
    arr = np.array([complex(z)])
    key = tiling.classify(arr)
    if key[0][0] == OUTSIDE:
        raise mm.OutsideModel(f"{z} lies beyond the truncation")
    mu = mu_field(tiling, arr, key)[0]
    edge = bool(_near_piece_edge(tiling, arr, key, edge_eps * max(1.0, abs(z)))[0])
    return MuValue(complex(mu), edge)


def symmetric_linspace(a, b, n):
    """linspace that is exactly mirror-symmetric when a == -b."""
    t = np.linspace(a, b, n)
    if a == -b:
        t = 0.5 * (t - t[::-1])
    return t


@dataclass
class ComplexGrid:
    window: tuple  # (xmin, xmax, ymin, ymax)
    resolution: tuple  # (nx, ny)
    samples: np.ndarray  # shape (ny, nx), row-major, row k at y = ymin + k*dy
    mask: np.ndarray = None

    def __post_init__(self):
        nx, ny = self.resolution
        if nx < 2 or ny < 2:
            raise ValueError("grid needs at least 2 samples per axis")
        self.samples = np.asarray(self.samples, complex).reshape(ny, nx)
        if self.mask is not None:
            self.mask = np.asarray(self.mask, np.uint8).reshape(ny, nx)

    def axes(self):
        x0, x1, y0, y1 = self.window
        nx, ny = self.resolution
        return np.linspace(x0, x1, nx), symmetric_linspace(y0, y1, ny)

    def points(self):
        xs, ys = self.axes()
        return xs[None, :] + 1j * ys[:, None]

    def save(self, path):
        nx, ny = self.resolution
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4d2q", *map(float, self.window), nx, ny))
            fh.write(np.ascontiguousarray(self.samples).astype("<c16").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            head = fh.read(48)
            *win, nx, ny = struct.unpack("<4d2q", head)
            data = np.frombuffer(fh.read(), "<c16")
        if data.size != nx * ny:
            raise ValueError(f"grid file holds {data.size} samples, header says {nx}x{ny}")
        return cls(tuple(win), (nx, ny), data.copy())


MAX_GRID_POINTS = 1 << 26


def mu_grid(tiling: Tiling, window, resolution, edge_eps=1e-9, chunk=1 << 16):
    """Sample mu on a window; samples within edge_eps of piece boundaries are masked (nan)."""
    if np.isscalar(resolution):
        resolution = (int(resolution), int(resolution))
    nx, ny = resolution
    if nx * ny > MAX_GRID_POINTS:
        raise ValueError(f"{nx}x{ny} grid exceeds the {MAX_GRID_POINTS} sample limit")
    grid = ComplexGrid(tuple(map(float, window)), (nx, ny), np.zeros((ny, nx), complex))
    pts = grid.points().ravel()
    mu = np.empty(pts.size, complex)
    mask = np.empty(pts.size, np.uint8)
    # fixed chunking keeps results independent of how the work is scheduled
    for s in range(0, pts.size, chunk):
        p = pts[s:s + chunk]
        key = tiling.classify(p)
        w = np.where(key[3], np.conj(p), p)
        mu[s:s + chunk] = mu_field(tiling, p, key)
        cls = _classes(tiling, key[0], key[1], key[2], w)
        edge = _near_piece_edge(tiling, p, key, edge_eps * np.maximum(1.0, np.abs(p)))
        cls[edge & (cls != CLASS_OUTSIDE)] = CLASS_EDGE
        mask[s:s + chunk] = cls
    mu[(mask == CLASS_EDGE) | (mask == CLASS_OUTSIDE)] = np.nan
    grid.samples = mu.reshape(ny, nx)
    grid.mask = mask.reshape(ny, nx)
    return grid


@dataclass
class DilatationStats:
    max_abs_mu: float
    per_class: dict
    K: float
    d_independence: dict = field(default_factory=dict)


def dilatation_stats(source, window=None, resolution=256, certify=True):
    """Per-class maxima of |mu| from a grid, or from a tiling sampled on a window."""
    if isinstance(source, Tiling):
        if window is None:
            window = (source.x_min + 0.5, 6.0, -8.0, 8.0)
        source = mu_grid(source, window, resolution)
    a = np.abs(source.samples)
    per = {}
    for code, name in CLASS_NAMES.items():
        sel = (source.mask == code) & np.isfinite(a)
        if np.any(sel):
            per[name] = float(a[sel].max())
    fin = a[np.isfinite(a)]
    if fin.size == 0:
        raise ValueError("no valid samples in the grid")
    mx = float(fin.max())
    stats = DilatationStats(mx, per, (1 + mx) / (1 - mx))
    if certify:
        stats.d_independence = diameter_independence()
    return stats


def diameter_independence(diams=(2, 8, 32, 128), n=4001):
    """Diamond-class max |mu| of single-diamond models, sampled at matching angles."""
    out = {}
    th = np.linspace(1e-9, 2 * np.pi - 1e-9, n)
    for d in diams:
        t = Tiling((d,))
        dm = t.diamonds[0]
        z = dm.center + 0.5 * (d / 2) / (np.abs(np.cos(th)) + np.abs(np.sin(th))) * np.exp(1j * th)
        out[d] = float(np.max(np.abs(mu_field(t, z))))
    return out


def finite_difference_mu(tiling: Tiling, z, step=1e-5):
    """Central-difference Wirtinger quotient of F (log-polar, so valid at any height).

    Uses d(log F): mu = (log F)_zbar / (log F)_z.  Error is O(step^2) with a
    constant set by the third derivatives of the chart (zero on affine pieces).
    """
    z = complex(z)
    pts = np.array([z + step, z - step, z + 1j * step, z - 1j * step, z])
    key = tiling.classify(pts)
    same = np.all([(k == k[-1]).all() for k in key])
    if not same:
        raise ValueError(f"finite-difference stencil at {z} with step {step} crosses a piece boundary")
    L, A, _ = mm.eval_logpolar(tiling, pts, key)
    # unwrap arguments relative to the center value
    A = A[-1] + mm._wrap(A - A[-1])
    lf = L + 1j * A
    fx = (lf[0] - lf[1]) / (2 * step)
    fy = (lf[2] - lf[3]) / (2 * step)
    return complex((fx + 1j * fy) / (fx - 1j * fy))
