"""Decomposition of the plane into the unit disk, diamonds and half-strips.

Diamonds are squares turned by 45 degrees whose horizontal diagonals sit
on the negative real axis, touching at vertices.  Everything else in the
closed upper half-plane is cut into half-strips that start on a "bottom"
(a quarter of the unit circle or a side of a diamond) and run off to
+infinity between two "rails".  The lower half-plane is the mirror image.

Generic strips (index >= 4) have width one and are covered by two affine
pieces split along the diagonal of their bend square.  The three strips
next to the disk are irregular and carry a head piece: a transfinite
(Coons) patch for the two arc bottoms and an affine corner triangle for
strip 3.

Strip geometry is closed form in the strip index, so huge diameters
never allocate per-strip arrays.
"""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

# tile kinds
DISK, DIAMOND, STRIP, OUTSIDE = 0, 1, 2, 3
KIND_NAMES = {DISK: "disk", DIAMOND: "diamond", STRIP: "strip", OUTSIDE: "outside"}
# strip pieces
HEAD, CORNER, VLEG, HLEG = 0, 1, 2, 3
PIECE_NAMES = {HEAD: "head", CORNER: "corner", VLEG: "vertical-leg", HLEG: "horizontal-leg"}

# Rails next to the disk.  r_1 leaves i vertically and turns right at
# height 2; r_2 leaves -1 at 112.5 degrees (splitting the 45 degree gap
# between the circle and the first diamond) and turns vertical after a
# short stub.  Generic rails r_j climb to height j + 2.
STUB_LENGTH = 0.5
STUB_ANGLE = 5 * np.pi / 8
STUB_DIR = complex(np.cos(STUB_ANGLE), np.sin(STUB_ANGLE))
STUB_END = -1.0 + STUB_LENGTH * STUB_DIR
RAIL1_TOP = 2.0
RAIL2_TOP = 4.0
HEAD_CUT = {1: 1.0, 2: 0.8}


class TilingError(ValueError):
    pass


class OutsideModel(ValueError):
    """Raised for points beyond the last rail of a truncated model."""


@dataclass(frozen=True)
class Diamond:
    index: int
    diameter: int
    right: float
    center: float

    @property
    def left(self):
        return self.right - self.diameter

    @property
    def top(self):
        return complex(self.center, self.diameter / 2)

    def contains(self, z):
        z = np.asarray(z)
        # distances to the nearer vertex stay exact when the center is not representable
        return np.minimum(self.right - z.real, z.real - self.left) > np.abs(z.imag)


@dataclass(frozen=True)
class Bottom:
    index: int
    right: complex
    left: complex
    host: str  # "arc" or "diamond n, up" / "diamond n, down"

    @property
    def is_arc(self):
        return self.host == "arc"

    def point(self, u):
        """Point of the bottom with chart abscissa u in [-1, 1] (+1 = right corner)."""
        u = np.asarray(u, float)
        if self.is_arc:
            th0, th1 = np.angle(self.right), np.angle(self.left)
            return np.exp(1j * (th0 + (th1 - th0) * (1 - u) / 2))
        return self.left + (self.right - self.left) * (u + 1) / 2


@dataclass(frozen=True)
class Rail:
    """Polyline from a bottom corner to +infinity, parametrized by arclength."""
    index: int
    vertices: tuple  # finite corners; the last edge continues rightwards forever

    def _cum(self):
        v = np.array(self.vertices, complex)
        return v, np.r_[0.0, np.cumsum(np.abs(np.diff(v)))]

    @property
    def corner_arclengths(self):
        return self._cum()[1]

    def point(self, s):
        v, cum = self._cum()
        shape = np.shape(s)
        s = np.atleast_1d(np.asarray(s, float))
        k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(v) - 1)
        out = v[k] + 0j
        last = k == len(v) - 1
        inner = ~last
        if np.any(inner):
            kk = k[inner]
            seg = v[kk + 1] - v[kk]
            out[inner] = v[kk] + (s[inner] - cum[kk]) * seg / np.abs(seg)
        out[last] = v[-1] + (s[last] - cum[-1])
        return out.reshape(shape)

    def tangent(self, s):
        v, cum = self._cum()
        shape = np.shape(s)
        s = np.atleast_1d(np.asarray(s, float))
        k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(v) - 1)
        out = np.ones(np.shape(s), complex)
        inner = k < len(v) - 1
        if np.any(inner):
            kk = k[inner]
            seg = v[kk + 1] - v[kk]
            out[inner] = seg / np.abs(seg)
        return out.reshape(shape)


@dataclass
class Piece:
    name: str
    kind: str  # "affine" | "coons"
    outline: list  # polygon (z side) for plotting / json; infinite pieces are clipped
    matrix: tuple = None  # affine: (u, v) = M @ (x, y) + c, stored as (M, c)


@dataclass
class Strip:
    index: int
    parity: int
    bottom: Bottom
    inner: Rail
    outer: Rail
    pieces: list = field(default_factory=list)


class CoonsHead:
    """Transfinite patch between a curved bottom, two rails and a straight cut.

    (a, t) in the unit square goes to z; a=0 is the outer rail, a=1 the
    inner rail, t=0 the bottom and t=1 the cut at rail arclength ``cut``.
    In the strip chart a is u = 2a - 1 and t is v / cut.
    """

    def __init__(self, bottom, dbottom, outer, inner, cut):
        self.bottom, self.dbottom = bottom, dbottom
        self.outer, self.inner, self.cut = outer, inner, cut
        self.c00, self.c10 = bottom(0.0), bottom(1.0)
        self.c01 = complex(outer.point(np.array(cut)))
        self.c11 = complex(inner.point(np.array(cut)))
        a, t = np.meshgrid(np.linspace(0, 1, 129), np.linspace(0, 1, 129), indexing="ij")
        self._grid = np.stack([a.ravel(), t.ravel()], -1)
        p = self.forward(a.ravel(), t.ravel())
        self._tree = cKDTree(np.stack([p.real, p.imag], -1))

    def forward(self, a, t):
        a, t = np.asarray(a, float), np.asarray(t, float)
        top = self.c01 + (self.c11 - self.c01) * a
        L, R = self.outer.point(t * self.cut), self.inner.point(t * self.cut)
        corr = ((1 - a) * (1 - t) * self.c00 + a * (1 - t) * self.c10
                + (1 - a) * t * self.c01 + a * t * self.c11)
        return (1 - t) * self.bottom(a) + t * top + (1 - a) * L + a * R - corr

    def derivatives(self, a, t):
        a, t = np.asarray(a, float), np.asarray(t, float)
        top = self.c01 + (self.c11 - self.c01) * a
        L, R = self.outer.point(t * self.cut), self.inner.point(t * self.cut)
        dL = self.outer.tangent(t * self.cut) * self.cut
        dR = self.inner.tangent(t * self.cut) * self.cut
        pa = ((1 - t) * self.dbottom(a) + t * (self.c11 - self.c01) - L + R
              - (-(1 - t) * self.c00 + (1 - t) * self.c10 - t * self.c01 + t * self.c11))
        pt = (-self.bottom(a) + top + (1 - a) * dL + a * dR
              - (-(1 - a) * self.c00 - a * self.c10 + (1 - a) * self.c01 + a * self.c11))
        return pa, pt

    def inverse(self, z, tol=1e-15, maxiter=60):
        z = np.asarray(z, complex)
        flat = z.ravel()
        _, idx = self._tree.query(np.stack([flat.real, flat.imag], -1))
        a, t = self._grid[idx, 0].copy(), self._grid[idx, 1].copy()
        for _ in range(maxiter):
            r = flat - self.forward(a, t)
            pa, pt = self.derivatives(a, t)
            det = pa.real * pt.imag - pa.imag * pt.real
            da = (r.real * pt.imag - r.imag * pt.real) / det
            dt = (pa.real * r.imag - pa.imag * r.real) / det
            a, t = a + da, t + dt
            if np.max(np.abs(da) + np.abs(dt), initial=0.0) < tol:
                break
        return a.reshape(z.shape), t.reshape(z.shape)

    def jacobian(self, a, t):
        """Real Jacobian of the chart z -> (u, v) at patch parameters (a, t)."""
        pa, pt = self.derivatives(a, t)
        det = pa.real * pt.imag - pa.imag * pt.real
        # inverse of [[pa.re, pt.re], [pa.im, pt.im]] scaled by diag(2, cut)
        j00 = 2 * pt.imag / det
        j01 = -2 * pt.real / det
        j10 = -self.cut * pa.imag / det
        j11 = self.cut * pa.real / det
        return j00, j01, j10, j11


def _arc_bottom(k):
    # strip 1: a=1 at z=1, a=0 at z=i; strip 2: a=1 at i, a=0 at -1
    return (lambda a: np.exp(0.5j * np.pi * (k - np.asarray(a, float))),
            lambda a: -0.5j * np.pi * np.exp(0.5j * np.pi * (k - np.asarray(a, float))))


class Tiling:
    """Immutable decomposition for a finite even diameter sequence."""

    def __init__(self, diameters):
        diameters = tuple(diameters)
        if len(diameters) == 0:
            raise TilingError("diameter sequence is empty")
        for n, d in enumerate(diameters, start=1):
            if int(d) != d or d < 2 or int(d) % 2:
                raise TilingError(f"diameter at index {n} is {d!r}; expected an even integer >= 2")
        self.diameters = tuple(int(d) for d in diameters)
        rights, v = [], -1
        for d in self.diameters:
            rights.append(v)
            v -= d
        self._rights_int = rights
        self.last_vertex = v
        self.diamonds = [Diamond(n + 1, d, float(r), float(r) - d / 2)
                         for n, (d, r) in enumerate(zip(self.diameters, rights))]
        self.n_strips = 2 + sum(self.diameters)
        self._neg_rights = np.array([-float(r) for r in rights])
        self._d = np.array(self.diameters, float)
        self._centers = np.array([dm.center for dm in self.diamonds])
        self._lefts = np.array([float(r - d) for d, r in zip(self.diameters, rights)])
        self._rails = {}
        self._build_special()

    # ------------------------------------------------------------------ rails
    @property
    def x_min(self):
        return float(1 - self.n_strips)

    @property
    def y_max(self):
        return float(self.rail_top(self.n_strips))

    def vertices(self):
        return [float(r) for r in self._rights_int] + [float(self.last_vertex)]

    def zigzag_height(self, x):
        """Height of the diamonds' upper boundary at abscissa x <= -1."""
        x = np.asarray(x, float)
        n = np.clip(np.searchsorted(self._neg_rights, -x, side="right") - 1, 0, len(self._d) - 1)
        return np.maximum(np.minimum(-self._neg_rights[n] - x, x - self._lefts[n]), 0.0)

    def base_height(self, j):
        j = np.asarray(j)
        return np.where(j <= 2, 0.0, self.zigzag_height(1.0 - j))

    @staticmethod
    def rail_top(j):
        j = np.asarray(j, float)
        return np.where(j == 0, 0.0, np.where(j == 1, RAIL1_TOP, np.where(j == 2, RAIL2_TOP, j + 2)))

    @staticmethod
    def rail_x(j):
        j = np.asarray(j, float)
        return np.where(j == 1, 0.0, np.where(j == 2, STUB_END.real, 1 - j))

    def rail_vertical_offset(self, j):
        """L_j with arclength s = y + L_j along the vertical part of rail j."""
        j = np.asarray(j)
        return np.where(j == 1, -1.0, np.where(j == 2, STUB_LENGTH - STUB_END.imag, -self.base_height(j)))

    def rail_horizontal_offset(self, j):
        """K_j with arclength s = x + K_j along the horizontal part of rail j."""
        j = np.asarray(j)
        k2 = STUB_LENGTH + RAIL2_TOP - STUB_END.imag - STUB_END.real
        return np.where(j == 0, -1.0, np.where(j == 1, RAIL1_TOP - 1.0, np.where(
            j == 2, k2, 2.0 * j + 1 - self.base_height(j))))

    def rail(self, j):
        if not 0 <= j <= self.n_strips:
            raise IndexError(f"rail index {j} out of range 0..{self.n_strips}")
        if j in self._rails:
            return self._rails[j]
        if j == 0:
            r = Rail(0, (1 + 0j,))
        elif j == 1:
            r = Rail(1, (1j, RAIL1_TOP * 1j))
        elif j == 2:
            r = Rail(2, (-1 + 0j, STUB_END, complex(STUB_END.real, RAIL2_TOP)))
        else:
            x, h = 1.0 - j, float(self.base_height(j))
            r = Rail(j, (complex(x, h), complex(x, float(self.rail_top(j)))))
        if j <= 3:
            self._rails[j] = r
        return r

    def bottom(self, j):
        if not 1 <= j <= self.n_strips:
            raise IndexError(f"strip index {j} out of range 1..{self.n_strips}")
        if j == 1:
            return Bottom(1, 1 + 0j, 1j, "arc")
        if j == 2:
            return Bottom(2, 1j, -1 + 0j, "arc")
        xr, xl = 2.0 - j, 1.0 - j
        n = int(np.clip(np.searchsorted(self._neg_rights, -xl, side="right") - 1, 0, len(self._d) - 1))
        hr, hl = float(self.zigzag_height(xr)), float(self.zigzag_height(xl))
        side = "up" if hl > hr else "down"
        return Bottom(j, complex(xr, hr), complex(xl, hl), f"diamond {n + 1}, {side}")

    # ---------------------------------------------------------- special heads
    def _build_special(self):
        r0, r1, r2, r3 = (self.rail(k) for k in range(4))
        b1, db1 = _arc_bottom(1)
        b2, db2 = _arc_bottom(2)
        self.heads = {1: CoonsHead(b1, db1, r1, r0, HEAD_CUT[1]),
                      2: CoonsHead(b2, db2, r2, r1, HEAD_CUT[2])}
        # strip 3 corner triangle: z = -1, stub end, -2+i  <->  w = 1, 1 + i*stub, -1
        zc = np.array([-1 + 0j, STUB_END, -2 + 1j])
        wc = np.array([1 + 0j, 1 + STUB_LENGTH * 1j, -1 + 0j])
        A = np.array([[zc[1].real - zc[0].real, zc[1].imag - zc[0].imag],
                      [zc[2].real - zc[0].real, zc[2].imag - zc[0].imag]])
        B = np.array([[wc[1].real - wc[0].real, wc[1].imag - wc[0].imag],
                      [wc[2].real - wc[0].real, wc[2].imag - wc[0].imag]])
        M = np.linalg.solve(A, B).T  # (u, v) - w0 = M @ ((x, y) - z0)
        self.corner_affine = (M, zc[0], wc[0])

    # ------------------------------------------------------- affine pieces
    def vleg_coeffs(self, j):
        """(x_out, width, L_out, L_in) of the vertical leg of strip j >= 2."""
        j = np.asarray(j)
        xo, xi = self.rail_x(j), self.rail_x(j - 1)
        return xo, xi - xo, self.rail_vertical_offset(j), self.rail_vertical_offset(j - 1)

    def hleg_coeffs(self, j):
        """(y_in, width, K_in, K_out) of the horizontal leg of strip j >= 1."""
        j = np.asarray(j)
        yi, yo = self.rail_top(j - 1), self.rail_top(j)
        return yi, yo - yi, self.rail_horizontal_offset(j - 1), self.rail_horizontal_offset(j)

    def bend_corners(self, j):
        """Inner corner BR and outer corner TL of the bend of strip j >= 2."""
        j = np.asarray(j)
        br = self.rail_x(j - 1) + 1j * self.rail_top(j - 1)
        tl = self.rail_x(j) + 1j * self.rail_top(j)
        return br, tl

    # ------------------------------------------------------------ location
    def classify(self, z):
        """Vectorized tile lookup.

        Returns (kind, index, piece, mirrored) arrays.  Lower half-plane
        points are reflected first; index is the diamond number or the
        strip number.
        """
        z = np.asarray(z, complex)
        mirrored = z.imag < 0
        w = np.where(mirrored, np.conj(z), z)
        x, y = w.real, w.imag
        kind = np.full(z.shape, STRIP, np.int8)
        index = np.zeros(z.shape, np.int64)
        piece = np.full(z.shape, -1, np.int8)

        disk = np.abs(w) < 1
        kind[disk] = DISK

        n = np.clip(np.searchsorted(self._neg_rights, -x, side="right") - 1, 0, len(self._d) - 1)
        in_dia = (~disk) & (x < -1) & (np.minimum(-self._neg_rights[n] - x, x - self._lefts[n]) > y)
        kind[in_dia] = DIAMOND
        index[in_dia] = n[in_dia] + 1

        st = ~(disk | in_dia)
        in1 = st & (x > 0) & (y < RAIL1_TOP)
        rel = w + 1
        right_of_stub = STUB_DIR.real * rel.imag - STUB_DIR.imag * rel.real < 0
        in2 = st & ~in1 & (y < RAIL2_TOP) & (
            ((y >= STUB_END.imag) & (x > STUB_END.real)) | ((y < STUB_END.imag) & right_of_stub))
        rest = st & ~(in1 | in2)
        with np.errstate(invalid="ignore"):
            jr = np.maximum(3.0, np.maximum(np.floor(1 - x) + 1, np.floor(y - 2) + 1))
        out = rest & ~(jr <= self.n_strips)
        kind[out] = OUTSIDE
        gen = rest & ~out
        index[in1], index[in2] = 1, 2
        index[gen] = jr[gen].astype(np.int64)
        strip = in1 | in2 | gen

        j = index
        # strip 1
        m = in1
        piece[m] = np.where(x[m] + y[m] < 1 + HEAD_CUT[1], HEAD, HLEG)
        # strips >= 2: bend diagonal
        m = strip & (j >= 2)
        if np.any(m):
            br, tl = self.bend_corners(j[m])
            d = tl - br
            rz = w[m] - br
            cross = d.real * rz.imag - d.imag * rz.real
            piece[m] = np.where(cross <= 0, HLEG, VLEG)
        # strip 2 head below the cut
        m = in2 & (piece == VLEG)
        if np.any(m):
            xo, wd, lo, li = self.vleg_coeffs(2)
            v = y[m] + lo + (li - lo) * (x[m] - xo) / wd
            piece[m] = np.where(v < HEAD_CUT[2], HEAD, VLEG)
        # strip 3 corner triangle below the line from -2+i to the stub end
        m = strip & (j == 3)
        if np.any(m):
            e = -2 + 1j
            d = STUB_END - e
            rz = w[m] - e
            below = d.real * rz.imag - d.imag * rz.real < 0
            piece[m] = np.where(below, CORNER, piece[m])
        return kind, index, piece, mirrored

    def locate(self, z, eps=1e-9):
        """TileRef for a single point; boundary points list all incident tiles."""
        z = complex(z)
        if not np.isfinite(z):
            raise ValueError("locate expects a finite point")
        kind, index, piece, mir = (a.item() for a in self.classify(np.array([z])))
        ring = z + eps * max(1.0, abs(z)) * np.exp(2j * np.pi * np.arange(16) / 16)
        rk, ri, _, rm = self.classify(ring)
        keys = {(int(k), int(i), bool(m)) for k, i, m in zip(rk, ri, rm)}
        keys = {(k, i if k in (DIAMOND, STRIP) else 0, m if k == STRIP else False) for k, i, m in keys}
        here = (kind, index if kind in (DIAMOND, STRIP) else 0, bool(mir) if kind == STRIP else False)
        if len(keys) > 1 or here not in keys:
            tiles = sorted(keys | {here})
            return TileRef("boundary", None, None, bool(mir),
                           tuple(TileRef(KIND_NAMES[k], i if k in (DIAMOND, STRIP) else None,
                                         None, m) for k, i, m in tiles))
        return TileRef(KIND_NAMES[kind], index if kind in (DIAMOND, STRIP) else None,
                       PIECE_NAMES.get(piece) if kind == STRIP else None, bool(mir))

    # ------------------------------------------------------------ geometry
    def tile_geometry(self, j):
        if not 1 <= j <= self.n_strips:
            raise IndexError(f"strip index {j} out of range 1..{self.n_strips}")
        strip = Strip(j, 1 if j % 2 else -1, self.bottom(j), self.rail(j - 1), self.rail(j))
        far = 8.0
        if j in (1, 2):
            head = self.heads[j]
            a = np.linspace(0, 1, 33)
            outline = np.r_[head.forward(a[::-1], 0 * a), head.forward(0 * a, a),
                            head.forward(a, 0 * a + 1), head.forward(0 * a + 1, a[::-1])]
            strip.pieces.append(Piece("head", "coons", list(outline)))
        if j == 3:
            M, z0, w0 = self.corner_affine
            strip.pieces.append(Piece("corner", "affine", [-1 + 0j, STUB_END, -2 + 1j], (M, z0, w0)))
        yi, wd, ki, ko = (float(c) for c in self.hleg_coeffs(j))
        if j >= 2:
            xo, wv, lo, li = (float(c) for c in self.vleg_coeffs(j))
            br, tl = (complex(c) for c in self.bend_corners(j))
            lower = strip.bottom.left if j >= 3 else complex(xo, HEAD_CUT[2] - lo)
            Mv = np.array([[2 / wv, 0.0], [(li - lo) / wv, 1.0]])
            strip.pieces.append(Piece("vertical-leg", "affine",
                                      [lower, complex(xo, tl.imag), br, complex(br.real, lower.imag)],
                                      (Mv, complex(xo, 0), complex(-1, lo))))
            x_start = br.real
        else:
            x_start = 0.0
        Mh = np.array([[0.0, -2 / wd], [1.0, (ko - ki) / wd]])
        strip.pieces.append(Piece("horizontal-leg", "affine",
                                  [complex(x_start, yi), complex(x_start + far, yi),
                                   complex(x_start + far, yi + wd), complex(x_start, yi + wd)],
                                  (Mh, complex(0, yi), complex(1, ki))))
        return strip

    def to_json(self):
        def c(z):
            return [float(np.real(z)), float(np.imag(z))]

        rails = []
        for j in range(0, min(self.n_strips, 4096) + 1):
            r = self.rail(j)
            rails.append({"index": j, "vertices": [c(p) for p in r.vertices], "then": "+x"})
        bottoms = []
        for j in range(1, min(self.n_strips, 4096) + 1):
            b = self.bottom(j)
            bottoms.append({"index": j, "right": c(b.right), "left": c(b.left), "host": b.host})
        doc = {
            "diameters": list(self.diameters),
            "diamonds": [{"index": d.index, "diameter": d.diameter, "right": d.right,
                          "left": float(d.left), "center": d.center, "top": c(d.top)}
                         for d in self.diamonds],
            "vertices": self.vertices(),
            "strip_count": self.n_strips,
            "bottoms": bottoms,
            "rails": rails,
            "truncation": {"x_min": self.x_min, "y_max": self.y_max},
        }
        return json.dumps(doc, indent=1)


@dataclass(frozen=True)
class TileRef:
    variant: str  # disk | diamond | strip | outside | boundary
    index: int | None
    piece: str | None
    mirrored: bool
    incident: tuple = ()

    def __str__(self):
        if self.variant == "boundary":
            return "Boundary(" + ", ".join(str(t) for t in self.incident) + ")"
        tag = "~" if self.mirrored else ""
        if self.variant == "strip":
            return f"{tag}Strip({self.index}, {self.piece})"
        if self.variant == "diamond":
            return f"{tag}Diamond({self.index})"
        return tag + self.variant.capitalize()


def build_tiling(diameters):
    return Tiling(diameters)


def locate(tiling, z):
    return tiling.locate(z)


def tile_geometry(tiling, j):
    return tiling.tile_geometry(j)
