"""Property suite for the model map: continuity, symmetry, degrees, preimage of the disk, growth, dilatation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dilatation as dl
from . import model_map as mm
from .tiling import OUTSIDE, Tiling


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    bound: float
    detail: str = ""

    def line(self):
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name:<38} {self.value:<14.6g} bound {self.bound:<10.6g} {self.detail}"


def check_continuity(t, samples=10_000, seed=0, tol=1e-5):
    gap = mm.continuity_check(t, samples=samples, seed=seed)
    return CheckResult(f"continuity ({samples} straddle pairs)", gap <= tol, gap, tol)


def check_symmetry(t, samples=20_000, seed=1):
    rng = np.random.default_rng(seed)
    z = rng.uniform(t.x_min + 0.5, 8, samples) + 1j * rng.uniform(-t.y_max + 1, t.y_max - 1, samples)
    z = z[t.classify(z)[0] != OUTSIDE]
    L1, A1, _ = mm.eval_logpolar(t, z)
    L2, A2, _ = mm.eval_logpolar(t, np.conj(z))
    ok = np.isfinite(L1)
    bad = np.count_nonzero((L1[ok] != L2[ok]) | (mm._wrap(A1[ok] + A2[ok]) != 0))
    return CheckResult("symmetry F(conj z) = conj F(z)", bad == 0, float(bad), 0.0,
                       f"{ok.sum()} samples, mismatches counted exactly")


def check_windings(t):
    out = []
    for dm in t.diamonds:
        # boundary of the diamond, slightly outside so F stays off the unit circle's preimage
        th = np.linspace(0, 2 * np.pi, 8192, endpoint=False)
        r = (dm.diameter / 2) / (np.abs(np.cos(th)) + np.abs(np.sin(th)))
        curve = dm.center + r * (1 - 1e-9) * np.exp(1j * th)
        deg = mm.winding_degree(t, curve)
        out.append(CheckResult(f"winding dP_{dm.index} = {dm.diameter}", deg == dm.diameter, deg, dm.diameter))
    return out


def _extended(t):
    """The tiling with one more diamond, so the last vertex is interior to the model."""
    return Tiling(t.diameters + (2,))


def check_local_degrees(t, radius=1e-3):
    out = []
    ext = _extended(t)
    for k, v in enumerate([dm.right for dm in t.diamonds] + [float(t.last_vertex)], start=1):
        use = ext if k > len(t.diamonds) else t
        fv = complex(mm.F_complex(use, v))
        deg = mm.winding_degree(use, mm.circle(v, radius, 8192), fv)
        out.append(CheckResult(f"local degree at vertex {v:g}", deg == 2, deg, 2,
                               "one extra diamond appended" if use is ext else ""))
    for dm in t.diamonds:
        deg = mm.winding_degree(t, mm.circle(dm.center, radius, 8192), 0.0)
        out.append(CheckResult(f"local degree at center {dm.center:g}", deg == dm.diameter, deg, dm.diameter))
    return out


def in_preimage_of_disk(t, z):
    """Geometric membership in the unit disk or a diamond (open sets)."""
    z = np.asarray(z, complex)
    m = np.abs(z) < 1
    for dm in t.diamonds:
        m |= dm.contains(z)
    return m


def check_membership(t, samples=100_000, seed=2, guard=1e-9):
    rng = np.random.default_rng(seed)
    z = rng.uniform(t.x_min + 0.5, 6, samples) + 1j * rng.uniform(-8, 8, samples)
    geo = in_preimage_of_disk(t, z)
    L, _, kind = mm.eval_logpolar(t, z)
    dyn = L < 0
    # ignore samples within guard of a boundary, where both tests are ill-posed
    near = np.abs(L) < guard
    bad = np.count_nonzero((geo != dyn) & ~near & (kind != OUTSIDE))
    return CheckResult(f"F^-1(D) membership ({samples} samples)", bad == 0, float(bad), 0.0)


def check_growth(t, radii=(2, 10, 50), samples=20_000, seed=3):
    rng = np.random.default_rng(seed)
    out = []
    for r in radii:
        rad = r * np.sqrt(rng.uniform(0, 1, samples))
        z = rad * np.exp(2j * np.pi * rng.uniform(0, 1, samples))
        z = np.concatenate([z, mm.circle(0, r, 4096)])
        kind = t.classify(z)[0]
        L, _, _ = mm.eval_logpolar(t, z[kind != OUTSIDE])
        top = float(np.nanmax(L))
        lb = mm.log_bound_on_disk(r)
        cover = float(np.mean(kind != OUTSIDE))
        out.append(CheckResult(f"log sup|F| on |z|<={r} vs log B", top <= lb, top, lb,
                               f"{cover:.0%} of samples inside the model"))
    return out


def check_dilatation(t, window=None, resolution=512, bound=0.75):
    window = window or (t.x_min + 0.5, 6.0, -8.0, 8.0)
    st = dl.dilatation_stats(t, window, resolution, certify=True)
    res = [CheckResult("sampled max |mu|", st.max_abs_mu <= bound, st.max_abs_mu, bound, f"K = {st.K:.4f}")]
    dmax = st.per_class.get("diamond", np.nan)
    res.append(CheckResult("diamond-class max |mu| (sampled)", dmax <= dl.DIAMOND_SUP + 1e-12, dmax,
                           dl.DIAMOND_SUP))
    vals = list(st.d_independence.values())
    spread = max(vals) - min(vals)
    res.append(CheckResult("diamond max across d in {2,8,32,128}", spread <= 1e-9, spread, 1e-9,
                           f"value {vals[0]:.6f}"))
    res.append(CheckResult("diamond max vs closed form", abs(vals[0] - dl.DIAMOND_SUP) <= 1e-4,
                           abs(vals[0] - dl.DIAMOND_SUP), 1e-4))
    return res


def property_suite(t: Tiling, samples=10_000, membership=100_000, dilatation=True):
    res = [check_continuity(t, samples), check_symmetry(t)]
    res += check_windings(t)
    res += check_local_degrees(t)
    res.append(check_membership(t, membership))
    res += check_growth(t)
    if dilatation:
        res += check_dilatation(t)
    return res
