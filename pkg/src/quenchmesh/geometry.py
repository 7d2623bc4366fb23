"""2D domains: outer boundary plus holes, with distance/curvature/normal queries.

A domain is an outer closed curve (counterclockwise) and a list of hole
curves (clockwise).  Curves come in three flavors: polygon loops, circles,
and polar-parametric curves r(theta) given by a trigonometric coefficient
list.  Polygons and circles use exact formulas; polar curves are handled
through dense arc-length sampling, so their queries are accurate to
O(h_bnd^2) in the sample spacing.

Curvature sign convention: kappa > 0 where the boundary bulges away from
the interior (convex bulge of the domain).  A circular hole of radius R
seen from the domain therefore has kappa = -1/R.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

# Spatial tolerance for on-boundary classification.
BND_EPS = 1e-12

# Cap on representatives returned for a degenerate (whole-arc) equidistant
# query, e.g. the center of a disk.
DEGENERATE_CLUSTER_CAP = 8


@dataclass
class BoundaryPoint:
    """A foot of an inward normal on the boundary."""

    location: np.ndarray
    arc_length: float
    curvature: float
    inward_normal: np.ndarray
    parent: int          # 0 = outer curve, 1.. = hole index + 1
    distance: float
    corner: bool = False
    degenerate: bool = False


def _close_loop(pts):
    if np.linalg.norm(pts[0] - pts[-1]) > BND_EPS:
        pts = np.vstack([pts, pts[0]])
    return pts


def _point_in_polygon(x, y, px, py):
    """Crossing-number containment test, vectorized over query points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = np.zeros(np.shape(x), dtype=bool)
    n = len(px) - 1
    for i in range(n):
        x0, y0, x1, y1 = px[i], py[i], px[i + 1], py[i + 1]
        crosses = (y0 <= y) != (y1 <= y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < xint)
    return inside


def _segment_distances(p, a, b):
    """Distances from point p to segments a[i]->b[i]; returns (dist, t, feet)."""
    d = b - a
    len2 = np.einsum("ij,ij->i", d, d)
    len2 = np.where(len2 < 1e-30, 1e-30, len2)
    t = np.clip(np.einsum("ij,ij->i", p - a, d) / len2, 0.0, 1.0)
    feet = a + t[:, None] * d
    dist = np.hypot(*(p - feet).T)
    return dist, t, feet


class Curve:
    """Base closed curve.  Subclasses fill the dense sample table."""

    kind = "abstract"
    is_hole = False

    # Sample table attributes, set by _build_samples:
    #   sample_points (M,2), sample_s (M,), sample_kappa (M,), length
    def _build_samples(self):
        raise NotImplementedError

    def point_at(self, s):
        raise NotImplementedError

    def tangent_at(self, s):
        raise NotImplementedError

    def curvature_at(self, s):
        raise NotImplementedError

    def distance(self, pts):
        """Unsigned distance from pts (n,2) to the curve."""
        raise NotImplementedError

    def contains(self, pts):
        """True where pts lie inside the region enclosed by the curve."""
        raise NotImplementedError


class PolygonCurve(Curve):
    kind = "polygon"

    def __init__(self, vertices, is_hole=False, h_bnd=2e-3):
        vertices = np.asarray(vertices, dtype=float)
        area2 = np.sum(
            vertices[:, 0] * np.roll(vertices[:, 1], -1)
            - np.roll(vertices[:, 0], -1) * vertices[:, 1]
        )
        # Outer loops counterclockwise, holes clockwise.
        if (area2 > 0) == is_hole:
            vertices = vertices[::-1]
        self.vertices = vertices
        self.is_hole = is_hole
        self.h_bnd = h_bnd
        self._loop = _close_loop(vertices)
        edges = np.diff(self._loop, axis=0)
        self.edge_lengths = np.hypot(*edges.T)
        self.length = float(self.edge_lengths.sum())
        self.edge_start_s = np.concatenate([[0.0], np.cumsum(self.edge_lengths)])
        self._build_samples()

    def _build_samples(self):
        pts, svals = [], []
        for i in range(len(self._loop) - 1):
            n = max(2, int(np.ceil(self.edge_lengths[i] / self.h_bnd)) + 1)
            t = np.linspace(0.0, 1.0, n)[:-1]
            pts.append(self._loop[i] + t[:, None] * (self._loop[i + 1] - self._loop[i]))
            svals.append(self.edge_start_s[i] + t * self.edge_lengths[i])
        pts.append(self._loop[:1])
        svals.append([self.length])
        self.sample_points = np.vstack(pts)
        self.sample_s = np.concatenate(svals)
        self.sample_kappa = np.zeros(len(self.sample_points))

    def _edge_index(self, s):
        s = np.mod(s, self.length)
        return np.clip(np.searchsorted(self.edge_start_s, s, side="right") - 1,
                       0, len(self.edge_lengths) - 1)

    def point_at(self, s):
        s = np.mod(np.asarray(s, dtype=float), self.length)
        i = self._edge_index(s)
        t = (s - self.edge_start_s[i]) / self.edge_lengths[i]
        return self._loop[i] + np.atleast_1d(t)[..., None] * (self._loop[i + 1] - self._loop[i])

    def tangent_at(self, s):
        i = self._edge_index(s)
        d = self._loop[i + 1] - self._loop[i]
        return d / np.linalg.norm(d, axis=-1, keepdims=True) if d.ndim > 1 else d / np.linalg.norm(d)

    def curvature_at(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    def is_corner(self, s, tol=1e-9):
        s = np.mod(s, self.length)
        return np.any(np.abs(self.edge_start_s - s) < tol) or abs(s - self.length) < tol

    def corner_arclengths(self):
        return self.edge_start_s[:-1]

    def distance(self, pts):
        pts = np.atleast_2d(pts)
        a = self._loop[:-1]
        b = self._loop[1:]
        out = np.empty(len(pts))
        for k, p in enumerate(pts):
            dist, _, _ = _segment_distances(p, a, b)
            out[k] = dist.min()
        return out

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        return _point_in_polygon(pts[:, 0], pts[:, 1], self._loop[:, 0], self._loop[:, 1])

    def feet(self, x, thresh):
        """Perpendicular feet (and corner feet) within distance thresh of x."""
        a = self._loop[:-1]
        b = self._loop[1:]
        dist, t, feet = _segment_distances(np.asarray(x, dtype=float), a, b)
        out = []
        for i in np.nonzero(dist <= thresh)[0]:
            s = self.edge_start_s[i] + t[i] * self.edge_lengths[i]
            corner = t[i] < 1e-12 or t[i] > 1 - 1e-12
            out.append((feet[i], float(np.mod(s, self.length)), float(dist[i]), corner))
        return out


class CircleCurve(Curve):
    kind = "circle"

    def __init__(self, center, radius, is_hole=False, h_bnd=2e-3):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.is_hole = is_hole
        self.h_bnd = h_bnd
        self.length = 2.0 * np.pi * self.radius
        self._build_samples()

    def _build_samples(self):
        n = max(64, int(np.ceil(self.length / self.h_bnd)))
        s = np.linspace(0.0, self.length, n + 1)
        self.sample_s = s
        self.sample_points = self.point_at(s)
        self.sample_kappa = np.full(n + 1, self.signed_curvature())

    def signed_curvature(self):
        return (-1.0 if self.is_hole else 1.0) / self.radius

    def point_at(self, s):
        th = np.asarray(s, dtype=float) / self.radius
        if self.is_hole:
            th = -th
        return self.center + self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def tangent_at(self, s):
        th = np.asarray(s, dtype=float) / self.radius
        sgn = -1.0 if self.is_hole else 1.0
        th = sgn * th
        return sgn * np.stack([-np.sin(th), np.cos(th)], axis=-1)

    def curvature_at(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.signed_curvature())

    def distance(self, pts):
        pts = np.atleast_2d(pts)
        return np.abs(np.hypot(*(pts - self.center).T) - self.radius)

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        return np.hypot(*(pts - self.center).T) < self.radius

    def arclength_of(self, p):
        th = np.arctan2(p[1] - self.center[1], p[0] - self.center[0])
        if self.is_hole:
            th = -th
        return float(np.mod(th, 2 * np.pi) * self.radius)


class PolarCurve(Curve):
    """Star-shaped curve r(theta) = c0 + sum_k (a_k sin k.theta + b_k cos k.theta)."""

    kind = "polar"

    def __init__(self, c0, sin_coeffs=(), cos_coeffs=(), n_samples=4096):
        self.c0 = float(c0)
        self.sin_coeffs = tuple(float(a) for a in sin_coeffs)
        self.cos_coeffs = tuple(float(b) for b in cos_coeffs)
        self.is_hole = False
        self.n_samples = int(n_samples)
        self._build_samples()

    def r_of_theta(self, th, deriv=0):
        th = np.asarray(th, dtype=float)
        r = np.full_like(th, self.c0 if deriv == 0 else 0.0)
        for k, a in enumerate(self.sin_coeffs, start=1):
            if a:
                r = r + a * k**deriv * np.sin(th * k + deriv * np.pi / 2)
        for k, b in enumerate(self.cos_coeffs, start=1):
            if b:
                r = r + b * k**deriv * np.cos(th * k + deriv * np.pi / 2)
        return r

    def _build_samples(self):
        n = self.n_samples
        th = np.linspace(0.0, 2 * np.pi, n + 1)
        r = self.r_of_theta(th)
        if np.any(r <= 0):
            raise DomainError("polar curve has nonpositive radius")
        rp = self.r_of_theta(th, 1)
        rpp = self.r_of_theta(th, 2)
        pts = r[:, None] * np.stack([np.cos(th), np.sin(th)], axis=-1)
        speed = np.hypot(r, rp)
        s = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(th))])
        kappa = (r**2 + 2 * rp**2 - r * rpp) / (r**2 + rp**2) ** 1.5
        self.sample_theta = th
        self.sample_points = pts
        self.sample_s = s
        self.sample_kappa = kappa
        self.length = float(s[-1])
        # Tangents from the parametric derivative.
        dx = rp * np.cos(th) - r * np.sin(th)
        dy = rp * np.sin(th) + r * np.cos(th)
        self.sample_tangent = np.stack([dx, dy], axis=-1) / speed[:, None]

    def _theta_of_s(self, s):
        s = np.mod(np.asarray(s, dtype=float), self.length)
        return np.interp(s, self.sample_s, self.sample_theta)

    def point_at(self, s):
        th = self._theta_of_s(s)
        r = self.r_of_theta(th)
        return r[..., None] * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def tangent_at(self, s):
        th = self._theta_of_s(s)
        r = self.r_of_theta(th)
        rp = self.r_of_theta(th, 1)
        t = np.stack([rp * np.cos(th) - r * np.sin(th),
                      rp * np.sin(th) + r * np.cos(th)], axis=-1)
        return t / np.linalg.norm(t, axis=-1, keepdims=True)

    def curvature_at(self, s):
        th = self._theta_of_s(s)
        r = self.r_of_theta(th)
        rp = self.r_of_theta(th, 1)
        rpp = self.r_of_theta(th, 2)
        return (r**2 + 2 * rp**2 - r * rpp) / (r**2 + rp**2) ** 1.5

    def distance(self, pts):
        pts = np.atleast_2d(pts)
        a = self.sample_points[:-1]
        b = self.sample_points[1:]
        out = np.empty(len(pts))
        for k, p in enumerate(pts):
            dist, _, _ = _segment_distances(p, a, b)
            out[k] = dist.min()
        return out

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        th = np.arctan2(pts[:, 1], pts[:, 0])
        return np.hypot(pts[:, 0], pts[:, 1]) < self.r_of_theta(th)

    def feet(self, x, thresh):
        """Sample-level feet within thresh, refined by parabolic interpolation."""
        x = np.asarray(x, dtype=float)
        d = np.hypot(*(self.sample_points[:-1] - x).T)
        mask = d <= thresh + 2 * self._max_spacing()
        out = []
        idx = np.nonzero(mask)[0]
        if len(idx) == 0:
            return out
        # Split into contiguous runs (circular), keep run minimizers.
        breaks = np.nonzero(np.diff(idx) > 1)[0]
        runs = np.split(idx, breaks + 1)
        if len(runs) > 1 and idx[0] == 0 and idx[-1] == len(d) - 1:
            runs[0] = np.concatenate([runs[-1], runs[0]])
            runs = runs[:-1]
        n = len(d)
        for run in runs:
            j = run[np.argmin(d[run])]
            jm, jp = (j - 1) % n, (j + 1) % n
            d0, d1, d2 = d[jm], d[j], d[jp]
            denom = d0 - 2 * d1 + d2
            t = 0.5 * (d0 - d2) / denom if abs(denom) > 1e-30 else 0.0
            t = float(np.clip(t, -1.0, 1.0))
            sj = self.sample_s[j]
            ds = self.sample_s[jp] - self.sample_s[j] if t >= 0 else self.sample_s[j] - self.sample_s[jm]
            s = float(np.mod(sj + t * abs(ds), self.length))
            p = self.point_at(s)
            out.append((np.asarray(p).reshape(2), s, float(np.hypot(*(np.asarray(p).reshape(2) - x))), False))
        return out

    def _max_spacing(self):
        return float(np.max(np.diff(self.sample_s)))


class DomainSpec:
    """Outer curve plus holes, with global distance/containment queries."""

    def __init__(self, outer, holes=(), name="custom"):
        self.outer = outer
        self.holes = list(holes)
        self.name = name
        pts = [outer.sample_points]
        self.bbox = (pts[0][:, 0].min(), pts[0][:, 0].max(),
                     pts[0][:, 1].min(), pts[0][:, 1].max())
        for h in self.holes:
            c = h.sample_points.mean(axis=0)
            if not bool(outer.contains(c[None])[0]):
                raise DomainError("hole lies outside the outer curve")

    @property
    def curves(self):
        return [self.outer] + self.holes

    def signed_distance(self, pts):
        """dist(x, boundary), positive inside the domain, negative outside."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d_out = self.outer.distance(pts)
        sgn = np.where(self.outer.contains(pts), 1.0, -1.0)
        d = sgn * d_out
        for h in self.holes:
            dh = h.distance(pts)
            dh = np.where(h.contains(pts), -dh, dh)
            d = np.minimum(d, dh)
        return d if len(d) > 1 else float(d[0])

    def contains(self, pts):
        """True iff strictly inside (points within 1e-12 of the boundary count as outside)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d = np.atleast_1d(self.signed_distance(pts))
        out = d > BND_EPS
        return out if len(out) > 1 else bool(out[0])

    def all_samples(self):
        """Concatenated boundary samples: (points, curve_id, arclen, curvature)."""
        pts, cid, s, kap = [], [], [], []
        for i, c in enumerate(self.curves):
            pts.append(c.sample_points[:-1])
            cid.append(np.full(len(c.sample_points) - 1, i))
            s.append(c.sample_s[:-1])
            kap.append(c.sample_kappa[:-1])
        return (np.vstack(pts), np.concatenate(cid),
                np.concatenate(s), np.concatenate(kap))

    def closest_boundary_points(self, x, rel_tol=1e-6):
        """All boundary feet within (1+rel_tol) of the minimum distance.

        Each connected near-minimizing arc yields one representative.  A
        whole-arc degeneracy (e.g. disk center) returns
        DEGENERATE_CLUSTER_CAP evenly spaced representatives with the
        degenerate flag set.
        """
        x = np.asarray(x, dtype=float)
        if not (0 < rel_tol < 0.2):
            raise DomainError("rel_tol must be in (0, 0.2)")
        d_min = float(self.signed_distance(x[None]))
        if d_min <= 0:
            raise DomainError("query point must lie strictly inside the domain")
        thresh = (1.0 + rel_tol) * d_min

        results = []
        for ci, curve in enumerate(self.curves):
            if curve.kind == "circle":
                rvec = x - curve.center
                rr = np.hypot(*rvec)
                dist = abs(rr - curve.radius)
                if dist > thresh:
                    continue
                # Whole boundary near-minimizing (x close to the center):
                # radius + rr <= (1 + rel_tol)(radius - rr).
                if rr <= curve.radius * rel_tol / (2.0 + rel_tol):
                    for s in np.linspace(0, curve.length, DEGENERATE_CLUSTER_CAP,
                                         endpoint=False):
                        p = np.asarray(curve.point_at(s)).reshape(2)
                        nrm = (x - p)
                        nn = np.linalg.norm(nrm)
                        results.append(BoundaryPoint(p, float(s),
                                                     curve.signed_curvature(),
                                                     nrm / nn, ci, dist,
                                                     degenerate=True))
                    continue
                p = curve.center + curve.radius * rvec / rr
                results.append(BoundaryPoint(p, curve.arclength_of(p),
                                             curve.signed_curvature(),
                                             (x - p) / dist, ci, dist))
            else:
                for p, s, dist, corner in curve.feet(x, thresh):
                    if dist > thresh or dist < 1e-14:
                        continue
                    kap = 0.0 if corner else float(np.atleast_1d(curve.curvature_at(s))[0])
                    results.append(BoundaryPoint(np.asarray(p).reshape(2), s, kap,
                                                 (x - np.asarray(p).reshape(2)) / dist,
                                                 ci, dist, corner=corner))

        # Merge spatial duplicates (feet found twice on adjacent edges).
        merged = []
        for bp in sorted(results, key=lambda b: b.distance):
            dup = False
            for kept in merged:
                if (kept.parent == bp.parent
                        and np.linalg.norm(kept.location - bp.location) < 1e-8):
                    dup = True
                    break
            if dup:
                continue
            merged.append(bp)

        # Drop feet whose segment to x leaves the domain (e.g. across a hole).
        final = []
        for bp in merged:
            seg_ok = True
            for t in (0.25, 0.5, 0.75):
                q = bp.location + t * (x - bp.location)
                if float(self.signed_distance(q[None])) < -BND_EPS:
                    seg_ok = False
                    break
            if seg_ok:
                final.append(bp)
        return final


# ----------------------------------------------------------------------
# Presets and domain files

def rect_domain(h_bnd=2e-3):
    outer = PolygonCurve([(-1, -0.8), (1, -0.8), (1, 0.8), (-1, 0.8)], h_bnd=h_bnd)
    return DomainSpec(outer, name="rect")


def rect_hole_domain(h_bnd=2e-3):
    outer = PolygonCurve([(-1, -0.8), (1, -0.8), (1, 0.8), (-1, 0.8)], h_bnd=h_bnd)
    hole = CircleCurve((0.2, 0.3), 0.2, is_hole=True, h_bnd=h_bnd)
    return DomainSpec(outer, [hole], name="rect-hole")


def rect_4holes_domain(h_bnd=2e-3):
    outer = PolygonCurve([(-1, -0.8), (1, -0.8), (1, 0.8), (-1, 0.8)], h_bnd=h_bnd)
    holes = [CircleCurve((sx * 0.5, sy * 0.3), 0.15, is_hole=True, h_bnd=h_bnd)
             for sx in (1, -1) for sy in (1, -1)]
    return DomainSpec(outer, holes, name="rect-4holes")


def polar_asym_domain(n_samples=4096):
    # r(theta) = 1 + 0.15 sin(2 theta) + 0.3 cos(3 theta)
    outer = PolarCurve(1.0, sin_coeffs=(0.0, 0.15), cos_coeffs=(0.0, 0.0, 0.3),
                       n_samples=n_samples)
    return DomainSpec(outer, name="polar-asym")


PRESETS = {
    "rect": rect_domain,
    "rect-hole": rect_hole_domain,
    "rect-4holes": rect_4holes_domain,
    "polar-asym": polar_asym_domain,
}


def preset_domain(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise DomainError(
            f"unknown domain preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}")


def load_domain_file(path):
    """Read a domain from a structured text file.

    Each non-comment line is one curve:
        outer polygon x0 y0 x1 y1 ...
        outer circle cx cy r
        outer polar c0 s1 c1 s2 c2 ...   (sin/cos coefficient pairs)
        hole circle cx cy r
        hole polygon x0 y0 ...
    """
    outer = None
    holes = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            role, kind, vals = tok[0], tok[1], [float(v) for v in tok[2:]]
            is_hole = role == "hole"
            if kind == "polygon":
                pts = np.array(vals).reshape(-1, 2)
                curve = PolygonCurve(pts, is_hole=is_hole)
            elif kind == "circle":
                curve = CircleCurve(vals[:2], vals[2], is_hole=is_hole)
            elif kind == "polar":
                c0 = vals[0]
                rest = vals[1:]
                sin_c = rest[0::2]
                cos_c = rest[1::2]
                curve = PolarCurve(c0, sin_c, cos_c)
            else:
                raise DomainError(f"unknown curve kind {kind!r}")
            if is_hole:
                holes.append(curve)
            else:
                if outer is not None:
                    raise DomainError("multiple outer curves in domain file")
                outer = curve
    if outer is None:
        raise DomainError("domain file has no outer curve")
    return DomainSpec(outer, holes, name=str(path))
