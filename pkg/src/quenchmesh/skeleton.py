"""Distance-field skeleton of a domain, firefront level sets, arrival
times, and the asymptotic touchdown-point prediction.

The skeleton (medial axis) is detected on a Cartesian grid: a point is
marked when its near-minimizing boundary samples split into at least two
direction clusters separated by more than THETA_PRUNE; the marked set is
thinned to one-pixel width and traced into polyline branches.

The firefront at time t is the level set {dist(x) = z0 * phi(t; eps)} of
the boundary-distance field: the locus of the boundary-layer minima.
Touchdown prediction follows a dichotomy on the front radius at the
reference quench time: while the front has not reached the skeleton the
candidates live on the front (ranked by boundary curvature through the
one-layer minimum depth); once it has, they are the skeleton points the
front is sweeping (clamped to the deepest skeleton points when the whole
skeleton was swept before the reference time), ranked by the multi-layer
merge depth.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree
from skimage.measure import find_contours
from skimage.morphology import skeletonize

from .errors import EmptyResult, NoArrival, ResolutionError
from .profiles import T0, outer_u0, phi

THETA_PRUNE = np.deg2rad(25.0)   # minimum angular gap between feet clusters
DEFAULT_GRID_H = 0.01


@dataclass
class SkeletonSet:
    points: np.ndarray            # (n, 2) skeleton point coordinates
    distances: np.ndarray         # (n,) boundary distance at each point
    branches: list                # lists of indices into points (polylines)
    grid_h: float
    n_feet: np.ndarray            # (n,) direction-cluster count at the point

    @property
    def d_min(self):
        return float(self.distances.min())

    @property
    def d_max(self):
        return float(self.distances.max())

    def nearest(self, pts):
        """Distance from query points to the skeleton point set."""
        tree = cKDTree(self.points)
        d, _ = tree.query(np.atleast_2d(pts))
        return d


def _grid(domain, grid_h):
    x0, x1, y0, y1 = domain.bbox
    pad = 2 * grid_h
    xs = np.arange(x0 - pad, x1 + pad + grid_h / 2, grid_h)
    ys = np.arange(y0 - pad, y1 + pad + grid_h / 2, grid_h)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return xs, ys, np.column_stack([X.ravel(), Y.ravel()])


def _direction_clusters(angles):
    """Number of clusters under circular gap-splitting at THETA_PRUNE,
    plus one representative index per cluster."""
    order = np.argsort(angles)
    a = angles[order]
    gap_before = np.empty(len(a))
    gap_before[0] = a[0] + 2 * np.pi - a[-1]
    gap_before[1:] = np.diff(a)
    starts = np.nonzero(gap_before > THETA_PRUNE)[0]
    if len(starts) == 0:
        return 1, [int(order[0])]
    return len(starts), [int(order[i]) for i in starts]


def _feet_clusters(domain, x, d, band):
    """Direction-cluster count of the near-minimizing boundary feet of x,
    plus the curvature of one representative foot per cluster."""
    rel_tol = min(band / max(d, band), 0.19)
    try:
        feet = domain.closest_boundary_points(x, rel_tol=max(rel_tol, 1e-6))
    except Exception:
        return 0, np.zeros(0)
    if not feet:
        return 0, np.zeros(0)
    ang = np.array([np.arctan2(f.inward_normal[1], f.inward_normal[0])
                    for f in feet])
    n_cl, reps = _direction_clusters(ang)
    return n_cl, np.array([feet[i].curvature for i in reps])


def compute_skeleton(domain, grid_h=DEFAULT_GRID_H, band_factor=1.5):
    """Medial-axis point set of the domain on a grid of spacing grid_h.

    Candidate ridge points of the distance field are pre-filtered by the
    finite-difference gradient magnitude (below 1 only where nearest-
    boundary directions disagree), confirmed by the closest-boundary-feet
    clustering rule, then thinned to one-pixel-wide polyline branches.
    """
    samples, cid, s_arc, kappa = domain.all_samples()
    tree = cKDTree(samples)
    xs, ys, pts = _grid(domain, grid_h)
    nd = np.atleast_1d(domain.signed_distance(pts))
    inside = nd > grid_h / 4
    d_grid = tree.query(pts)[0].reshape(len(xs), len(ys))
    d_grid[~inside.reshape(d_grid.shape)] *= -1.0
    gx, gy = np.gradient(d_grid, grid_h, grid_h)
    ridge = (np.hypot(gx, gy) < 0.92).ravel() & inside
    band = band_factor * grid_h

    cand_idx = np.nonzero(ridge)[0]
    mask = np.zeros(len(pts), dtype=bool)
    for k in cand_idx:
        n_cl, _ = _feet_clusters(domain, pts[k], nd[k], band)
        mask[k] = n_cl >= 2
    grid_mask = mask.reshape(len(xs), len(ys))
    if not grid_mask.any():
        raise ResolutionError(
            f"no skeleton points found at grid spacing {grid_h}; refine the grid")

    thin = skeletonize(grid_mask)
    ii, jj = np.nonzero(thin)
    sk_pts = np.column_stack([xs[ii], ys[jj]])
    d_sk, _ = tree.query(sk_pts)

    n_feet = np.zeros(len(sk_pts), dtype=int)
    for k in range(len(sk_pts)):
        n_feet[k], _ = _feet_clusters(domain, sk_pts[k], d_sk[k], band)

    branches = _trace_branches(ii, jj)
    return SkeletonSet(points=sk_pts, distances=d_sk, branches=branches,
                       grid_h=grid_h, n_feet=n_feet)


def _trace_branches(ii, jj):
    """Split 8-connected skeleton pixels into degree-2 polyline runs."""
    pix = {(int(a), int(b)): k for k, (a, b) in enumerate(zip(ii, jj))}
    nbrs = {}
    for (a, b), k in pix.items():
        ns = []
        for da in (-1, 0, 1):
            for db in (-1, 0, 1):
                if (da or db) and (a + da, b + db) in pix:
                    ns.append(pix[(a + da, b + db)])
        nbrs[k] = ns
    visited_edges = set()
    branches = []
    nodes = [k for k, ns in nbrs.items() if len(ns) != 2]
    seeds = nodes if nodes else list(nbrs)[:1]
    for start in seeds:
        for nxt in nbrs[start]:
            if (start, nxt) in visited_edges:
                continue
            path = [start, nxt]
            visited_edges.add((start, nxt))
            visited_edges.add((nxt, start))
            while len(nbrs[path[-1]]) == 2:
                a, b = nbrs[path[-1]]
                step = a if a != path[-2] else b
                if (path[-1], step) in visited_edges:
                    break
                visited_edges.add((path[-1], step))
                visited_edges.add((step, path[-1]))
                path.append(step)
                if step == start:
                    break
            branches.append(path)
    return branches


def firefront(domain, t, eps, grid_h=DEFAULT_GRID_H, z0=None):
    """Polyline segments of the level set dist(x) = z0 * phi(t; eps)."""
    if z0 is None:
        z0 = _default_z0()
    level = z0 * phi(t, eps)
    samples, *_ = domain.all_samples()
    tree = cKDTree(samples)
    xs, ys, pts = _grid(domain, grid_h)
    d = tree.query(pts)[0].reshape(len(xs), len(ys))
    sgn = np.sign(np.atleast_1d(domain.signed_distance(pts))).reshape(d.shape)
    dist = d * np.where(sgn == 0, 1.0, sgn)
    if level >= dist.max():
        raise EmptyResult(
            f"firefront level {level:.4g} exceeds the inradius {dist.max():.4g}")
    contours = find_contours(dist, level)
    out = []
    for c in contours:
        xy = np.column_stack([np.interp(c[:, 0], np.arange(len(xs)), xs),
                              np.interp(c[:, 1], np.arange(len(ys)), ys)])
        keep = np.atleast_1d(domain.signed_distance(xy)) > 0
        if keep.any():
            out.append(xy[keep])
    if not out:
        raise EmptyResult("firefront is empty inside the domain")
    return out


_Z0_CACHE = None


def _default_z0():
    global _Z0_CACHE
    if _Z0_CACHE is None:
        from .profiles import locate_minimum, solve_w0
        _Z0_CACHE = locate_minimum(solve_w0())
    return _Z0_CACHE


def front_arrival_time(distance, eps, z0=None, t_lo=1e-12):
    """Time at which the firefront reaches a point at the given boundary
    distance: solves z0 * phi(t; eps) = distance by bisection on (0, T0]."""
    if z0 is None:
        z0 = _default_z0()
    if distance <= 0:
        return 0.0
    g = lambda t: z0 * phi(t, eps) - distance
    if g(T0) < 0:
        raise NoArrival(
            f"distance {distance:.4g} is beyond the front sweep by t = {T0:.4g}")
    if g(t_lo) >= 0:
        return 0.0
    return brentq(g, t_lo, T0, xtol=1e-14)


def arrival_time(skeleton, eps, z0=None):
    """Skeleton arrival time: first t with z0 * phi(t; eps) equal to the
    minimum skeleton boundary distance.  Returns 0 when the skeleton
    meets the boundary (minimum distance within the grid resolution)."""
    d_min = skeleton.d_min
    if d_min <= 2.0 * skeleton.grid_h:
        return 0.0
    return front_arrival_time(d_min, eps, z0=z0)


@dataclass
class TouchdownPrediction:
    regime: str                   # "pre-skeleton" or "on-skeleton"
    points: np.ndarray            # (k, 2) ranked touchdown locations
    scores: np.ndarray            # predicted minimum depth (lower = first)
    distances: np.ndarray         # boundary distance of each point
    mean_curvatures: np.ndarray   # mean contributor curvature per point
    n_contributors: np.ndarray    # feet-cluster count per point
    t_S: float                    # skeleton arrival time
    T_estimate: float
    eps: float
    clamped: bool = False         # front swept past the deepest skeleton point
    degenerate_ring: bool = False
    skeleton: SkeletonSet = None
    candidates: np.ndarray = None  # all scored candidates before selection


def _merge_score(domain, pts, t_ref, eps, constants):
    """Predicted minimum depth u0 [1 - sum_j (1 + w0(z0) + phi kappa_j
    w1bar(z0))] over the feet clusters of each point."""
    u0 = outer_u0(t_ref)
    ph = phi(t_ref, eps)
    scores = np.empty(len(pts))
    nfeet = np.empty(len(pts), dtype=int)
    kbar = np.empty(len(pts))
    degen = np.zeros(len(pts), dtype=bool)
    for k, p in enumerate(pts):
        feet = domain.closest_boundary_points(p)
        if not feet:
            scores[k] = np.inf
            nfeet[k] = 0
            kbar[k] = 0.0
            continue
        kappas = np.array([f.curvature for f in feet])
        total = np.sum(1.0 + constants.w0_at_z0
                       + ph * kappas * constants.w1bar_at_z0)
        scores[k] = u0 * (1.0 - total)
        nfeet[k] = len(feet)
        kbar[k] = kappas.mean()
        degen[k] = any(f.degenerate for f in feet)
    return scores, nfeet, kbar, degen


def _cluster_points(pts, radius):
    """Greedy spatial clustering; returns lists of indices."""
    remaining = list(range(len(pts)))
    tree = cKDTree(pts)
    clusters = []
    assigned = np.full(len(pts), -1)
    for i in range(len(pts)):
        if assigned[i] >= 0:
            continue
        stack = [i]
        assigned[i] = len(clusters)
        members = []
        while stack:
            j = stack.pop()
            members.append(j)
            for nb in tree.query_ball_point(pts[j], radius):
                if assigned[nb] < 0:
                    assigned[nb] = len(clusters)
                    stack.append(nb)
        clusters.append(members)
    return clusters


def _front_lobe_minima(domain, front, t_ref, eps, constants):
    """Points of a closed front polyline where the predicted depth has a
    circular local minimum (one per boundary-curvature lobe).

    A flat score along the whole contour (constant boundary curvature,
    e.g. a disk) has no isolated lobes; the full contour is returned so
    the degenerate-ring detection downstream can flag it."""
    front = np.asarray(front)
    closed = len(front) > 2 and np.allclose(front[0], front[-1])
    pts = front[:-1] if closed else front
    scores = _merge_score(domain, pts, t_ref, eps, constants)[0]
    ok = np.isfinite(scores)
    pts, scores = pts[ok], scores[ok]
    if len(pts) == 0:
        return np.empty((0, 2))
    spread = float(scores.max() - scores.min())
    if spread < 1e-9 + 1e-6 * abs(scores.min()):
        return pts
    if not closed:
        interior = (scores[1:-1] <= scores[:-2]) & (scores[1:-1] <= scores[2:])
        keep = np.concatenate(([scores[0] < scores[1]], interior,
                               [scores[-1] < scores[-2]]))
    else:
        keep = (scores <= np.roll(scores, 1)) & (scores <= np.roll(scores, -1))
    # plateau minima produce runs of equal-score neighbours; the spatial
    # clustering downstream collapses them to one representative
    return pts[keep]


def _rank(points, scores, order_keys):
    """Sort ascending by score, ties by the given keys then lexicographic."""
    keys = [points[:, 1], points[:, 0]]
    keys.extend(order_keys)
    keys.append(scores)
    return np.lexsort(tuple(keys))


def predict_touchdown(domain, eps, constants, t_quench=None,
                      grid_h=DEFAULT_GRID_H, score_window=None,
                      skeleton=None):
    """Asymptotic touchdown locations for the given layer constants.

    T_estimate is the reference quench time: t_quench when supplied
    (e.g. from a simulation), otherwise the flat-state quench time.
    The regime is pre-skeleton exactly when T_estimate < t_S, the time
    at which the inward front first reaches the domain skeleton; the
    pre-skeleton prediction places touchdown on the front itself at the
    points of maximal boundary curvature, while the on-skeleton
    prediction selects skeleton points whose boundary distance matches
    the front radius (clamped to the deepest skeleton points once the
    front has swept past them).

    score_window applies only in the pre-skeleton regime: front lobes
    (local minima of the predicted depth along each front contour)
    whose score lies within this margin of the best are kept
    (default: keep all lobes).
    """
    z0 = constants.z0
    if skeleton is None:
        skeleton = compute_skeleton(domain, grid_h=grid_h)
    grid_h = skeleton.grid_h
    T_est = T0 if t_quench is None else min(t_quench, T0)
    try:
        t_S = arrival_time(skeleton, eps, z0=z0)
    except NoArrival:
        t_S = np.inf

    clamped = False
    if T_est < t_S:
        regime = "pre-skeleton"
        t_front = min(T_est, T0 - 1e-12)
        fronts = firefront(domain, t_front, eps, grid_h=grid_h, z0=z0)
        cand = np.vstack([
            _front_lobe_minima(domain, f, min(T_est, T0), eps, constants)
            for f in fronts])
        dists = np.full(len(cand), z0 * phi(t_front, eps))
    else:
        regime = "on-skeleton"
        r_star = z0 * phi(min(T_est, T0), eps)
        tol = 1e-9 * max(1.0, skeleton.d_max)  # float slack at band edges
        if r_star > skeleton.d_max - grid_h:
            clamped = r_star > skeleton.d_max
            sel = skeleton.distances >= skeleton.d_max - grid_h - tol
        else:
            sel = np.abs(skeleton.distances - r_star) <= grid_h + tol
        cand = skeleton.points[sel]
        dists = skeleton.distances[sel]
    if len(cand) == 0:
        raise EmptyResult("no touchdown candidates found")

    scores, nfeet, kbar, degen = _merge_score(domain, cand, min(T_est, T0),
                                              eps, constants)
    finite = np.isfinite(scores)
    cand, dists, scores = cand[finite], dists[finite], scores[finite]
    nfeet, kbar, degen = nfeet[finite], kbar[finite], degen[finite]
    if len(cand) == 0:
        raise EmptyResult("no scorable touchdown candidates")
    spread = float(scores.max() - scores.min())

    if regime == "pre-skeleton" and score_window is not None:
        keep = scores <= scores.min() + score_window
        cand, dists, scores = cand[keep], dists[keep], scores[keep]
        nfeet, kbar, degen = nfeet[keep], kbar[keep], degen[keep]

    clusters = _cluster_points(cand, 3.0 * grid_h)
    reps, rep_s, rep_d, rep_n, rep_k, rep_deg = [], [], [], [], [], []
    for members in clusters:
        m = np.asarray(members)
        centroid = cand[m].mean(axis=0)
        r = np.hypot(*(cand[m] - centroid).T)
        # ties (symmetric clusters) broken by reflection-invariant keys
        # (deeper first, better score first) before falling back to
        # lexicographic order
        best = m[np.lexsort((cand[m, 1], cand[m, 0], scores[m], -dists[m],
                             np.round(r / (0.1 * grid_h))))[0]]
        reps.append(cand[best])
        rep_s.append(scores[best])
        rep_d.append(dists[best])
        rep_n.append(nfeet[best])
        rep_k.append(kbar[best])
        rep_deg.append(degen[m].any())
    reps = np.asarray(reps)
    rep_s = np.asarray(rep_s)
    rep_d = np.asarray(rep_d)
    rep_n = np.asarray(rep_n)
    rep_k = np.asarray(rep_k)

    ring = bool(np.any(rep_deg))
    if len(clusters) == 1 and len(cand) > 8:
        extent = np.ptp(cand, axis=0).max()
        if extent > 10 * grid_h and spread < 1e-6 + 1e-3 * abs(rep_s[0]):
            ring = True

    order = _rank(reps, rep_s, [])
    return TouchdownPrediction(regime=regime, points=reps[order],
                               scores=rep_s[order], distances=rep_d[order],
                               mean_curvatures=rep_k[order],
                               n_contributors=rep_n[order],
                               t_S=t_S, T_estimate=T_est, eps=eps,
                               clamped=clamped, degenerate_ring=ring,
                               skeleton=skeleton, candidates=cand)


SKELETON_CSV_HEADER = "# quenchmesh skeleton v1"
PREDICTION_CSV_HEADER = "# quenchmesh touchdown-prediction v1"


def skeleton_to_csv(skeleton, path):
    with open(path, "w") as fh:
        fh.write(SKELETON_CSV_HEADER + "\n")
        fh.write("x,y,distance,n_feet\n")
        for p, d, n in zip(skeleton.points, skeleton.distances,
                           skeleton.n_feet):
            fh.write(f"{p[0]:.10g},{p[1]:.10g},{d:.10g},{n}\n")


def prediction_to_csv(pred, path):
    with open(path, "w") as fh:
        fh.write(PREDICTION_CSV_HEADER + "\n")
        fh.write(f"# regime={pred.regime} eps={pred.eps:.10g} "
                 f"t_S={pred.t_S:.10g} T_estimate={pred.T_estimate:.10g} "
                 f"clamped={pred.clamped} "
                 f"degenerate_ring={pred.degenerate_ring}\n")
        fh.write("x,y,score,distance,mean_curvature,n_contributors\n")
        for p, s, d, kb, n in zip(pred.points, pred.scores, pred.distances,
                                  pred.mean_curvatures, pred.n_contributors):
            fh.write(f"{p[0]:.10g},{p[1]:.10g},{s:.10g},{d:.10g},"
                     f"{kb:.10g},{n}\n")
