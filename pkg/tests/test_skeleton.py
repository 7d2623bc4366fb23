"""Skeleton extraction, firefront, arrival times, touchdown prediction."""

import numpy as np
import pytest
from scipy.spatial import cKDTree

from quenchmesh.errors import NoArrival
from quenchmesh.geometry import CircleCurve, DomainSpec, preset_domain
from quenchmesh.profiles import T0, phi
from quenchmesh.skeleton import (SKELETON_CSV_HEADER, arrival_time,
                                 compute_skeleton, firefront,
                                 front_arrival_time, predict_touchdown,
                                 prediction_to_csv, skeleton_to_csv)

GRID_H = 0.02


@pytest.fixture(scope="module")
def rect():
    return preset_domain("rect")


@pytest.fixture(scope="module")
def rect_skeleton(rect):
    return compute_skeleton(rect, grid_h=GRID_H)


@pytest.fixture(scope="module")
def disk():
    return DomainSpec(CircleCurve((0.0, 0.0), 1.0), name="disk")


def _rect_medial_distance(p):
    """Distance to the analytic medial axis of (-1,1)x(-0.8,0.8):
    four corner diagonals plus the midline y = 0, |x| <= 0.2."""
    x, y = abs(p[0]), abs(p[1])
    s = np.clip((1.0 - x + 0.8 - y) / 2.0, 0.0, 0.8)
    d_diag = np.hypot(1.0 - s - x, 0.8 - s - y)
    d_mid = np.hypot(np.clip(x, 0.0, 0.2) - x, y)
    return min(d_diag, d_mid)


def _rect_medial_samples():
    pts = []
    for s in np.linspace(0.0, 0.8, 400):
        for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            pts.append((sx * (1.0 - s), sy * (0.8 - s)))
    for x in np.linspace(-0.2, 0.2, 100):
        pts.append((x, 0.0))
    return np.asarray(pts)


class TestSkeletonGeometry:
    def test_rect_hausdorff_within_two_grid_cells(self, rect_skeleton):
        dev = max(_rect_medial_distance(p) for p in rect_skeleton.points)
        cov = cKDTree(rect_skeleton.points).query(
            _rect_medial_samples())[0].max()
        assert max(dev, cov) <= 2 * GRID_H

    def test_rect_reaches_corners_and_center(self, rect_skeleton):
        assert rect_skeleton.d_min <= 2 * GRID_H
        assert rect_skeleton.d_max == pytest.approx(0.8, abs=1e-6)

    def test_points_have_two_feet(self, rect_skeleton):
        assert np.all(rect_skeleton.n_feet >= 2)

    def test_symmetric_under_reflections(self, rect_skeleton):
        P = rect_skeleton.points
        tree = cKDTree(P)
        for sx, sy in ((-1, 1), (1, -1), (-1, -1)):
            mirrored = P * np.array([sx, sy])
            assert tree.query(mirrored)[0].max() < 1e-9

    def test_disk_center_only(self, disk):
        S = compute_skeleton(disk, grid_h=GRID_H)
        assert np.hypot(*S.points.T).max() <= 2 * GRID_H
        assert S.d_max == pytest.approx(1.0, abs=2 * GRID_H)

    def test_branches_cover_points(self, rect_skeleton):
        covered = set()
        for br in rect_skeleton.branches:
            covered.update(map(int, br))
        assert covered == set(range(len(rect_skeleton.points)))


class TestFirefront:
    def test_front_at_prescribed_depth(self, rect, constants):
        t, eps = 0.1, 0.02
        depth = constants.z0 * phi(t, eps)
        fronts = firefront(rect, t, eps, grid_h=GRID_H, z0=constants.z0)
        pts = np.vstack(fronts)
        d = np.atleast_1d(rect.signed_distance(pts))
        assert np.abs(d - depth).max() < 2 * GRID_H

    def test_beyond_inradius_is_empty(self, disk, constants):
        from quenchmesh.errors import EmptyResult
        with pytest.raises(EmptyResult):
            # depth z0 sqrt(eps) > 1 for eps = 0.5
            firefront(disk, T0 - 1e-9, 0.5, grid_h=GRID_H, z0=constants.z0)


class TestArrivalTimes:
    def test_analytic_inversion(self, constants):
        """z0 phi(t) = d inverts to t = (1 - (1 - q)^3)/3, q = (d/(z0 sqrt(eps)))^4."""
        z0 = constants.z0
        for eps, d in ((0.02, 0.3), (0.1, 0.5), (0.0001, 0.02)):
            q = (d / (z0 * np.sqrt(eps))) ** 4
            if q > 1:
                continue
            t_ana = (1.0 - (1.0 - q) ** 3) / 3.0
            t_num = front_arrival_time(d, eps, z0=z0)
            assert t_num == pytest.approx(t_ana, abs=1e-10)

    def test_no_arrival_beyond_reach(self, constants):
        with pytest.raises(NoArrival):
            front_arrival_time(1.0, 1e-4, z0=constants.z0)

    def test_rect_skeleton_arrival_is_zero(self, rect_skeleton, constants):
        # skeleton meets the boundary at the corners
        assert arrival_time(rect_skeleton, 0.02, z0=constants.z0) == 0.0

    def test_disk_arrival_matches_inversion(self, disk, constants):
        S = compute_skeleton(disk, grid_h=GRID_H)
        eps = 0.2
        t_S = arrival_time(S, eps, z0=constants.z0)
        q = (S.d_min / (constants.z0 * np.sqrt(eps))) ** 4
        t_ana = (1.0 - (1.0 - q) ** 3) / 3.0
        assert t_S == pytest.approx(t_ana, rel=1e-6)


class TestPrediction:
    def test_rect_small_eps_four_corner_points(self, rect, rect_skeleton,
                                               constants):
        pred = predict_touchdown(rect, 1e-4, constants,
                                 skeleton=rect_skeleton)
        assert pred.regime == "on-skeleton"
        assert len(pred.points) == 4
        # symmetric under both reflections, on the corner diagonals
        pts = pred.points
        assert sorted(map(tuple, np.round(np.abs(pts), 9))) \
            == [tuple(np.round(np.abs(pts[0]), 9))] * 4
        for p in pts:
            assert _rect_medial_distance(p) < 1e-9
            assert abs(p[0]) > 0.8  # near the corners

    def test_rect_large_eps_single_point_at_origin(self, rect, rect_skeleton,
                                                   constants):
        pred = predict_touchdown(rect, 0.1, constants, skeleton=rect_skeleton)
        assert pred.regime == "on-skeleton"
        assert pred.clamped
        assert len(pred.points) == 1
        assert np.hypot(*pred.points[0]) < 1e-9

    def test_band_matches_front_radius(self, rect, rect_skeleton, constants):
        eps = 0.02
        pred = predict_touchdown(rect, eps, constants, skeleton=rect_skeleton)
        r_star = constants.z0 * phi(T0, eps)
        assert np.abs(pred.distances - r_star).max() <= GRID_H + 1e-9

    def test_regime_invariant(self, rect, rect_skeleton, disk, constants):
        """regime == pre-skeleton exactly when T_estimate < t_S."""
        cases = [(rect, rect_skeleton, 0.02, None),
                 (rect, rect_skeleton, 0.1, None),
                 (disk, compute_skeleton(disk, grid_h=GRID_H), 0.01, None),
                 (disk, compute_skeleton(disk, grid_h=GRID_H), 0.2, None),
                 (disk, compute_skeleton(disk, grid_h=GRID_H), 0.2, 0.1)]
        for dom, S, eps, tq in cases:
            pred = predict_touchdown(dom, eps, constants, t_quench=tq,
                                     skeleton=S)
            assert (pred.regime == "pre-skeleton") == \
                (pred.T_estimate < pred.t_S)

    def test_no_arrival_switches_to_pre_skeleton(self, disk, constants):
        S = compute_skeleton(disk, grid_h=GRID_H)
        # front reaches only z0 sqrt(eps) ~ 0.29 < 1: never arrives
        pred = predict_touchdown(disk, 0.01, constants, skeleton=S)
        assert pred.regime == "pre-skeleton"
        assert pred.t_S == np.inf

    def test_disk_degenerate_ring_flagged(self, disk, constants):
        S = compute_skeleton(disk, grid_h=GRID_H)
        pred = predict_touchdown(disk, 0.01, constants, skeleton=S)
        assert pred.degenerate_ring

    def test_polar_asym_three_lobes(self, constants):
        dom = preset_domain("polar-asym")
        S = compute_skeleton(dom, grid_h=0.01)
        pred = predict_touchdown(dom, 0.02, constants, skeleton=S)
        assert len(pred.points) == 3
        # the three candidates sit in the directions of the three
        # boundary-curvature maxima (theta ~ 0.07, 2.06, 4.16)
        ang = np.sort(np.mod(np.arctan2(pred.points[:, 1],
                                        pred.points[:, 0]), 2 * np.pi))
        assert np.allclose(ang, [0.073, 2.056, 4.155], atol=0.35)

    def test_refined_estimate_moves_band(self, rect, rect_skeleton,
                                         constants):
        """An earlier measured quench time pulls candidates toward the
        boundary (smaller front radius)."""
        late = predict_touchdown(rect, 0.02, constants,
                                 skeleton=rect_skeleton)
        early = predict_touchdown(rect, 0.02, constants, t_quench=0.25,
                                  skeleton=rect_skeleton)
        assert early.T_estimate == 0.25
        assert early.distances.max() < late.distances.min()

    def test_scores_sorted_deepest_first(self, constants):
        dom = preset_domain("polar-asym")
        S = compute_skeleton(dom, grid_h=0.01)
        pred = predict_touchdown(dom, 0.04, constants, skeleton=S)
        assert np.all(np.diff(pred.scores) >= -1e-12)
        assert np.all(pred.scores < 0)


class TestCsv:
    def test_skeleton_csv_versioned(self, rect_skeleton, tmp_path):
        path = tmp_path / "sk.csv"
        skeleton_to_csv(rect_skeleton, path)
        lines = path.read_text().splitlines()
        assert lines[0] == SKELETON_CSV_HEADER
        assert lines[1].startswith("x,y,")
        assert len(lines) == 2 + len(rect_skeleton.points)

    def test_prediction_csv_roundtrip(self, rect, rect_skeleton, constants,
                                      tmp_path):
        pred = predict_touchdown(rect, 1e-4, constants,
                                 skeleton=rect_skeleton)
        path = tmp_path / "pred.csv"
        prediction_to_csv(pred, path)
        lines = path.read_text().splitlines()
        assert "touchdown-prediction" in lines[0]
        assert "regime=on-skeleton" in lines[1]
        data = np.array([[float(v) for v in ln.split(",")]
                         for ln in lines[3:]])
        assert np.allclose(data[:, :2], pred.points)
