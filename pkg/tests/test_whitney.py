import numpy as np
import pytest

from divsym.fields import PreconditionError, UnsupportedOrderError
from divsym.maximal import OpenSetMask, ScalarGrid, bad_set
from divsym.whitney import (
    BUMP_CORE,
    BUMP_SUPP,
    DILATION,
    WhitneyCover,
    bump,
    build_partition,
    cubes_at,
    pou_eval,
    whitney_decompose,
)


def ball_mask(n, center, radius, period=1.0):
    ax = (np.arange(n) + 0.5) * period / n
    grid = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
    d = np.abs(grid - np.asarray(center))
    d = np.minimum(d, period - d)
    vals = np.where(np.linalg.norm(d, axis=-1) < radius, 1.0, 0.0)
    return bad_set(ScalarGrid(n=n, period=period, values=vals), 0.5)


def two_ball_mask(n):
    a = ball_mask(n, (0.25, 0.25, 0.25), 0.11)
    b = ball_mask(n, (0.75, 0.75, 0.75), 0.11)
    vals = np.where(a.mask | b.mask, 1.0, 0.0)
    return bad_set(ScalarGrid(n=n, period=1.0, values=vals), 0.5)


def interior_points(mask, count, seed=0):
    rng = np.random.default_rng(seed)
    cells = np.argwhere(mask.mask)
    pick = cells[rng.integers(0, len(cells), size=count)]
    return (pick + rng.random((count, 3))) * (mask.period / mask.n)


class TestBump:
    def test_plateau_and_support(self):
        assert bump(0.0) == 1.0
        assert bump(BUMP_CORE) == 1.0
        assert bump(BUMP_SUPP) == 0.0
        assert bump(0.9) == 0.0
        mid = 0.5 * (BUMP_CORE + BUMP_SUPP)
        assert 0.0 < bump(mid) < 1.0

    def test_derivatives_match_finite_differences(self):
        ts = np.linspace(-0.49, 0.49, 23)
        h = 1e-6
        for order in (1, 2, 3):
            fd = (bump(ts + h, order - 1) - bump(ts - h, order - 1)) / (2 * h)
            np.testing.assert_allclose(bump(ts, order), fd, atol=1e-4 * max(1.0, np.abs(fd).max()))

    def test_even_symmetry(self):
        ts = np.linspace(0.0, 0.6, 13)
        np.testing.assert_array_equal(bump(ts), bump(-ts))
        np.testing.assert_array_equal(bump(ts, 1), -bump(-ts, 1))


class TestDecompose:
    def test_empty(self):
        m = ball_mask(16, (0.5, 0.5, 0.5), 0.0)
        assert m.is_empty()
        assert len(whitney_decompose(m)) == 0

    def test_full_rejected(self):
        n = 16
        mask = bad_set(ScalarGrid(n=n, period=1.0, values=np.ones((n, n, n))), 0.5)
        with pytest.raises(PreconditionError):
            whitney_decompose(mask)

    def test_ball_w1_w2(self):
        mask = ball_mask(64, (0.5, 0.5, 0.5), 1.0 / 8)
        cover = whitney_decompose(mask)
        assert cover.stats["w1_exact"]
        # W2 sandwich with the recorded module constants
        assert cover.stats["w2_ratio_min"] >= 1.0 - 1e-12
        assert cover.stats["w2_ratio_max"] <= 5.0

    def test_two_balls_connectivity(self):
        mask = two_ball_mask(32)
        cover = whitney_decompose(mask)
        # union-find over touching cubes must yield exactly two classes
        parent = list(range(len(cover)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i, nbrs in enumerate(cover.neighbor_pairs()):
            for j in nbrs:
                parent[find(i)] = find(j)
        roots = {find(i) for i in range(len(cover))}
        assert len(roots) == 2

    def test_overlap_bounded_across_masks(self):
        overlaps = []
        for seed in range(6):
            rng = np.random.default_rng(seed)
            vals = rng.random((16, 16, 16))
            mask = bad_set(ScalarGrid(n=16, period=1.0, values=vals), 0.75)
            if mask.is_empty() or mask.is_full():
                continue
            cover = whitney_decompose(mask)
            overlaps.append(cover.stats["overlap"])
        assert max(overlaps) <= 27  # dimensional bound for the dilation in use

    def test_w4_comparability(self):
        mask = ball_mask(64, (0.5, 0.5, 0.5), 0.2)
        cover = whitney_decompose(mask)
        assert cover.stats["w4_ratio_max"] <= 8.0

    def test_serialization(self, tmp_path):
        cover = whitney_decompose(ball_mask(32, (0.5, 0.5, 0.5), 0.12))
        data = cover.to_json()
        assert len(data) == len(cover)
        assert {"center", "side", "level"} <= set(data[0])
        cover.w2_csv(tmp_path / "w2.csv")
        assert (tmp_path / "w2.csv").read_text().startswith("index,side")


class TestPartition:
    def setup_method(self):
        self.mask = ball_mask(32, (0.5, 0.5, 0.5), 0.15)
        self.cover = whitney_decompose(self.mask)
        self.pou = build_partition(self.cover)

    def test_empty_cover_rejected(self):
        empty = WhitneyCover(period=1.0, n=16, cubes=[])
        with pytest.raises(PreconditionError):
            build_partition(empty)

    def test_partition_of_unity_on_bad_set(self):
        for x in interior_points(self.mask, 60):
            total = sum(pou_eval(self.pou, j, x) for j in self.cover.cubes_at(x))
            assert abs(total - 1.0) < 1e-12

    def test_outside_supports_zero(self):
        # a point far from the ball is in no cube
        x = np.array([0.03, 0.03, 0.03])
        assert self.cover.cubes_at(x) == []
        assert pou_eval(self.pou, 0, x) == 0.0

    def test_single_cube_region(self):
        # wherever only one cube covers, its phi is exactly 1
        for x in interior_points(self.mask, 200, seed=3):
            active = self.cover.cubes_at(x)
            if len(active) == 1:
                assert pou_eval(self.pou, active[0], x) == pytest.approx(1.0, abs=1e-14)
                break
        else:
            pytest.skip("no single-cube point sampled")

    def test_value_at_center_positive(self):
        j = len(self.cover) // 2
        val = pou_eval(self.pou, j, self.cover.centers[j])
        assert 0.0 < val <= 1.0

    def test_derivatives_match_finite_differences(self):
        rng = np.random.default_rng(7)
        pts = interior_points(self.mask, 5, seed=11)
        h = 1e-5
        for x in pts:
            for j in self.cover.cubes_at(x):
                for d in range(3):
                    e = np.zeros(3)
                    e[d] = h
                    order = tuple(int(q == d) for q in range(3))
                    fd = (pou_eval(self.pou, j, x + e) - pou_eval(self.pou, j, x - e)) / (2 * h)
                    an = pou_eval(self.pou, j, x, order)
                    assert abs(fd - an) <= 1e-6 * max(1.0, abs(an)) + 1e-4 * abs(an) + 5e-5

    def test_derivative_sums_vanish(self):
        # differentiating the constant 1: every derivative sum is 0 on the set
        orders = [(1, 0, 0), (0, 1, 0), (2, 0, 0), (1, 1, 0), (1, 1, 1), (0, 0, 3)]
        for x in interior_points(self.mask, 25, seed=5):
            active = self.cover.cubes_at(x)
            scale = max(1.0, max(abs(pou_eval(self.pou, j, x, (1, 0, 0))) for j in active))
            for order in orders:
                total = sum(pou_eval(self.pou, j, x, order) for j in active)
                allvals = max(abs(pou_eval(self.pou, j, x, order)) for j in active)
                assert abs(total) < 1e-9 * max(1.0, allvals)

    def test_order_cap(self):
        with pytest.raises(UnsupportedOrderError):
            pou_eval(self.pou, 0, self.cover.centers[0], (2, 2, 0))

    def test_p3_scaling(self):
        # |grad^l phi| * ell^l bounded by one constant across cube sizes
        rng = np.random.default_rng(13)
        worst = {1: 0.0, 2: 0.0, 3: 0.0}
        for j in range(0, len(self.cover), max(1, len(self.cover) // 40)):
            ell = self.cover.sides[j]
            for _ in range(12):
                x = self.cover.centers[j] + (rng.random(3) - 0.5) * ell
                for order, l in [((1, 0, 0), 1), ((1, 1, 0), 2), ((1, 1, 1), 3)]:
                    worst[l] = max(worst[l], abs(pou_eval(self.pou, j, x, order)) * ell**l)
        # recorded magnitudes for the shipped bump profile (dilation 2)
        assert worst[1] < 60 and worst[2] < 6000 and worst[3] < 8e5

    def test_cubes_at_brute_force(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            x = rng.random(3)
            got = cubes_at(self.cover, x)
            oracle = []
            for j in range(len(self.cover)):
                d = np.abs(self.cover.wrap(x - self.cover.centers[j]))
                if (d < self.cover.sides[j] / 2).all():
                    oracle.append(j)
            assert got == oracle

    def test_cubes_at_center(self):
        j = 0
        assert j in self.cover.cubes_at(self.cover.centers[j])
