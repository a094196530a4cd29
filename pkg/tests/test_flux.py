import numpy as np
import pytest

from divsym.fields import PreconditionError, TrigSymField, project_div_free, random_field
from divsym.flux import (
    QuadratureRule,
    eval_A,
    gauss_green_defect_A,
    gauss_green_defect_B,
    grundmann_moeller,
    normal,
    permutation_sign,
    rule_for_degree,
    triangle_moments,
)


def div_free(seed, max_freq=2, amplitude=1.0):
    f = project_div_free(random_field(seed, max_freq, amplitude))
    f.coeffs.pop((0, 0, 0), None)
    return TrigSymField(f.coeffs)


def random_tetra(rng, scale=0.12):
    """Well-shaped tetrahedron at cube-center scale (the cache's regime)."""
    while True:
        center = rng.random(3)
        pts = center + scale * (rng.random((4, 3)) - 0.5)
        vol = abs(np.linalg.det(pts[1:] - pts[0])) / 6.0
        if vol > 0.01 * scale**3:
            return pts


class TestQuadrature:
    def test_exactness(self):
        from math import factorial

        verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
        for s in (0, 1, 2, 5):
            rule = grundmann_moeller(s)
            deg = 2 * s + 1
            pts = rule.points @ verts
            for a in range(deg + 1):
                for b in range(deg + 1 - a):
                    approx = (rule.weights * pts[:, 0] ** a * pts[:, 1] ** b).sum()
                    exact = 2 * factorial(a) * factorial(b) / factorial(a + b + 2)
                    assert abs(approx - exact) < 5e-14

    def test_weights_sum_to_one(self):
        for s in (0, 3, 5):
            assert abs(grundmann_moeller(s).weights.sum() - 1.0) < 1e-12

    def test_permutation_invariant_nodes(self):
        rule = rule_for_degree(10)
        pts = {tuple(np.round(p, 12)) for p in rule.points}
        for perm in ((1, 0, 2), (2, 1, 0), (1, 2, 0)):
            permuted = {tuple(np.round(p[list(perm)], 12)) for p in rule.points}
            assert permuted == pts

    def test_degree_request(self):
        assert rule_for_degree(10).degree >= 10
        assert rule_for_degree(5).degree >= 5


class TestNormal:
    def test_collinear(self):
        assert not normal([0, 0, 0], [1, 1, 1], [2, 2, 2]).any()

    def test_unit_triangle(self):
        nu = normal([1, 0, 0], [0, 0, 0], [0, 1, 0])
        np.testing.assert_allclose(nu, [0, 0, 0.5])

    def test_swap_negates(self):
        rng = np.random.default_rng(0)
        a, b, c = rng.random((3, 3))
        np.testing.assert_allclose(normal(a, b, c), -normal(b, a, c), atol=1e-15)


class TestMoments:
    def test_constant_field_exact(self):
        c = np.diag([2.0, -1.0, 3.0])
        w = TrigSymField({(0, 0, 0): c.astype(complex)})
        tri = np.array([[0.1, 0.2, 0.0], [0.6, 0.1, 0.3], [0.2, 0.8, 0.5]])
        m = triangle_moments(w, *tri, rule_for_degree(10))
        np.testing.assert_allclose(m.B, c @ m.nu, atol=1e-14)

    def test_degenerate_zero(self):
        w = div_free(1)
        m = triangle_moments(w, [0, 0, 0], [0.3, 0.3, 0.3], [0.6, 0.6, 0.6], rule_for_degree(10))
        assert m.degenerate
        assert not m.B.any() and not m.G.any()

    def test_single_mode_vs_refined_subdivision(self):
        # oracle: uniform subdivision of the triangle, refined until stable
        c = np.zeros((3, 3), dtype=complex)
        c[0, 1] = c[1, 0] = 0.3
        c[2, 2] = -0.4j
        w = TrigSymField({(2, 1, 0): c})
        # cube-center scale triangle: the regime the cache actually works in
        tri = np.array([[0.05, 0.1, 0.2], [0.17, 0.13, 0.23], [0.1, 0.21, 0.17]])
        rule = rule_for_degree(10)
        m = triangle_moments(w, *tri, rule)

        def subdivided_flux(depth):
            base = rule_for_degree(4)
            tris = [tri]
            for _ in range(depth):
                nxt = []
                for t in tris:
                    mid = np.array([(t[0] + t[1]) / 2, (t[1] + t[2]) / 2, (t[0] + t[2]) / 2])
                    nxt += [np.array([t[0], mid[0], mid[2]]), np.array([mid[0], t[1], mid[1]]),
                            np.array([mid[2], mid[1], t[2]]), mid]
                tris = nxt
            # with the area-weighted normal, B is the plain flux integral, so
            # coplanar sub-triangle fluxes add up to the parent flux
            total = np.zeros(3)
            for t in tris:
                total += triangle_moments(w, *t, base).B
            return total

        oracle = subdivided_flux(4)
        np.testing.assert_allclose(m.B, oracle, atol=1e-10 * max(1.0, np.abs(oracle).max()))

    def test_eval_A_diagonal_vanishes(self):
        w = div_free(2)
        tri = np.random.default_rng(1).random((3, 3))
        m = triangle_moments(w, *tri, rule_for_degree(10))
        for alpha in range(3):
            assert eval_A(m, [0.2, 0.7, 0.4], alpha, alpha) == 0.0

    def test_eval_A_zero_field(self):
        w = TrigSymField({})
        m = triangle_moments(w, [0, 0, 0], [1, 0, 0], [0, 1, 0], rule_for_degree(4))
        assert eval_A(m, [0.5, 0.5, 0.5], 0, 1) == 0.0

    def test_eval_A_matches_direct_quadrature(self):
        w = div_free(3)
        rng = np.random.default_rng(5)
        tri = rng.random((3, 3))
        y = rng.random(3)
        rule = rule_for_degree(10)
        m = triangle_moments(w, *tri, rule)
        for alpha, beta in ((0, 1), (1, 2), (2, 0)):
            pts = rule.points @ tri
            vals = w.eval_many(pts)
            flux_a = np.einsum("qb,b->q", vals[:, alpha, :], m.nu)
            flux_b = np.einsum("qb,b->q", vals[:, beta, :], m.nu)
            integrand = (y[beta] - pts[:, beta]) * flux_a - (y[alpha] - pts[:, alpha]) * flux_b
            oracle = float(rule.weights @ integrand)
            assert abs(eval_A(m, y, alpha, beta) - oracle) < 1e-12 * max(1.0, abs(oracle))


class TestAntisymmetry:
    def test_B_and_A_all_permutations(self):
        w = div_free(4)
        rng = np.random.default_rng(9)
        rule = rule_for_degree(10)
        for _ in range(50):
            tri = rng.random((3, 3))
            y = rng.random(3)
            base = triangle_moments(w, *tri, rule)
            scale = max(1.0, np.abs(base.B).max())
            for perm in ((0, 1, 2), (1, 0, 2), (1, 2, 0), (2, 1, 0), (0, 2, 1), (2, 0, 1)):
                m = triangle_moments(w, *tri[list(perm)], rule)
                sign = permutation_sign(perm)
                np.testing.assert_allclose(m.B, sign * base.B, atol=1e-13 * scale)
                a_got = eval_A(m, y, 0, 1)
                a_ref = sign * eval_A(base, y, 0, 1)
                assert abs(a_got - a_ref) < 1e-13 * max(1.0, abs(a_ref))

    def test_derivative_identities_exact(self):
        # the affine form makes dA/dy_beta = B_alpha and dA/dy_alpha = -B_beta
        # coefficient identities, not numerical derivatives
        w = div_free(6)
        tri = np.random.default_rng(11).random((3, 3))
        m = triangle_moments(w, *tri, rule_for_degree(10))
        y = np.array([0.3, 0.6, 0.2])
        for alpha, beta in ((0, 1), (1, 2), (2, 0)):
            e_b = np.zeros(3)
            e_b[beta] = 1.0
            lhs = eval_A(m, y + e_b, alpha, beta) - eval_A(m, y, alpha, beta)
            assert lhs == pytest.approx(m.B[alpha], rel=1e-12, abs=1e-13)
            e_a = np.zeros(3)
            e_a[alpha] = 1.0
            lhs = eval_A(m, y + e_a, alpha, beta) - eval_A(m, y, alpha, beta)
            assert lhs == pytest.approx(-m.B[beta], rel=1e-12, abs=1e-13)


class TestGaussGreen:
    def test_constant_closed_surface(self):
        c = np.diag([1.0, 2.0, -3.0]).astype(complex)
        w = TrigSymField({(0, 0, 0): c})
        rng = np.random.default_rng(3)
        tet = rng.random((4, 3))
        for alpha in range(3):
            d = gauss_green_defect_B(w, *tet, alpha, rule_for_degree(4))
            assert abs(d) < 1e-12

    def test_all_points_equal(self):
        w = div_free(7)
        p = np.array([0.3, 0.3, 0.3])
        assert gauss_green_defect_B(w, p, p, p, p, 0, rule_for_degree(4)) == 0.0
        assert gauss_green_defect_A(w, p, p, p, p, [0, 0, 0], 0, 1, rule_for_degree(4)) == 0.0

    def test_non_divfree_rejected(self):
        w = random_field(8, 1, 1.0)
        tet = np.random.default_rng(0).random((4, 3))
        with pytest.raises(PreconditionError):
            gauss_green_defect_B(w, *tet, 0, rule_for_degree(4))

    def test_random_refinement_convergence(self):
        w = div_free(9)
        rng = np.random.default_rng(21)
        scale = w.max_coeff_norm()
        for _ in range(5):
            tet = random_tetra(rng)
            edge = max(np.linalg.norm(tet[i] - tet[j]) for i in range(4) for j in range(i))
            d5 = abs(gauss_green_defect_B(w, *tet, 1, rule_for_degree(5)))
            d10 = abs(gauss_green_defect_B(w, *tet, 1, rule_for_degree(10)))
            assert d10 < 1e-6 * scale * edge**2
            assert d10 <= d5

    def test_A_alpha_equals_beta_zero(self):
        w = div_free(10)
        tet = np.random.default_rng(1).random((4, 3))
        assert gauss_green_defect_A(w, *tet, [0.5, 0.5, 0.5], 1, 1, rule_for_degree(5)) == 0.0
