import numpy as np
import pytest

from easi_lab.datasets import A_REPRESENTATIVE, SHARES, representative_params
from easi_lab.elasticity import (
    check_concavity,
    compensated_price_semi,
    demographic_semi,
    elasticities,
    elasticity_report,
    engel_curve,
    marshallian_expenditure_semi,
    marshallian_price_semi,
    normalized_slutsky,
    real_expenditure_semi,
    resolve,
)
from easi_lab.errors import SingularJacobian, ZeroShare
from easi_lab.model import EasiParams, EvalPoint, hicksian_shares, solve_marshallian_shares

from conftest import random_points

H = 1e-5


def fd(f, v, h=H):
    """Central differences of a vector function; column k is d f / d v_k."""
    v = np.asarray(v, dtype=float)
    cols = []
    for k in range(v.size):
        e = np.zeros_like(v)
        e[k] = h
        cols.append((f(v + e) - f(v - e)) / (2 * h))
    return np.column_stack(cols)


def close(a, b, rtol=1e-5, atol=1e-9):
    np.testing.assert_allclose(a, b, rtol=rtol, atol=atol)


@pytest.fixture(scope="module")
def points(params4_inter):
    p, z, x = random_points(params4_inter, 20, 77)
    return [EvalPoint(p=p[i], z=z[i], x=x[i]) for i in range(20)]


class TestFiniteDifferences:
    def test_compensated_price(self, params4_inter, points):
        for pt in points:
            r = resolve(pt, params4_inter)
            num = fd(lambda p: hicksian_shares(r.y, p, r.z, None, params4_inter), r.p)
            close(compensated_price_semi(pt, params4_inter), num)

    def test_real_expenditure(self, params4_inter, points):
        for pt in points:
            r = resolve(pt, params4_inter)
            num = fd(lambda y: hicksian_shares(y[0], r.p, r.z, None, params4_inter), [r.y])[:, 0]
            close(real_expenditure_semi(pt, params4_inter), num, rtol=1e-6)

    def test_demographic(self, params4_inter, points):
        for pt in points:
            r = resolve(pt, params4_inter)
            num = fd(lambda z: hicksian_shares(r.y, r.p, z, None, params4_inter), r.z)
            close(demographic_semi(pt, params4_inter), num.T, rtol=1e-6)

    def test_marshallian_expenditure(self, params4_inter, points):
        for pt in points:
            num = fd(lambda x: solve_marshallian_shares(x[0], pt.p, pt.z, None, params4_inter)[0], [pt.x])[:, 0]
            close(marshallian_expenditure_semi(pt, params4_inter), num, rtol=1e-6)

    def test_marshallian_price(self, params4_inter, points):
        for pt in points:
            num = fd(lambda p: solve_marshallian_shares(pt.x, p, pt.z, None, params4_inter)[0], pt.p)
            close(marshallian_price_semi(pt, params4_inter), num)

    def test_printed_form_differs_away_from_base(self, params4_inter, points):
        pt = points[0]
        num = fd(lambda x: solve_marshallian_shares(x[0], pt.p, pt.z, None, params4_inter)[0], [pt.x])[:, 0]
        printed = marshallian_expenditure_semi(pt, params4_inter, form="printed")
        assert np.max(np.abs(printed - num) / np.abs(num)) > 1e-3


class TestAggregation:
    def test_engel_and_cournot(self, params4_inter, points):
        for pt in points:
            r = resolve(pt, params4_inter)
            ope, ee, eps_m = elasticities(pt, params4_inter)
            assert abs(r.w @ ee - 1.0) < 1e-8
            np.testing.assert_allclose(r.w @ eps_m, -r.w, atol=1e-8)
            np.testing.assert_array_equal(ope, np.diag(eps_m))

    def test_column_adding_up(self, params4_inter, points):
        for pt in points:
            assert np.abs(compensated_price_semi(pt, params4_inter).sum(axis=0)).max() < 1e-10
            assert abs(marshallian_expenditure_semi(pt, params4_inter).sum()) < 1e-10
            assert np.abs(marshallian_price_semi(pt, params4_inter).sum(axis=0)).max() < 1e-10

    def test_symmetry(self, params4_inter, points):
        for pt in points:
            G = compensated_price_semi(pt, params4_inter)
            assert np.abs(G - G.T).max() <= 1e-12
            S, _ = normalized_slutsky(G, resolve(pt, params4_inter).w)
            assert np.abs(S - S.T).max() <= 1e-12


class TestRepresentativePoint:
    P = representative_params()
    base = EvalPoint(p=np.zeros(4), z=np.zeros(1), y=0.0)

    def test_gamma_is_A0(self):
        G = compensated_price_semi(self.base, self.P)
        np.testing.assert_array_equal(G, A_REPRESENTATIVE)
        assert G[0, 0] == 0.1054

    def test_real_expenditure(self):
        v = real_expenditure_semi(self.base, self.P)
        assert v[0] == 0.0701
        np.testing.assert_array_equal(v, self.P.b[1])

    def test_demographics(self):
        d = demographic_semi(self.base, self.P)
        np.testing.assert_array_equal(d, self.P.C)
        assert d[0, 0] == 0.0029

    def test_low_percentile_formula(self):
        pt = EvalPoint(p=np.zeros(4), z=np.zeros(1), y=-1.098)
        assert compensated_price_semi(pt, self.P)[0, 0] == pytest.approx(0.1054 - 1.098 * 0.0545, abs=1e-15)
        assert compensated_price_semi(pt, self.P)[0, 0] == pytest.approx(0.0456, abs=5e-5)

    def test_linear_in_y(self):
        lo = compensated_price_semi(EvalPoint(p=np.zeros(4), z=np.zeros(1), y=0.0), self.P)
        hi = compensated_price_semi(EvalPoint(p=np.zeros(4), z=np.zeros(1), y=0.28), self.P)
        np.testing.assert_allclose(hi - lo, 0.28 * self.P.B, atol=1e-16)

    def test_slutsky_formula(self):
        w = SHARES[0]
        S, _ = normalized_slutsky(A_REPRESENTATIVE, w)
        assert S[0, 0] == pytest.approx(0.1054 + 0.58**2 - 0.58, abs=1e-15)

    @pytest.mark.xfail(strict=True, reason="0.1054 + w^2 - w >= -0.1446 for every share, so -0.2499 is unreachable")
    def test_published_slutsky_element(self):
        S, _ = normalized_slutsky(A_REPRESENTATIVE, SHARES[0])
        assert S[0, 0] == pytest.approx(-0.2499, abs=5e-5)

    def test_least_reachable_slutsky_element(self):
        w = np.linspace(0, 1, 100_001)
        assert np.min(0.1054 + w**2 - w) == pytest.approx(-0.1446, abs=1e-8)


class TestConcavity:
    def test_minus_identity(self):
        assert check_concavity(-np.eye(3)).passed

    def test_positive_eigenvalue(self):
        res = check_concavity(np.diag([-1.0, 0.1, -0.5]))
        assert not res.passed
        np.testing.assert_allclose(res.offending, [0.1])

    def test_corner_share(self):
        S, eig = normalized_slutsky(np.zeros((3, 3)), [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(S, np.zeros((3, 3)))
        assert eig.max() <= 0

    def test_concave_calibration_J3(self, params3):
        S, eig = normalized_slutsky(params3.A[0], params3.b[0])
        assert eig.max() <= 1e-10
        # characteristic polynomial oracle
        roots = np.sort(np.roots(np.poly(S)).real)
        np.testing.assert_allclose(eig, roots, atol=1e-10)
        assert check_concavity(S)

    def test_invariant_to_ordering(self, params3):
        S, _ = normalized_slutsky(params3.A[0], params3.b[0])
        perm = [2, 0, 1]
        assert check_concavity(S[np.ix_(perm, perm)]).passed == check_concavity(S).passed

    def test_report_flags_concavity(self, params3):
        rep = elasticity_report(EvalPoint(p=np.zeros(3), z=np.zeros(2), y=0.0), params3)
        assert rep.concave
        d = rep.to_dict()
        assert d["concave"] is True and len(d["own_price_elasticity"]) == 3


class TestForms:
    def test_agree_at_base(self, params3):
        pt = EvalPoint(p=np.zeros(3), z=np.array([0.2, -0.1]), x=0.0)
        np.testing.assert_allclose(
            marshallian_expenditure_semi(pt, params3, "exact"),
            marshallian_expenditure_semi(pt, params3, "printed"),
            atol=1e-16,
        )

    def test_printed_reduces_at_zero_prices(self, params3):
        pt = EvalPoint(p=np.zeros(3), z=np.zeros(2), x=0.3)
        v = real_expenditure_semi(pt, params3)
        np.testing.assert_allclose(marshallian_expenditure_semi(pt, params3, "printed"), 0.7 * v, atol=1e-16)
        np.testing.assert_allclose(marshallian_expenditure_semi(pt, params3, "exact"), v, atol=1e-16)

    def test_unknown_form(self, params3):
        with pytest.raises(ValueError):
            marshallian_expenditure_semi(EvalPoint(p=np.zeros(3), z=np.zeros(2), x=0.0), params3, "other")

    def test_singular_jacobian(self):
        # v = (1, -1) at y = 0, so I + v p' is singular when p1 - p2 = -1
        P = EasiParams(b=[[0.5, 0.5], [1.0, -1.0]], C=np.zeros((0, 2)), D=np.zeros((0, 2)), A=np.zeros((1, 2, 2)), B=np.zeros((2, 2)))
        with pytest.raises(SingularJacobian):
            marshallian_expenditure_semi(EvalPoint(p=np.array([-0.5, 0.5]), z=np.zeros(0), y=0.0), P)


class TestElasticities:
    def test_single_good_limit(self):
        P = EasiParams(b=[[1.0, 0.0], [0.0, 0.0]], C=np.zeros((0, 2)), D=np.zeros((0, 2)), A=np.zeros((1, 2, 2)), B=np.zeros((2, 2)))
        pt = EvalPoint(p=np.zeros(2), z=np.zeros(0), x=0.0)
        with pytest.raises(ZeroShare):
            elasticities(pt, P)
        P2 = EasiParams(b=[[1 - 1e-9, 1e-9]], C=np.zeros((0, 2)), D=np.zeros((0, 2)), A=np.zeros((1, 2, 2)), B=np.zeros((2, 2)))
        ope, ee, _ = elasticities(pt, P2)
        assert ope[0] == pytest.approx(-1.0, abs=1e-8) and ee[0] == pytest.approx(1.0)

    def test_gamma_when_no_income_effect(self, params3):
        P = EasiParams(params3.b[:1], params3.C, np.zeros_like(params3.D), params3.A, np.zeros((3, 3)))
        pt = EvalPoint(p=np.array([0.1, -0.2, 0.05]), z=np.zeros(2), x=0.2)
        np.testing.assert_allclose(marshallian_price_semi(pt, P), compensated_price_semi(pt, P), atol=1e-15)

    def test_quantity_oracle(self, params4_inter, points):
        for pt in points[:5]:
            ope, _, _ = elasticities(pt, params4_inter)
            h = np.log1p(1e-3)
            for i in range(4):
                def logq(dp):
                    p = pt.p.copy()
                    p[i] += dp
                    w, _ = solve_marshallian_shares(pt.x, p, pt.z, None, params4_inter)
                    return pt.x + np.log(w[i]) - p[i]

                num = (logq(h) - logq(-h)) / (2 * h)
                assert num == pytest.approx(ope[i], rel=1e-4)


class TestEngel:
    def test_polynomial_at_zero_z(self, params3):
        x = np.linspace(-1, 1, 11)
        curves = engel_curve(params3, np.zeros(2), None, x)
        expected = sum(params3.b[r] * x[:, None] ** r for r in range(params3.R + 1))
        np.testing.assert_allclose(curves, expected, atol=1e-15)
        np.testing.assert_allclose(curves.sum(axis=1), 1.0, atol=1e-14)

    def test_vertical_shift(self, params3):
        x = np.linspace(-1, 1, 11)
        eps = np.array([0.01, 0.02, -0.03])
        a = engel_curve(params3, [0.1, 0.3], None, x)
        b = engel_curve(params3, [0.1, 0.3], eps, x)
        np.testing.assert_allclose(b - a, np.broadcast_to(eps, a.shape), atol=1e-15)

    def test_matches_hicksian(self, params3):
        x = np.linspace(-1, 1, 7)
        z = np.array([0.3, -0.4])
        curves = engel_curve(params3, z, None, x)
        for k, xk in enumerate(x):
            np.testing.assert_allclose(curves[k], hicksian_shares(xk, np.zeros(3), z, None, params3), atol=1e-14)
