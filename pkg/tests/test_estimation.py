import math

import numpy as np
import pytest

from sqrs.qcore import ID2, DensityMatrix, projector, tensor
from sqrs.qcore import KET_R
from sqrs.source import NoiseModel, SourceConfig, apply_noise, ideal_singlet
from sqrs.protocol import AliceRecords, Basis, DegenerateBranchError, EveView, eve_view, run_protocol
from sqrs.estimation import (
    BoundaryProbabilityError,
    CenterCfi,
    ClassificationError,
    EmptyGroupError,
    GroupStats,
    ProbabilityModel,
    XorSummary,
    analytic_cfi,
    cfi,
    classify,
    estimate_phase_grid,
    eve_report,
    make_cfi_report,
    model_probability,
    pooled_mle,
    series_cfi_at_center,
    three_point_slope,
    xor_decode,
)

SINGLET_FORMS = {
    "A1": lambda phi: 0.5 * (1 + np.cos(phi)),
    "A2": lambda phi: 0.5 * (1 - np.cos(phi)),
    "A3": lambda phi: 0.5 * (1 + np.sin(phi)),
    "A4": lambda phi: 0.5 * (1 - np.sin(phi)),
}


@pytest.fixture(scope="module")
def singlet_model():
    return ProbabilityModel(ideal_singlet())


def werner_model(p: float) -> ProbabilityModel:
    return ProbabilityModel(apply_noise(ideal_singlet(), NoiseModel(werner_p=p)))


def synthetic_records(rows):
    """rows: (basis_code, s_a, s_b) triples."""
    rows = np.asarray(rows, dtype=np.uint8)
    n = len(rows)
    return AliceRecords(round_id=np.arange(n), basis_code=rows[:, 0],
                        s_a=rows[:, 1], s_b=rows[:, 2],
                        detected=np.ones(n, dtype=bool))


class TestClassify:
    def test_two_rounds_per_label(self):
        rows = [(0, 1, 0), (0, 1, 1), (0, 0, 0), (0, 0, 0),
                (1, 1, 1), (1, 1, 1), (1, 0, 0), (1, 0, 1)]
        groups = classify(synthetic_records(rows))
        assert [g.total for g in groups.values()] == [2, 2, 2, 2]
        assert groups["A1"].n0 == 1 and groups["A1"].n1 == 1
        assert groups["A2"].n0 == 2
        assert groups["A3"].n1 == 2
        assert groups["A4"].p_exp == pytest.approx(0.5)

    def test_counts_conserved(self):
        t = run_protocol(SourceConfig(seed=30), 0.8, 4321)
        groups = classify(t.records)
        assert sum(g.total for g in groups.values()) == 4321

    def test_statistics_at_pi_over_3(self):
        t = run_protocol(SourceConfig(seed=31), np.pi / 3, 100_000)
        groups = classify(t.records)
        n = groups["A1"].total
        sigma = math.sqrt(0.75 * 0.25 / n)
        assert abs(groups["A1"].p_exp - 0.75) <= 3 * sigma

    def test_group_sizes_near_quarter(self):
        n_total = 100_000
        t = run_protocol(SourceConfig(seed=32), 1.0, n_total)
        groups = classify(t.records)
        sigma = math.sqrt(n_total * 0.25 * 0.75)
        for g in groups.values():
            assert abs(g.total - n_total / 4) <= 4 * sigma

    def test_rejects_eve_view(self):
        t = run_protocol(SourceConfig(seed=33), 0.4, 50)
        with pytest.raises(ClassificationError):
            classify(eve_view(t))

    def test_group_stats_validation(self):
        with pytest.raises(ValueError):
            GroupStats(label="A1", n0=-1, n1=2)
        with pytest.raises(EmptyGroupError):
            _ = GroupStats(label="A1", n0=0, n1=0).p_exp


class TestProbabilityModel:
    def test_singlet_reduces_to_closed_forms(self, singlet_model):
        phis = np.linspace(0, np.pi, 1000)
        for label, form in SINGLET_FORMS.items():
            grid = singlet_model.probability_grid(label, phis)
            np.testing.assert_allclose(grid, form(phis), atol=1e-12)

    def test_scalar_path_matches_grid_path(self, singlet_model):
        phis = np.linspace(0, np.pi, 50)
        for label in SINGLET_FORMS:
            grid = singlet_model.probability_grid(label, phis)
            scalar = [singlet_model.probability(label, p) for p in phis]
            np.testing.assert_allclose(scalar, grid, atol=1e-13)

    def test_a4_vanishes_at_half_pi(self, singlet_model):
        assert model_probability(singlet_model, "A4", np.pi / 2) == pytest.approx(
            0.0, abs=1e-12)

    def test_werner_closed_form(self):
        p = 0.91
        model = werner_model(p)
        for phi in np.linspace(0.1, 3.0, 7):
            assert model.probability("A1", phi) == pytest.approx(
                0.5 * (1 + p * np.cos(phi)), abs=1e-12)

    def test_derivative_matches_finite_differences(self, singlet_model):
        h = 1e-6
        for label in SINGLET_FORMS:
            for phi in (0.3, 1.2, 2.8):
                numeric = (singlet_model.probability(label, phi + h)
                           - singlet_model.probability(label, phi - h)) / (2 * h)
                assert singlet_model.derivative(label, phi) == pytest.approx(
                    numeric, abs=1e-8)

    def test_outcome_probabilities_sum_to_one(self, singlet_model):
        # P(s_B=0) + P(s_B=1) = 1 for every group and phase by construction
        for label in SINGLET_FORMS:
            for phi in np.linspace(0, np.pi, 17):
                p = singlet_model.probability(label, phi)
                assert 0.0 <= p <= 1.0

    def test_group_weights_uniform_for_singlet(self, singlet_model):
        for label in SINGLET_FORMS:
            assert singlet_model.group_weight(label) == pytest.approx(0.25, abs=1e-12)

    def test_eve_curve_is_flat_half_for_singlet(self, singlet_model):
        phis = np.linspace(0, np.pi, 100)
        np.testing.assert_allclose(singlet_model.eve_probability(phis), 0.5, atol=1e-12)

    def test_degenerate_branch_raises_on_query(self):
        rho = DensityMatrix(tensor(projector(KET_R), ID2 / 2))
        model = ProbabilityModel(rho)
        with pytest.raises(DegenerateBranchError):
            model.probability("A1", 0.5)  # Alice |L> branch has probability 0
        assert model.probability("A2", 0.0) == pytest.approx(0.5, abs=1e-12)

    def test_unknown_label(self, singlet_model):
        with pytest.raises(KeyError):
            singlet_model.probability("A9", 0.1)


class TestEstimatePhaseGrid:
    def test_invert_cosine_group(self, singlet_model):
        g = GroupStats(label="A1", n0=75, n1=25)
        assert estimate_phase_grid(singlet_model, g) == pytest.approx(
            np.pi / 3, abs=1e-6)

    def test_invert_sine_peak(self, singlet_model):
        g = GroupStats(label="A3", n0=100, n1=0)
        # |P - 1| vanishes on a ~2e-6-wide snapped plateau around pi/2 and
        # ties resolve toward smaller phi, so allow the plateau width
        assert estimate_phase_grid(singlet_model, g) == pytest.approx(
            np.pi / 2, abs=1e-5)

    def test_mirror_tie_breaks_toward_smaller_phase(self, singlet_model):
        # (1 + sin)/2 crosses this level at 0.4 pi and 0.6 pi
        p = 0.5 * (1 + np.sin(0.6 * np.pi))
        g = GroupStats(label="A3", n0=int(round(p * 10**9)), n1=10**9 - int(round(p * 10**9)))
        est = estimate_phase_grid(singlet_model, g)
        assert est == pytest.approx(0.4 * np.pi, abs=1e-4)

    def test_mirror_tie_resolved_by_hint(self, singlet_model):
        p = 0.5 * (1 + np.sin(0.6 * np.pi))
        n0 = int(round(p * 10**9))
        g = GroupStats(label="A3", n0=n0, n1=10**9 - n0)
        est = estimate_phase_grid(singlet_model, g, hint=0.6 * np.pi + 0.03)
        assert est == pytest.approx(0.6 * np.pi, abs=1e-4)

    def test_round_trip_identity_on_interior(self, singlet_model):
        for label in SINGLET_FORMS:
            for phi in np.linspace(0.07, np.pi - 0.07, 21):
                p = singlet_model.probability(label, phi)
                n0 = int(round(p * 10**12))
                g = GroupStats(label=label, n0=n0, n1=10**12 - n0)
                est = estimate_phase_grid(singlet_model, g, hint=phi)
                assert est == pytest.approx(phi, abs=1e-5), (label, phi)

    def test_empty_group_raises(self, singlet_model):
        with pytest.raises(EmptyGroupError):
            estimate_phase_grid(singlet_model, GroupStats(label="A1", n0=0, n1=0))

    def test_estimates_stay_in_range(self, singlet_model):
        for p_exp in (0.0, 1.0, 0.37):
            n0 = int(p_exp * 1000)
            g = GroupStats(label="A2", n0=n0, n1=1000 - n0)
            est = estimate_phase_grid(singlet_model, g)
            assert 0.0 <= est <= np.pi


class TestXorDecode:
    def test_truth_table(self):
        # parity bit s_A ^ s_B ^ 1 is 0 exactly when s_A == s_B ^ 1... i.e.
        # anticorrelated raw bits decode to 0 only when s_A != ... enumerated:
        rows = [(0, 1, 0), (0, 0, 1), (1, 1, 1), (1, 0, 0)]
        out = xor_decode(synthetic_records(rows))
        # (1,0): 1^0^1=0 zero; (0,1): 0^1^1=0 zero; (1,1): 1^1^1=1 one; (0,0): 1 one
        assert out[Basis.PAULI_Y].n_zero == 2 and out[Basis.PAULI_Y].n_one == 0
        assert out[Basis.PAULI_X].n_zero == 0 and out[Basis.PAULI_X].n_one == 2

    def test_fractions_at_pi_over_3(self):
        t = run_protocol(SourceConfig(seed=34), np.pi / 3, 100_000)
        out = xor_decode(t.records)
        n_y = out[Basis.PAULI_Y].total
        sigma_y = math.sqrt(0.75 * 0.25 / n_y)
        assert abs(out[Basis.PAULI_Y].fraction - 0.75) <= 4 * sigma_y
        expected_x = 0.5 * (1 + math.sqrt(3) / 2)  # 0.9330
        n_x = out[Basis.PAULI_X].total
        sigma_x = math.sqrt(expected_x * (1 - expected_x) / n_x)
        assert abs(out[Basis.PAULI_X].fraction - expected_x) <= 4 * sigma_x

    def test_phase_zero_y_fraction_is_one(self):
        t = run_protocol(SourceConfig(seed=35), 0.0, 20_000)
        out = xor_decode(t.records)
        assert out[Basis.PAULI_Y].fraction == 1.0

    def test_agrees_with_classify_route(self, singlet_model):
        t = run_protocol(SourceConfig(seed=36), 1.9, 100_000)
        groups = classify(t.records)
        pooled = pooled_mle(xor_decode(t.records).values(), singlet_model)
        per_group = [estimate_phase_grid(singlet_model, groups[lbl], hint=pooled.phi_hat)
                     for lbl in groups]
        # all invert the same model: agreement within combined noise
        assert abs(np.mean(per_group) - pooled.phi_hat) < 0.02

    def test_rejects_eve_view(self):
        with pytest.raises(ClassificationError):
            xor_decode(EveView(np.arange(2), np.zeros(2, dtype=np.uint8)))


class TestPooledMle:
    def test_exact_fractions_recover_truth(self, singlet_model):
        phi = np.pi / 3
        n = 10**9
        qy = 0.5 * (1 + np.cos(phi))
        qx = 0.5 * (1 + np.sin(phi))
        summaries = [
            XorSummary(Basis.PAULI_Y, n_zero=int(round(qy * n)), n_one=n - int(round(qy * n))),
            XorSummary(Basis.PAULI_X, n_zero=int(round(qx * n)), n_one=n - int(round(qx * n))),
        ]
        est = pooled_mle(summaries, singlet_model)
        assert est.phi_hat == pytest.approx(phi, abs=1e-4)
        assert not est.low_curvature

    def test_y_only_boundary_flagged(self, singlet_model):
        summaries = [XorSummary(Basis.PAULI_Y, n_zero=5000, n_one=0)]
        est = pooled_mle(summaries, singlet_model)
        assert est.phi_hat == pytest.approx(0.0, abs=1e-6)
        assert est.low_curvature

    def test_all_zero_counts_rejected(self, singlet_model):
        with pytest.raises(ValueError):
            pooled_mle([XorSummary(Basis.PAULI_Y, 0, 0)], singlet_model)

    def test_pooled_variance_beats_single_basis(self, singlet_model):
        phi = np.pi / 4
        rng = np.random.default_rng(55)
        n = 2000
        qy = 0.5 * (1 + np.cos(phi))
        qx = 0.5 * (1 + np.sin(phi))
        pooled_est, y_est, x_est = [], [], []
        for _ in range(100):
            ny0 = rng.binomial(n, qy)
            nx0 = rng.binomial(n, qx)
            sy = XorSummary(Basis.PAULI_Y, ny0, n - ny0)
            sx = XorSummary(Basis.PAULI_X, nx0, n - nx0)
            pooled_est.append(pooled_mle([sy, sx], singlet_model).phi_hat)
            y_est.append(pooled_mle([sy], singlet_model).phi_hat)
            x_est.append(pooled_mle([sx], singlet_model).phi_hat)
        assert np.var(pooled_est) <= min(np.var(y_est), np.var(x_est))


class TestThreePointSlope:
    def test_exact_line(self):
        assert three_point_slope(1.0, 0.9, 0.8, 0.0, 0.2, 0.4) == pytest.approx(-0.5)

    def test_cosine_taylor_bound(self):
        phis = np.array([0.1, 0.2, 0.3]) * np.pi
        ps = 0.5 * (1 + np.cos(phis))
        slope = three_point_slope(*ps, *phis)
        analytic = -0.5 * np.sin(0.2 * np.pi)
        # equal spacing: least squares reduces to the central difference
        assert slope == pytest.approx((ps[2] - ps[0]) / (phis[2] - phis[0]), abs=1e-15)
        assert abs(slope - analytic) <= 0.005

    def test_endpoint_noise_sensitivity(self):
        h = 0.3
        eps = 1e-3
        base = three_point_slope(0.9, 0.8, 0.7, 0.0, h, 2 * h)
        worst = three_point_slope(0.9 - eps, 0.8, 0.7 + eps, 0.0, h, 2 * h)
        assert abs(worst - base) <= eps / h + 1e-12

    def test_rejects_unordered_phases(self):
        with pytest.raises(ValueError):
            three_point_slope(1, 2, 3, 0.0, 0.0, 0.1)
        with pytest.raises(ValueError):
            three_point_slope(1, 2, 3, 0.3, 0.2, 0.1)


class TestCfi:
    def test_direct_substitution(self):
        assert cfi(0.5, 0.5) == pytest.approx(1.0, abs=1e-15)

    def test_singlet_identity_with_symbolic_derivative(self, singlet_model):
        for label in SINGLET_FORMS:
            for phi in np.linspace(0.01, np.pi - 0.01, 200):
                assert analytic_cfi(singlet_model, label, phi) == pytest.approx(
                    1.0, abs=1e-9), (label, phi)

    def test_zero_slope_gives_zero(self):
        assert cfi(0.3, 0.0) == 0.0

    def test_boundary_raises_with_context(self):
        with pytest.raises(BoundaryProbabilityError) as exc:
            cfi(1.0, -0.2)
        assert exc.value.p == 1.0
        assert exc.value.dpdphi == -0.2
        with pytest.raises(BoundaryProbabilityError):
            cfi(0.0, 0.1)

    def test_three_point_cfi_converges_to_analytic(self, singlet_model):
        # second-order convergence of the centered three-point estimate
        phi_c = 1.1
        errors = []
        for h in (0.4, 0.2, 0.1, 0.05):
            ps = [singlet_model.probability("A1", phi_c + d) for d in (-h, 0.0, h)]
            slope = three_point_slope(ps[0], ps[1], ps[2], phi_c - h, phi_c, phi_c + h)
            errors.append(abs(cfi(ps[1], slope) - 1.0))
        orders = [math.log2(errors[i] / errors[i + 1]) for i in range(3)]
        assert min(orders) >= 1.9


class TestSeriesCfiAtCenter:
    def test_equal_spacing_matches_hand_formula(self):
        phis = np.linspace(0, np.pi, 11)
        ps = 0.5 * (1 + np.cos(phis))
        res = series_cfi_at_center(phis, ps, 2)
        h = phis[1] - phis[0]
        slope = (ps[3] - ps[1]) / (2 * h)
        assert res.slope == pytest.approx(slope, abs=1e-14)
        assert res.fisher_information == pytest.approx(
            slope**2 / (ps[2] * (1 - ps[2])), abs=1e-12)
        assert not res.substituted and res.used_index == 2

    def test_boundary_probability_substitutes_neighbor(self):
        phis = np.array([0.0, 0.1, 0.2, 0.3, 0.4])
        ps = np.array([1.0, 1.0, 0.9, 0.8, 0.7])
        res = series_cfi_at_center(phis, ps, 1)
        assert res.substituted
        assert res.used_index == 2
        assert isinstance(res, CenterCfi)

    def test_all_boundary_raises(self):
        phis = np.array([0.0, 0.1, 0.2])
        ps = np.array([1.0, 1.0, 1.0])
        with pytest.raises(BoundaryProbabilityError):
            series_cfi_at_center(phis, ps, 1)

    def test_center_needs_neighbors(self):
        with pytest.raises(ValueError):
            series_cfi_at_center([0, 1, 2], [0.5, 0.5, 0.5], 0)
        with pytest.raises(ValueError):
            series_cfi_at_center([0, 1], [0.5, 0.5], 1)


class TestCfiReport:
    def test_asymmetry_ratio_uses_floor(self):
        rep = make_cfi_report({"A1": 0.9, "A2": 0.8, "A3": 1.0, "A4": 0.95},
                              eve_F=0.0, derivative_method="three_point", floor=1e-12)
        assert rep.asymmetry_ratio == pytest.approx(1.0 / 1e-12)

    def test_rejects_bad_method(self):
        with pytest.raises(ValueError):
            make_cfi_report({"A1": 1.0}, 0.1, "finite")

    def test_rejects_negative_f(self):
        with pytest.raises(ValueError):
            make_cfi_report({"A1": -1.0}, 0.1, "analytic")


class TestEveReport:
    def test_exact_balanced_views_give_flat_half(self, singlet_model):
        views = [EveView(np.arange(100), np.array([0, 1] * 50, dtype=np.uint8))
                 for _ in range(11)]
        alice_phases = np.tile(np.linspace(0, np.pi, 11)[:, None], (1, 4))
        rep = eve_report(views, alice_phases, singlet_model, centering=(2, 7))
        np.testing.assert_allclose(rep.p_exp, 0.5, atol=1e-15)
        np.testing.assert_allclose(rep.p_model, 0.5, atol=1e-12)
        for res in rep.cfi_by_center.values():
            assert res.fisher_information == pytest.approx(0.0, abs=1e-20)

    def test_finite_sample_eve_cfi_small(self, singlet_model):
        cfg = SourceConfig(seed=60)
        phis = np.linspace(0, np.pi, 11)
        views = [eve_view(run_protocol(cfg, phi, 100_000, phase_point_id=k))
                 for k, phi in enumerate(phis)]
        alice_phases = np.tile(phis[:, None], (1, 4))
        rep = eve_report(views, alice_phases, singlet_model, centering=(2, 7))
        for res in rep.cfi_by_center.values():
            assert res.fisher_information <= 1e-3

    def test_requires_three_views(self, singlet_model):
        views = [EveView(np.arange(2), np.zeros(2, dtype=np.uint8))] * 2
        with pytest.raises(ValueError):
            eve_report(views, np.zeros((2, 4)), singlet_model)

    def test_phase_matrix_shape_checked(self, singlet_model):
        views = [EveView(np.arange(2), np.zeros(2, dtype=np.uint8))] * 3
        with pytest.raises(ValueError):
            eve_report(views, np.zeros((3, 3)), singlet_model)
