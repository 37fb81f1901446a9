import numpy as np
import pytest

from src.core import linalg
from src.core.spinsys import RateConstants, minimal_two_level
from src.core.superop import (
    Kind,
    analytic_propagator,
    anticommutator_superop,
    coherent_superop,
    commutator_superop,
    decoherence_gap,
    equal_rate_factorization_residual,
    haberkorn_superop,
    kinetic_superop,
    measurement_superop,
    sandwich_superop,
)
from src.utils.errors import PhysicsError


class TestBuildingBlocks:
    def test_commutator(self, hermitian, density_matrix):
        a, rho = hermitian(3), density_matrix(3)
        out = commutator_superop(a) @ linalg.vec(rho)
        np.testing.assert_allclose(out, linalg.vec(a @ rho - rho @ a), atol=1e-12)

    def test_anticommutator(self, hermitian, density_matrix):
        a, rho = hermitian(3), density_matrix(3)
        out = anticommutator_superop(a) @ linalg.vec(rho)
        np.testing.assert_allclose(out, linalg.vec(a @ rho + rho @ a), atol=1e-12)

    def test_sandwich(self, singlet_projector_4, density_matrix):
        q, rho = singlet_projector_4, density_matrix(4)
        out = sandwich_superop(q) @ linalg.vec(rho)
        np.testing.assert_allclose(out, linalg.vec(q @ rho @ q), atol=1e-12)


class TestKind:
    def test_parse(self):
        assert Kind.parse("Haberkorn") is Kind.HABERKORN
        assert Kind.parse(Kind.MEASUREMENT) is Kind.MEASUREMENT
        assert Kind.parse("coherent-only") is Kind.COHERENT

    def test_parse_unknown(self):
        with pytest.raises(PhysicsError):
            Kind.parse("lindblad")


class TestSuperoperators:
    def test_shapes_and_kinds(self, four_level_system):
        rates = RateConstants(1.0, 0.5)
        for kind in (Kind.HABERKORN, Kind.MEASUREMENT, Kind.COHERENT):
            superop = kinetic_superop(four_level_system, rates, kind)
            assert superop.matrix.shape == (16, 16)
            assert superop.kind is kind
            assert superop.dim == 4

    def test_haberkorn_apply_matches_master_equation(self, four_level_system, density_matrix):
        sys, rates, rho = four_level_system, RateConstants(0.8, 0.3), density_matrix(4)
        h, qs, qt = sys.hamiltonian, sys.q_singlet, sys.q_triplet
        expected = -1j * (h @ rho - rho @ h) - 0.4 * (qs @ rho + rho @ qs) - 0.15 * (qt @ rho + rho @ qt)
        np.testing.assert_allclose(haberkorn_superop(sys, rates).apply(rho), expected, atol=1e-12)

    def test_measurement_apply_matches_master_equation(self, four_level_system, density_matrix):
        sys, rates, rho = four_level_system, RateConstants(0.8, 0.3), density_matrix(4)
        h, qs, qt = sys.hamiltonian, sys.q_singlet, sys.q_triplet
        expected = -1j * (h @ rho - rho @ h) - 1.1 * rho + 0.8 * qt @ rho @ qt + 0.3 * qs @ rho @ qs
        np.testing.assert_allclose(measurement_superop(sys, rates).apply(rho), expected, atol=1e-12)

    def test_zero_rates_reduce_to_coherent(self, four_level_system):
        coherent = coherent_superop(four_level_system).matrix
        np.testing.assert_allclose(haberkorn_superop(four_level_system, RateConstants()).matrix, coherent)
        np.testing.assert_allclose(measurement_superop(four_level_system, RateConstants()).matrix, coherent)

    def test_trace_loss(self, four_level_system, density_matrix):
        sys, rates, rho = four_level_system, RateConstants(1.2, 0.4), density_matrix(4)
        loss = 1.2 * np.trace(sys.q_singlet @ rho) + 0.4 * np.trace(sys.q_triplet @ rho)
        for kind in (Kind.HABERKORN, Kind.MEASUREMENT):
            drho = kinetic_superop(sys, rates, kind).apply(rho)
            assert abs(np.trace(drho) + loss) < 1e-12

    def test_propagator(self):
        superop = haberkorn_superop(minimal_two_level(0.0), RateConstants(1.0, 2.0))
        np.testing.assert_allclose(superop.propagator(0.0), np.eye(4), atol=1e-15)


class TestDecoherenceGap:
    @pytest.mark.parametrize("k_s,k_t", [(0.0, 0.0), (1.0, 2.0), (0.0, 100.0), (3.5, 0.2)])
    def test_two_level(self, k_s, k_t):
        _, residual = decoherence_gap(minimal_two_level(1.0), RateConstants(k_s, k_t))
        assert residual <= 1e-10

    def test_four_level(self, four_level_system):
        _, residual = decoherence_gap(four_level_system, RateConstants(1.7, 0.6))
        assert residual <= 1e-10

    def test_gap_only_touches_coherences(self):
        gap, _ = decoherence_gap(minimal_two_level(0.0), RateConstants(1.0, 2.0))
        np.testing.assert_allclose(gap, np.diag([0.0, 1.5, 1.5, 0.0]), atol=1e-15)


class TestAnalyticPropagator:
    @pytest.mark.parametrize("kind", [Kind.HABERKORN, Kind.MEASUREMENT])
    @pytest.mark.parametrize("t", [0.0, 0.3, 2.0, 7.5])
    def test_matches_expm(self, kind, t):
        rates = RateConstants(1.0, 2.0)
        sys = minimal_two_level(0.0)
        numeric = kinetic_superop(sys, rates, kind).propagator(t)
        np.testing.assert_allclose(analytic_propagator(kind, rates, t, sys), numeric, atol=1e-12)

    @pytest.mark.parametrize("kind", [Kind.HABERKORN, Kind.MEASUREMENT])
    def test_random_rate_pairs(self, rng, kind):
        sys = minimal_two_level(0.0)
        for k_s, k_t in rng.uniform(0.0, 3.0, size=(20, 2)):
            rates = RateConstants(k_s, k_t)
            superop = kinetic_superop(sys, rates, kind)
            for t in (0.1, 1.0, 10.0):
                np.testing.assert_allclose(analytic_propagator(kind, rates, t, sys), superop.propagator(t), atol=1e-12)

    def test_coherence_rates(self):
        rates = RateConstants(1.0, 2.0)
        h = analytic_propagator("haberkorn", rates, 1.0)
        m = analytic_propagator("measurement", rates, 1.0)
        assert h[1, 1] == pytest.approx(np.exp(-1.5))
        assert m[1, 1] == pytest.approx(np.exp(-3.0))
        # populations agree
        assert h[0, 0] == m[0, 0] and h[3, 3] == m[3, 3]

    def test_negative_time(self):
        with pytest.raises(PhysicsError):
            analytic_propagator(Kind.HABERKORN, RateConstants(1.0, 1.0), -0.1)

    def test_coherent_kind(self):
        with pytest.raises(PhysicsError):
            analytic_propagator(Kind.COHERENT, RateConstants(), 1.0)

    def test_needs_zero_hamiltonian(self):
        with pytest.raises(PhysicsError):
            analytic_propagator(Kind.HABERKORN, RateConstants(1.0, 1.0), 1.0, minimal_two_level(1.0))

    def test_needs_two_levels(self, four_level_system):
        with pytest.raises(PhysicsError):
            analytic_propagator(Kind.HABERKORN, RateConstants(1.0, 1.0), 1.0, four_level_system)


class TestEqualRateFactorization:
    def test_haberkorn_factorizes(self, four_level_system):
        times = np.linspace(0.0, 3.0, 7)
        assert equal_rate_factorization_residual(four_level_system, 0.9, times) <= 1e-10

    def test_measurement_does_not(self):
        times = np.linspace(0.0, 2.0, 5)
        assert equal_rate_factorization_residual(minimal_two_level(1.0), 1.0, times, kind=Kind.MEASUREMENT) > 1e-3
