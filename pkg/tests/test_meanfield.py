"""Recurrences and closed-form statistics against hand-iterated values."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fimstats.errors import CriticalRateUndefinedError
from fimstats.meanfield import (MacroState, NetworkShape, TheoryStats, backward_recurrence,
                                eigencount_bound, fisher_rao_theory, forward_recurrence,
                                high_dim_output_bounds, macro_state, make_shape,
                                theory_stats)

LINEAR_SHAPE = make_shape(L=3, M=1000, C=1, sigma_w2=1.0, sigma_b2=0.1, activation="linear")


class TestForwardRecurrence:
    def test_linear_hand_iteration(self):
        # qhat_{l+1} = sw2*qhat_l + sb2 starting from (1, 0)
        mac = forward_recurrence(LINEAR_SHAPE)
        assert mac.qhat == pytest.approx([1.0, 1.1, 1.2], abs=1e-15)
        assert mac.qhat_st == pytest.approx([0.0, 0.1, 0.2], abs=1e-15)
        assert mac.q == pytest.approx([1.1, 1.2, 1.3], abs=1e-15)
        assert mac.q_st == pytest.approx([0.1, 0.2, 0.3], abs=1e-15)

    def test_relu_half_rule(self):
        shape = make_shape(L=3, M=64, C=1, sigma_w2=2.0, sigma_b2=0.1, activation="relu")
        mac = forward_recurrence(shape)
        assert mac.qhat[1] == pytest.approx(1.05, abs=1e-14)
        assert mac.qhat[2] == pytest.approx(1.10, abs=1e-14)

    def test_zero_input_zero_bias_relu_collapses(self):
        shape = make_shape(L=4, M=32, C=1, sigma_w2=2.0, sigma_b2=0.0, activation="relu")
        mac = forward_recurrence(shape, qhat0=0.0, qhat_st0=0.0)
        assert np.all(mac.qhat == 0.0)

    def test_wiring_identity(self):
        # q_{l+1} = sw2 qhat_l + sb2 holds entrywise by construction
        shape = make_shape(L=5, M=16, C=2, sigma_w2=1.7, sigma_b2=0.3, activation="erf")
        mac = forward_recurrence(shape, qhat0=1.4, qhat_st0=0.6)
        for l in range(shape.L):
            assert mac.q[l] == pytest.approx(1.7 * mac.qhat[l] + 0.3, abs=1e-14)

    def test_precondition(self):
        with pytest.raises(ValueError):
            forward_recurrence(LINEAR_SHAPE, qhat0=0.5, qhat_st0=0.8)


class TestBackwardRecurrence:
    def test_linear_unit_weights(self):
        mac = macro_state(LINEAR_SHAPE)
        assert mac.qtil == pytest.approx([1.0, 1.0, 1.0], abs=0)
        assert mac.qtil_st == pytest.approx([1.0, 1.0, 1.0], abs=0)

    def test_relu_sigma2_is_neutral(self):
        shape = make_shape(L=3, M=64, C=1, sigma_w2=2.0, sigma_b2=0.1, activation="relu")
        mac = macro_state(shape)
        assert mac.qtil == pytest.approx([1.0, 1.0, 1.0], abs=1e-14)

    @pytest.mark.parametrize("act", ["erf", "relu", "linear", "tanh"])
    def test_output_boundary(self, act):
        shape = make_shape(L=4, M=32, C=3, sigma_w2=1.3, sigma_b2=0.2, activation=act)
        mac = macro_state(shape)
        assert mac.qtil[-1] == 1.0
        assert mac.qtil_st[-1] == 1.0

    def test_erf_closed_form_chain(self):
        # qtil_l = 2 sw2 qtil_{l+1} / (pi sqrt(q_l + 1/4))
        shape = make_shape(L=3, M=64, C=1, sigma_w2=3.0, sigma_b2=0.64, activation="erf")
        mac = macro_state(shape)
        expected = 2 * 3.0 / (np.pi * np.sqrt(mac.q[1] + 0.25))
        assert mac.qtil[1] == pytest.approx(expected, rel=1e-12)


class TestTheoryStats:
    def test_linear_benchmark(self):
        stats = theory_stats(LINEAR_SHAPE, macro_state(LINEAR_SHAPE), T=100)
        assert stats.kappa1 == pytest.approx(1.65, abs=1e-12)
        assert stats.kappa2 == pytest.approx(0.15, abs=1e-12)
        assert stats.mean_eig == pytest.approx(1.65e-3, abs=1e-15)
        assert stats.max_eig == pytest.approx(2 * (0.99 * 0.15 + 0.01 * 1.65) * 1000, rel=1e-12)

    def test_identities_are_definitions(self):
        # the three formulas must hold bit-for-bit given the kappas
        shape = make_shape(L=4, M=256, C=3, sigma_w2=1.4, sigma_b2=0.25, activation="erf")
        T = 37
        stats = theory_stats(shape, macro_state(shape), T=T, mu=0.45)
        C, M, alpha = shape.C, shape.base_width, shape.alpha
        assert stats.mean_eig == C * stats.kappa1 / M
        assert stats.second_moment == C * alpha * ((T - 1) / T * stats.kappa2**2
                                                   + stats.kappa1**2 / T)
        assert stats.max_eig == alpha * ((T - 1) / T * stats.kappa2 + stats.kappa1 / T) * M
        assert stats.critical_lr == 2 * (1 + 0.45) / stats.max_eig

    def test_single_sample_limit(self):
        stats = theory_stats(LINEAR_SHAPE, macro_state(LINEAR_SHAPE), T=1)
        assert stats.second_moment == pytest.approx(2 * 1.65**2, rel=1e-12)
        assert stats.max_eig == pytest.approx(2 * 1.65 * 1000, rel=1e-12)

    def test_momentum_scales_critical_rate(self):
        mac = macro_state(LINEAR_SHAPE)
        lr0 = theory_stats(LINEAR_SHAPE, mac, T=100, mu=0.0).critical_lr
        lr9 = theory_stats(LINEAR_SHAPE, mac, T=100, mu=0.9).critical_lr
        assert lr9 == pytest.approx(1.9 * lr0, rel=1e-12)

    def test_degenerate_network_raises(self):
        shape = make_shape(L=3, M=16, C=1, sigma_w2=2.0, sigma_b2=0.0, activation="relu")
        mac = macro_state(shape, qhat0=0.0)
        with pytest.raises(CriticalRateUndefinedError):
            theory_stats(shape, mac, T=10)

    def test_no_bias_odd_activation_flagged(self):
        shape = make_shape(L=3, M=64, C=1, sigma_w2=1.2, sigma_b2=0.0, activation="erf")
        stats = theory_stats(shape, macro_state(shape), T=50)
        assert stats.kappa2 == pytest.approx(0.0, abs=1e-15)
        assert not stats.leading_order_reliable

    def test_kappa1_dominates_kappa2(self):
        for act in ("erf", "relu", "linear", "tanh"):
            shape = make_shape(L=4, M=64, C=1, sigma_w2=1.8, sigma_b2=0.3, activation=act)
            stats = theory_stats(shape, macro_state(shape), T=20)
            assert stats.kappa1 >= stats.kappa2 - 1e-12


class TestFisherRao:
    def test_uniform_width_equality(self):
        fr = fisher_rao_theory(LINEAR_SHAPE, 1.65)
        assert fr["upper_bound"] == pytest.approx(3.3, rel=1e-12)
        assert fr["uniform_width_value"] == pytest.approx(3.3, rel=1e-12)

    def test_nonuniform_bound_exceeds_uniform_value(self):
        # hidden width coefficients (1, 2, 1)
        shape = make_shape(L=4, M=100, C=1, sigma_w2=1.0, sigma_b2=0.1,
                           activation="linear", hidden_widths=(100, 200, 100))
        stats = theory_stats(shape, macro_state(shape), T=10)
        assert shape.alpha == pytest.approx(5.0)
        fr = fisher_rao_theory(shape, stats.kappa1)
        assert fr["upper_bound"] >= fr["uniform_width_value"]


class TestBounds:
    def test_eigencount_large_threshold_vanishes(self):
        stats = theory_stats(LINEAR_SHAPE, macro_state(LINEAR_SHAPE), T=100)
        assert eigencount_bound(stats, LINEAR_SHAPE, 1e12, 100) < 1e-5

    def test_eigencount_linear_benchmark(self):
        stats = theory_stats(LINEAR_SHAPE, macro_state(LINEAR_SHAPE), T=100)
        assert eigencount_bound(stats, LINEAR_SHAPE, 1.0, 100) == 100.0
        # the Markov branch: alpha kappa1 C M / k = 3300 at k = 1
        assert eigencount_bound(stats, LINEAR_SHAPE, 100.0, 100) == pytest.approx(33.0)

    def test_eigencount_small_threshold_uses_ct(self):
        stats = theory_stats(LINEAR_SHAPE, macro_state(LINEAR_SHAPE), T=3)
        assert eigencount_bound(stats, LINEAR_SHAPE, 1e-9, 3) == 3.0

    def test_high_dim_intervals_collapse_at_c1(self):
        stats = theory_stats(LINEAR_SHAPE, macro_state(LINEAR_SHAPE), T=100)
        bounds = high_dim_output_bounds(stats, LINEAR_SHAPE)
        assert bounds["s_range"][0] == bounds["s_range"][1]
        assert bounds["lmax_range"][0] <= bounds["lmax_range"][1]

    def test_high_dim_zero_second_moment(self):
        stats = TheoryStats(kappa1=0.0, kappa2=0.0, mean_eig=0.0, second_moment=0.0,
                            max_eig=1.0, fisher_rao_upper=0.0, fisher_rao_uniform=0.0,
                            critical_lr=1.0, T=1, mu=0.0)
        bounds = high_dim_output_bounds(stats, LINEAR_SHAPE)
        assert bounds["s_range"] == (0.0, 0.0)
        assert bounds["lmax_range"][1] == 0.0


class TestShapeValidation:
    def test_sigma_w2_zero_forbidden(self):
        with pytest.raises(ValueError):
            make_shape(L=3, M=8, C=1, sigma_w2=0.0, sigma_b2=0.1)

    def test_minimum_depth(self):
        with pytest.raises(ValueError):
            NetworkShape((4, 1), 4, (1.0,), (0.0,), ())

    def test_per_layer_sigmas_and_mixed_activations(self):
        shape = make_shape(L=3, M=16, C=1, sigma_w2=[1.0, 2.0, 0.5],
                           sigma_b2=[0.1, 0.0, 0.2], activation=["relu", "erf"])
        mac = macro_state(shape)
        assert mac.q[0] == pytest.approx(1.0 * 1.0 + 0.1)
        assert mac.q[1] == pytest.approx(2.0 * mac.qhat[1] + 0.0)
        stats = theory_stats(shape, mac, T=10)
        assert np.isnan(stats.fisher_rao_uniform)  # closed form needs uniform sw2


class TestRecurrenceProperties:
    def test_linear_fixed_point_geometric(self):
        # sw2 < 1: qhat converges geometrically to sb2/(1-sw2)
        sw2, sb2, L = 0.8, 0.3, 30
        shape = make_shape(L=L, M=8, C=1, sigma_w2=sw2, sigma_b2=sb2, activation="linear")
        mac = forward_recurrence(shape)
        target = sb2 / (1 - sw2)
        closed = sw2 ** np.arange(L) * (1.0 - target) + target
        assert mac.qhat == pytest.approx(closed, rel=1e-12)
        gaps = np.abs(mac.qhat - target)
        assert np.all(gaps[1:] <= sw2 * gaps[:-1] + 1e-15)

    @settings(max_examples=30, deadline=None)
    @given(sw2=st.floats(0.2, 3.0), sb2=st.floats(0.0, 1.0),
           qhat0=st.floats(0.1, 3.0), frac=st.floats(-1.0, 1.0),
           act=st.sampled_from(["erf", "relu", "linear", "tanh"]),
           L=st.integers(2, 5))
    def test_cauchy_schwarz_all_layers(self, sw2, sb2, qhat0, frac, act, L):
        shape = make_shape(L=L, M=8, C=1, sigma_w2=sw2, sigma_b2=sb2, activation=act)
        mac = macro_state(shape, qhat0=qhat0, qhat_st0=frac * qhat0)
        assert np.all(np.abs(mac.qhat_st) <= mac.qhat + 1e-10)
        assert np.all(np.abs(mac.qtil_st) <= mac.qtil + 1e-10)
