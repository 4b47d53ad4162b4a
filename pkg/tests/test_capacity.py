import numpy as np
import pytest

from fbcap import matops
from fbcap.capacity import (
    ProbeConfig,
    ar1_capacity_oracle,
    conjecture_probe,
    finite_horizon_capacity,
    output_blocks,
    reachable_basis,
    recover_M,
    stationary_capacity,
    waterfill_nofb,
)
from fbcap.errors import ConsistencyError, NotDetectable, OutOfRange, UnitCircleNoise
from fbcap.kalman import decoder_step
from fbcap.model import Ar1Params, build_model, make_ar1_channel, make_awgn_channel, make_delayed


# -- oracles


def test_oracle_white_noise_is_awgn():
    # beta = 0: P x^2 = 1 - x^2, so x = (1 + P)^-1/2
    for P in (0.5, 1.0, 4.0):
        assert ar1_capacity_oracle(0.0, P) == pytest.approx(0.5 * np.log2(1 + P), abs=1e-12)


def test_oracle_root_satisfies_equation():
    for beta in (0.1, 0.5, 0.9):
        x = 2.0 ** -ar1_capacity_oracle(beta, 1.0)
        assert x * x == pytest.approx((1 - x * x) / (1 + beta * x) ** 2, abs=1e-12)


def test_oracle_monotone():
    betas = np.linspace(0, 0.95, 20)
    c = [ar1_capacity_oracle(b, 1.0) for b in betas]
    assert np.all(np.diff(c) > 0)
    assert ar1_capacity_oracle(0.5, 2.0) > ar1_capacity_oracle(0.5, 1.0)


@pytest.mark.parametrize("beta", [-0.1, 1.0, 2.0])
def test_oracle_out_of_range(beta):
    with pytest.raises(OutOfRange):
        ar1_capacity_oracle(beta, 1.0)


def test_waterfill_white_noise():
    assert waterfill_nofb(Ar1Params(0.0), 1.0) == pytest.approx(0.5 * np.log(2.0), abs=1e-12)


def test_waterfill_high_power_closed_form():
    # when water covers the whole spectrum: C = 1/2 log((P + mean S) / exp(mean log S)),
    # with mean S = q / (1 - beta^2) and mean log S = log q for |beta| < 1
    beta, P = 0.5, 10.0
    expected = 0.5 * np.log(P + 1.0 / (1 - beta ** 2))
    assert waterfill_nofb(Ar1Params(beta), P) == pytest.approx(expected, abs=1e-9)


def test_waterfill_zero_power_and_unit_circle():
    assert waterfill_nofb(Ar1Params(0.5), 0.0) == 0.0
    with pytest.raises(UnitCircleNoise):
        waterfill_nofb(Ar1Params(1.0), 1.0)


def test_waterfill_below_feedback():
    for beta in (0.3, 0.9):
        assert waterfill_nofb(Ar1Params(beta), 1.0) / np.log(2) < ar1_capacity_oracle(beta, 1.0)


# -- stationary program


def test_awgn_half_bit():
    s = stationary_capacity(make_awgn_channel(1.0), 1.0)
    assert s.rate_bits == pytest.approx(0.5, abs=1e-6)
    assert s.Pi[0, 0] == pytest.approx(1.0, abs=1e-6)


def test_awgn_general_snr():
    m = build_model(F=0, G=0, H=0, J=2, W=0, L=0, V=1)
    assert stationary_capacity(m, 3.0).rate_nats == pytest.approx(0.5 * np.log(13.0), abs=1e-8)


def test_zero_power_is_trivial():
    s = stationary_capacity(make_ar1_channel(Ar1Params(0.5)), 0.0)
    assert s.rate_nats == 0.0 and s.solver_status == "trivial"
    assert np.all(s.Gamma == 0) and np.all(s.Pi == 0)


def test_negative_power_rejected():
    with pytest.raises(OutOfRange):
        stationary_capacity(make_awgn_channel(1.0), -1.0)


def test_not_detectable_raises():
    m = build_model(F=2, G=1, H=0, J=1, W=1, L=0, V=1, Sigma1=1)
    with pytest.raises(NotDetectable):
        stationary_capacity(m, 1.0)


@pytest.mark.parametrize("beta", [0.1, 0.5, 0.9])
def test_ar1_matches_oracle(beta):
    s = stationary_capacity(make_ar1_channel(Ar1Params(beta)), 1.0)
    assert s.rate_bits == pytest.approx(ar1_capacity_oracle(beta, 1.0), abs=1e-6)
    assert s.closed_loop_detectable


def test_ar1_beta_zero_is_awgn():
    s = stationary_capacity(make_ar1_channel(Ar1Params(0.0)), 2.0)
    assert s.rate_nats == pytest.approx(0.5 * np.log(3.0), abs=1e-8)


def test_solution_invariants_ar1():
    m = make_ar1_channel(Ar1Params(0.5))
    s = stationary_capacity(m, 1.0)
    assert np.trace(s.Pi) <= 1.0 + 1e-8
    blk = np.block([[s.Pi, s.Gamma], [s.Gamma.T, s.SigmaHat]])
    assert matops.min_eig_sym(blk) >= -1e-7
    assert matops.min_eig_sym(s.Omega - s.Ky @ s.PsiY @ s.Ky.T) >= -1e-7
    PsiY, _, _ = output_blocks(m, s.riccati.Kp, s.riccati.Psi, s.Gamma, s.Pi, s.SigmaHat)
    np.testing.assert_allclose(PsiY, s.PsiY)
    assert s.rate_nats == pytest.approx(
        0.5 * (matops.logdet_pd(s.PsiY) - matops.logdet_pd(s.riccati.Psi)), abs=1e-12)
    assert matops.min_eig_sym(s.M) >= 0
    assert s.solver.kkt_residual <= 1e-6


def test_optimum_is_decoder_fixed_point():
    m = make_ar1_channel(Ar1Params(0.5))
    s = stationary_capacity(m, 1.0)
    d = decoder_step(m, s.riccati, s.Gamma, s.M, s.SigmaHat)
    np.testing.assert_allclose(d.SigmaHat_next, s.SigmaHat, atol=1e-6)


@pytest.mark.parametrize("d", [2, 3])
def test_delay_between_nofb_and_fb(d):
    ar = Ar1Params(0.5)
    fb = stationary_capacity(make_ar1_channel(ar), 1.0).rate_nats
    dl = stationary_capacity(make_delayed(make_ar1_channel(ar), d), 1.0).rate_nats
    nofb = waterfill_nofb(ar, 1.0)
    assert nofb - 1e-6 <= dl <= fb + 1e-6
    assert dl < fb


def test_more_power_more_rate():
    m = make_ar1_channel(Ar1Params(0.7))
    assert stationary_capacity(m, 2.0).rate_nats > stationary_capacity(m, 1.0).rate_nats


def test_unstable_ar1_rate_exceeds_stable():
    lo = stationary_capacity(make_ar1_channel(Ar1Params(0.9)), 1.0).rate_bits
    hi = stationary_capacity(make_ar1_channel(Ar1Params(2.0)), 1.0).rate_bits
    assert hi > lo


def test_gain_property():
    s = stationary_capacity(make_ar1_channel(Ar1Params(0.5)), 1.0)
    np.testing.assert_allclose(s.gain, s.Gamma @ matops.pinv(s.SigmaHat))


# -- helpers


def test_reachable_basis_invariant_subspace():
    F = np.diag([0.5, 0.2, 0.1])
    U = reachable_basis(F, np.array([[1.0], [1.0], [0.0]]))
    assert U.shape[1] == 2
    np.testing.assert_allclose(U @ U.T @ F @ U, F @ U, atol=1e-12)


def test_reachable_basis_empty():
    assert reachable_basis(np.eye(2), np.zeros((2, 1))).shape == (2, 0)


def test_recover_M_consistency_error():
    with pytest.raises(ConsistencyError):
        recover_M(np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1)))


def test_recover_M_clips_roundoff():
    M = recover_M(np.array([[1.0 - 1e-12]]), np.ones((1, 1)), np.ones((1, 1)))
    assert M[0, 0] == 0.0


# -- finite horizon


def test_finite_horizon_awgn_one_step():
    f = finite_horizon_capacity(make_awgn_channel(1.0), 1.0, 1)
    assert f.normalized_rate_bits == pytest.approx(0.5, abs=1e-6)
    assert len(f.per_step) == 1


def test_finite_horizon_two_beats_one():
    m = make_ar1_channel(Ar1Params(0.5))
    c1 = finite_horizon_capacity(m, 1.0, 1).normalized_rate_nats
    c2 = finite_horizon_capacity(m, 1.0, 2).normalized_rate_nats
    assert c2 > c1


def test_finite_horizon_first_gain_vanishes_and_power():
    f = finite_horizon_capacity(make_ar1_channel(Ar1Params(0.5)), 1.0, 5)
    assert np.all(f.per_step[0][0] == 0)
    assert sum(np.trace(Pi) for _, Pi, _ in f.per_step) <= 5.0 + 1e-7
    assert sum(f.per_step_rate_nats) == pytest.approx(f.total_rate_nats, abs=1e-8)


def test_finite_horizon_below_stationary():
    m = make_ar1_channel(Ar1Params(0.5))
    cs = stationary_capacity(m, 1.0).rate_bits
    for n in (1, 3, 8):
        assert finite_horizon_capacity(m, 1.0, n).normalized_rate_bits <= cs + 1e-6


def test_finite_horizon_zero_power_and_bad_n():
    m = make_ar1_channel(Ar1Params(0.5))
    assert finite_horizon_capacity(m, 0.0, 3).total_rate_nats == 0.0
    with pytest.raises(OutOfRange):
        finite_horizon_capacity(m, 1.0, 0)


# -- probe


def test_probe_zero_trials():
    r = conjecture_probe(trials=0)
    assert r.trials == 0 and r.violations == 0 and r.instances == []


def test_probe_small_scalar_run():
    r = conjecture_probe(ProbeConfig(), trials=5, seed=1)
    assert r.violations == 0 and r.failures == []
    assert len(r.rates_bits) == 5 and min(r.rates_bits) > 0


def test_probe_thin_mimo_instance_certified():
    # trial 8 of this draw has a nearly flat feasible set and a dual of
    # size ~1e5 along directions that cancel; it must still certify
    r = conjecture_probe(ProbeConfig(dims=(3, 1, 2)), trials=10, seed=0)
    assert r.failures == [] and r.violations == 0
