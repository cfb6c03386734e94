import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from conftest import t64
from specmtm.engine import fd_check
from specmtm.ser import (SER, GatingParams, bernstein_basis, bernstein_eval, gate_coefficients,
                         normalize_energy, ser_rebalance, ser_scale)
from specmtm.spectral import Spectrum, amplitude


def binomial_oracle(K, w):
    return np.array([math.comb(K, k) * (1 - w) ** (K - k) * w**k for k in range(K + 1)])


def test_order_two_at_half():
    assert_allclose(bernstein_basis(2, t64(0.5)).numpy(), [0.25, 0.5, 0.25])


@pytest.mark.parametrize("K", [1, 3, 12, 32])
def test_endpoints_are_indicators(K):
    b0 = bernstein_basis(K, t64(0.0)).numpy()
    b1 = bernstein_basis(K, t64(1.0)).numpy()
    assert b0[0] == 1 and not b0[1:].any()
    assert b1[-1] == 1 and not b1[:-1].any()


@pytest.mark.parametrize("K", [1, 2, 5, 12, 20, 32])
def test_matches_binomial_formula(K):
    w = np.linspace(0, 1, 57)
    got = bernstein_basis(K, t64(w)).numpy()
    want = np.stack([binomial_oracle(K, x) for x in w])
    assert_allclose(got, want, atol=1e-13)


def test_partition_of_unity_and_linear_reproduction_on_grid():
    w = t64(np.linspace(0, 1, 1000))
    for K in (1, 2, 4, 8, 12, 16, 24, 32):
        B = bernstein_basis(K, w)
        assert float((B.sum(-1) - 1).abs().max()) <= 1e-12
        k = torch.arange(K + 1, dtype=torch.float64) / K
        assert float(((B * k).sum(-1) - w).abs().max()) <= 1e-12
        assert float(B.min()) >= 0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 32), st.floats(0.0, 1.0))
def test_basis_property(K, w):
    B = bernstein_basis(K, t64(w)).numpy()
    assert (B >= 0).all()
    assert abs(B.sum() - 1) <= 1e-12


def test_invalid_argument_and_order():
    with pytest.raises(ValueError):
        bernstein_basis(3, t64(1.5))
    with pytest.raises(ValueError):
        bernstein_basis(3, t64(-1e-3))
    with pytest.raises(ValueError):
        bernstein_basis(0, t64(0.5))
    with pytest.raises(ValueError):
        bernstein_basis(33, t64(0.5))


def test_normalize_energy_closed_forms():
    assert_allclose(normalize_energy(torch.ones(5, 2, dtype=torch.float64)).numpy(), 0.2)
    out = normalize_energy(t64([[0.0], [math.log(3)]])).numpy()[:, 0]
    assert_allclose(out, [0.25, 0.75], rtol=1e-14)


def test_normalize_energy_matches_direct_softmax(rng):
    a = np.abs(rng.standard_normal((30, 4))) * 10
    e = np.exp(a - a.max(axis=0))
    want = e / e.sum(axis=0)
    got = normalize_energy(t64(a)).numpy()
    assert np.max(np.abs(got - want) / want) <= 1e-12
    assert_allclose(got.sum(axis=0), 1.0, atol=1e-14)


def test_gate_bias_only_and_zero():
    K, S = 4, 6
    a = normalize_energy(torch.rand(S, 1, dtype=torch.float64))[:, 0]
    g = GatingParams(torch.zeros(K + 1, S, dtype=torch.float64), torch.full((K + 1,), 2.5, dtype=torch.float64))
    assert_allclose(gate_coefficients(a, g).numpy(), 2.5)
    g0 = GatingParams(torch.zeros(K + 1, S, dtype=torch.float64), torch.zeros(K + 1, dtype=torch.float64))
    assert_allclose(gate_coefficients(a, g0).numpy(), 0.0)


def test_gate_matches_dense_matvec(rng):
    K, S, d = 5, 9, 3
    W, b = rng.standard_normal((K + 1, S)), rng.standard_normal(K + 1)
    a = rng.random((S, d))
    g = GatingParams(t64(W), t64(b))
    assert_allclose(gate_coefficients(t64(a[:, 0]), g).numpy(), W @ a[:, 0] + b, rtol=1e-14)
    got = gate_coefficients(t64(a), g, channels_last=True).numpy()
    assert_allclose(got, W @ a + b[:, None], rtol=1e-14)


def test_gate_handles_square_profiles(rng):
    # S == d must not confuse the channel and bin axes
    K, S = 3, 4
    W, b = rng.standard_normal((K + 1, S)), rng.standard_normal(K + 1)
    a = rng.random((S, S))
    got = gate_coefficients(t64(a), GatingParams(t64(W), t64(b)), channels_last=True).numpy()
    assert_allclose(got, W @ a + b[:, None], rtol=1e-14)


def test_gate_length_mismatch():
    g = GatingParams(torch.zeros(3, 5), torch.ones(3))
    with pytest.raises(ValueError):
        gate_coefficients(torch.rand(4), g)
    with pytest.raises(ValueError):
        GatingParams(torch.zeros(3, 5), torch.ones(2)).validate()


def _spec(rng, S, d):
    return Spectrum(t64(rng.standard_normal((S, d))), t64(rng.standard_normal((S, d))))


def test_unit_filter_is_identity(rng):
    S, d = 10, 4
    ser = SER(S, order=12).double()
    s = _spec(rng, S, d)
    out = ser(s)
    assert float((out.re - s.re).abs().max()) <= 1e-12
    assert float((out.im - s.im).abs().max()) <= 1e-12


def test_zero_gate_zeroes_output(rng):
    S, d, K = 7, 2, 4
    g = GatingParams(torch.zeros(K + 1, S, dtype=torch.float64), torch.zeros(K + 1, dtype=torch.float64))
    out = ser_rebalance(_spec(rng, S, d), g)
    assert float(out.re.abs().max()) == 0 and float(out.im.abs().max()) == 0


def test_linear_coefficients_reproduce_normalized_amplitude(rng):
    S, d, K = 12, 3, 8
    s = _spec(rng, S, d)
    theta = (torch.arange(K + 1, dtype=torch.float64) / K)[:, None].expand(K + 1, d)
    a_norm = normalize_energy(amplitude(s))
    scale = ser_scale(a_norm, theta)
    assert float((scale - a_norm).abs().max()) <= 1e-12
    out = ser_rebalance(s, coefficients=theta)
    assert_allclose(out.re.numpy(), (a_norm * s.re).numpy(), atol=1e-12)


def test_rebalance_matches_per_channel_oracle(rng):
    S, d, K = 8, 3, 5
    W, b = 0.3 * rng.standard_normal((K + 1, S)), 1 + 0.1 * rng.standard_normal(K + 1)
    s = _spec(rng, S, d)
    out = ser_rebalance(s, GatingParams(t64(W), t64(b)))
    Z = s.to_complex().numpy()
    for c in range(d):
        A = np.abs(Z[:, c])
        e = np.exp(A - A.max())
        An = e / e.sum()
        theta = W @ An + b
        scale = np.array([theta @ binomial_oracle(K, x) for x in An])
        assert_allclose(out.to_complex().numpy()[:, c], scale * Z[:, c], atol=1e-12)


def test_phase_preserved_where_scale_positive(rng):
    S, d, K = 9, 2, 4
    g = GatingParams(t64(0.2 * rng.standard_normal((K + 1, S))), t64(1 + 0.1 * rng.standard_normal(K + 1)))
    s = _spec(rng, S, d)
    out = ser_rebalance(s, g)
    a = normalize_energy(amplitude(s))
    pos = (ser_scale(a, gate_coefficients(a, g, channels_last=True)) > 0).numpy()
    ang_in = np.angle(s.to_complex().numpy())
    ang_out = np.angle(out.to_complex().numpy())
    assert pos.any()
    assert_allclose(ang_out[pos], ang_in[pos], atol=1e-12)


def test_scale_locality_across_channels(rng):
    S, d, K = 6, 3, 3
    g = GatingParams(t64(rng.standard_normal((K + 1, S))), t64(rng.standard_normal(K + 1)))
    s = _spec(rng, S, d)
    re2 = s.re.clone()
    re2[:, 1] += 5.0
    a1 = normalize_energy(amplitude(s))
    a2 = normalize_energy(amplitude(Spectrum(re2, s.im)))
    s1 = ser_scale(a1, gate_coefficients(a1, g, channels_last=True))
    s2 = ser_scale(a2, gate_coefficients(a2, g, channels_last=True))
    assert torch.equal(s1[:, [0, 2]], s2[:, [0, 2]])
    assert not torch.equal(s1[:, 1], s2[:, 1])


def test_negative_scale_is_not_clamped():
    S, K = 4, 2
    g = GatingParams(torch.zeros(K + 1, S, dtype=torch.float64), torch.full((K + 1,), -2.0, dtype=torch.float64))
    s = Spectrum(torch.ones(S, 1, dtype=torch.float64), torch.zeros(S, 1, dtype=torch.float64))
    assert_allclose(ser_rebalance(s, g).re.numpy(), -2.0)


def test_per_channel_gate(rng):
    S, d, K = 5, 3, 2
    ser = SER(S, K, channels=d).double()
    with torch.no_grad():
        ser.b_c[1] = 0.0
    out = ser(_spec(rng, S, d))
    assert float(out.re[:, 1].abs().max()) == 0
    assert float(out.re[:, 0].abs().max()) > 0


def test_bin_count_mismatch(rng):
    with pytest.raises(ValueError, match="bins"):
        SER(6)(_spec(rng, 5, 2))


def test_bernstein_eval_endpoints(rng):
    theta = t64(rng.standard_normal(7))
    assert float(bernstein_eval(theta, t64(0.0))) == float(theta[0])
    assert float(bernstein_eval(theta, t64(1.0))) == float(theta[-1])


def test_gradients_match_finite_differences(rng):
    S, d, K = 6, 2, 4
    ser = SER(S, K).double()
    with torch.no_grad():
        ser.w_c.normal_(0, 0.5)
        ser.b_c.normal_(1, 0.3)
    re = t64(rng.standard_normal((S, d))).requires_grad_(True)
    im = t64(rng.standard_normal((S, d))).requires_grad_(True)
    w = t64(rng.standard_normal((S, d)))

    def loss():
        out = ser(Spectrum(re, im))
        return (out.re * w + out.im * w * 0.5).sum()

    assert fd_check(loss, [ser.w_c, ser.b_c, re, im], probes=40) <= 1e-4
