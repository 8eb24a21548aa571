import math

import pytest

from psrlab.errors import StructuralError
from psrlab.theory import EnvSummary, resolve_theory_params


SUMMARY = EnvSummary(rank=2, dim=4, q_a=2, gamma=0.4, n_obs=3, n_actions=2, horizon=2)


def test_zero_knob_rejected():
    with pytest.raises(StructuralError):
        resolve_theory_params(SUMMARY, delta=0.1, c_theory=0.0, mode="online", n_episodes=64)


def test_doubling_knob_scales_linearly():
    a = resolve_theory_params(SUMMARY, delta=0.1, c_theory=0.01, mode="online", n_episodes=64)
    b = resolve_theory_params(SUMMARY, delta=0.1, c_theory=0.02, mode="online", n_episodes=64)
    assert b.beta == pytest.approx(2 * a.beta, rel=1e-12)
    assert b.p_min == pytest.approx(2 * a.p_min, rel=1e-12)
    assert b.lam == pytest.approx(2 * a.lam, rel=1e-12)  # linear in beta
    # alpha rescales through the roots of lambda and beta
    expected_alpha = (
        SUMMARY.q_a * math.sqrt(SUMMARY.horizon * SUMMARY.dim) * math.sqrt(b.lam) / SUMMARY.gamma**2
        + SUMMARY.n_actions * SUMMARY.q_a * math.sqrt(b.beta) / SUMMARY.gamma
    )
    assert b.alpha == pytest.approx(expected_alpha, rel=1e-12)


def test_reference_instance_hand_evaluation():
    delta, c, K = 0.1, 0.01, 64
    params = resolve_theory_params(SUMMARY, delta=delta, c_theory=c, mode="online", n_episodes=K)
    r, d, q, g, O, A, H = 2, 4, 2, 0.4, 3, 2, 2
    oa_pow = (O * A) ** H
    p_min = c * delta / (K * H * oa_pow)
    eps_net = delta / (K * K * H * H * oa_pow)
    log_net = 2 * r * r * O * A * H * H * math.log(O * A / eps_net)
    beta = c * 31.0 * (math.log(K / delta) + log_net)
    stiff = max(math.sqrt(r), q * math.sqrt(H) / g)
    lam = g * A * A * q * beta * stiff / math.sqrt(d * H)
    alpha = q * math.sqrt(H * d) * math.sqrt(lam) / g**2 + A * q * math.sqrt(beta) / g
    assert params.p_min == pytest.approx(p_min, abs=1e-12)
    assert params.beta == pytest.approx(beta, rel=1e-12)
    assert params.lam == pytest.approx(lam, rel=1e-12)
    assert params.alpha == pytest.approx(alpha, rel=1e-12)


def test_offline_mode_needs_coverage_and_iota():
    with pytest.raises(StructuralError):
        resolve_theory_params(SUMMARY, delta=0.1, c_theory=0.01, mode="offline", n_episodes=100)
    params = resolve_theory_params(
        SUMMARY, delta=0.1, c_theory=0.01, mode="offline", n_episodes=100, coverage=4.0, iota=0.25
    )
    stiff = max(math.sqrt(2), 2 * math.sqrt(2) / 0.4)
    lam = 0.4 * 4.0 * params.beta * stiff / (0.25**2 * 2 * math.sqrt(4 * 2))
    assert params.lam == pytest.approx(lam, rel=1e-12)
    alpha = 2 * math.sqrt(4 * 2) * math.sqrt(params.lam) / 0.4**2 + math.sqrt(params.beta) / (0.25 * 0.4)
    assert params.alpha == pytest.approx(alpha, rel=1e-12)


def test_infinite_coverage_rejected():
    with pytest.raises(StructuralError):
        resolve_theory_params(
            SUMMARY,
            delta=0.1,
            c_theory=0.01,
            mode="offline",
            n_episodes=100,
            coverage=math.inf,
            iota=0.25,
        )


def test_parameter_echo_round_trip():
    params = resolve_theory_params(SUMMARY, delta=0.1, c_theory=0.01, mode="online", n_episodes=64)
    echoed = params.to_dict()
    assert set(echoed) == {
        "p_min",
        "beta",
        "lambda",
        "alpha",
        "eps_net",
        "log_net",
        "c_theory",
        "mode",
    }
    assert echoed["lambda"] == params.lam


def test_env_summary_from_model(reference_model):
    summary = EnvSummary.from_model(reference_model, rank=2)
    assert summary.rank == 2
    assert summary.dim == 3
    assert summary.q_a == 1
    assert summary.horizon == 2
    assert 0 < summary.gamma <= 2.0
