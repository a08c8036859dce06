"""Quota rules, policy network math, and checkpoint round-trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import finite_diff_grad_logp, oracle_policy_forward
from simulseq.stopping import (
    PolicyParams,
    init_policy,
    lag_quota,
    load_checkpoint,
    policy_forward,
    policy_grad_logp,
    save_checkpoint,
    tn_should_stop,
    waitk_quota,
)


class TestLagQuota:
    def test_worked_example(self):
        assert lag_quota(5, 2, 2, terminal=False) == 1

    def test_clamped_at_zero(self):
        assert lag_quota(4, 6, 0, terminal=False) == 0

    def test_terminal_ignores_lag(self):
        assert lag_quota(30, 12, 5, terminal=True) == 188

    def test_negative_lag_rejected(self):
        with pytest.raises(ValueError):
            lag_quota(3, 0, -1, terminal=False)

    @given(eta=st.integers(0, 50), tau=st.integers(0, 50), d=st.integers(0, 10))
    @settings(max_examples=200, deadline=None)
    def test_monotonicity(self, eta, tau, d):
        q = lag_quota(eta, tau, d, terminal=False)
        assert q >= 0
        assert lag_quota(eta, tau, d + 1, terminal=False) <= q
        assert lag_quota(eta, tau + 1, d, terminal=False) <= q
        assert lag_quota(eta + 1, tau, d, terminal=False) >= q


class TestWaitkQuota:
    @given(eta=st.integers(0, 50), tau=st.integers(0, 50), k=st.integers(1, 10),
           terminal=st.booleans())
    @settings(max_examples=200, deadline=None)
    def test_alias_of_lag_minus_one(self, eta, tau, k, terminal):
        assert waitk_quota(k, eta, tau, terminal) == lag_quota(
            eta, tau, k - 1, terminal
        )

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            waitk_quota(0, 3, 0, False)


def _random_params(rng, hidden=16, h1=6, h2=5):
    return PolicyParams(
        W1=rng.normal(size=(hidden, h1)),
        b1=rng.normal(size=h1),
        W2=rng.normal(size=(h1, h2)),
        b2=rng.normal(size=h2),
        W3=rng.normal(size=(h2, 2)),
        b3=rng.normal(size=2),
    )


class TestPolicyForward:
    def test_zero_weights_give_even_split(self):
        p = PolicyParams(
            W1=np.zeros((16, 4)),
            b1=np.zeros(4),
            W2=np.zeros((4, 4)),
            b2=np.zeros(4),
            W3=np.zeros((4, 2)),
            b3=np.zeros(2),
        )
        probs = policy_forward(p, np.ones(16))
        assert probs[0] == pytest.approx(0.5, abs=1e-15)
        assert probs[1] == pytest.approx(0.5, abs=1e-15)

    def test_fresh_policy_is_even(self):
        p = init_policy(16, seed=123)
        probs = policy_forward(p, np.linspace(-1, 1, 16))
        assert probs[0] == pytest.approx(0.5, abs=1e-15)
        assert probs[1] == pytest.approx(0.5, abs=1e-15)

    def test_matches_pure_python_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            p = _random_params(rng)
            z = rng.normal(size=16)
            got = policy_forward(p, z)
            want = oracle_policy_forward(p, z)
            assert got[0] == pytest.approx(want[0], abs=1e-12)
            assert got[1] == pytest.approx(want[1], abs=1e-12)
            assert got[0] + got[1] == pytest.approx(1.0, abs=1e-12)

    def test_shape_mismatch_raises(self):
        p = init_policy(16, seed=0)
        with pytest.raises(ValueError):
            policy_forward(p, np.zeros(5))

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(3)
        p = _random_params(rng)
        shifted = PolicyParams(
            W1=p.W1, b1=p.b1, W2=p.W2, b2=p.b2, W3=p.W3, b3=p.b3 + 11.5
        )
        z = rng.normal(size=16)
        a = policy_forward(p, z)
        b = policy_forward(shifted, z)
        assert a[0] == pytest.approx(b[0], abs=1e-12)


class TestPolicyGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        for trial in range(20):
            p = _random_params(rng, h1=5, h2=4)
            z = rng.normal(size=16)
            action = int(rng.integers(0, 2))
            grad = policy_grad_logp(p, z, action)
            fd = finite_diff_grad_logp(policy_forward, p, z, action)
            for name in ("W1", "b1", "W2", "b2", "W3", "b3"):
                assert np.allclose(
                    getattr(grad, name), fd[name], rtol=1e-4, atol=1e-7
                ), f"{name} mismatch on trial {trial}"

    def test_score_function_identity(self):
        # E[grad log pi] = p_c * grad log p_c + p_s * grad log p_s = 0
        rng = np.random.default_rng(5)
        p = _random_params(rng)
        z = rng.normal(size=16)
        probs = policy_forward(p, z)
        g0 = policy_grad_logp(p, z, 0)
        g1 = policy_grad_logp(p, z, 1)
        for name in ("W1", "b1", "W2", "b2", "W3", "b3"):
            mix = probs[0] * getattr(g0, name) + probs[1] * getattr(g1, name)
            assert np.max(np.abs(mix)) < 1e-10

    def test_zero_input_kills_w1_grad(self):
        rng = np.random.default_rng(9)
        p = _random_params(rng)
        grad = policy_grad_logp(p, np.zeros(16), 1)
        assert np.all(grad.W1 == 0.0)
        assert np.any(grad.b1 != 0.0)


class TestShouldStop:
    def test_greedy_follows_argmax(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            p = _random_params(rng)
            z = rng.normal(size=16)
            probs = policy_forward(p, z)
            decision = tn_should_stop(p, z, mode="greedy")
            assert decision.action == (1 if probs[1] > probs[0] else 0)

    def test_greedy_tie_continues(self):
        p = init_policy(16, seed=0)  # fresh head: exactly 0.5/0.5
        decision = tn_should_stop(p, np.ones(16), mode="greedy")
        assert decision.action == 0

    def test_sample_mode_is_reproducible(self):
        p = _random_params(np.random.default_rng(2))
        z = np.linspace(-1, 1, 16)
        a = [
            tn_should_stop(p, z, mode="sample", rng=np.random.default_rng(40 + i)).action
            for i in range(20)
        ]
        b = [
            tn_should_stop(p, z, mode="sample", rng=np.random.default_rng(40 + i)).action
            for i in range(20)
        ]
        assert a == b

    def test_fresh_policy_samples_evenly(self):
        p = init_policy(16, seed=77)
        rng = np.random.default_rng(123)
        z = np.linspace(-1, 1, 16)
        stops = sum(
            tn_should_stop(p, z, mode="sample", rng=rng).action for _ in range(10_000)
        )
        assert abs(stops / 10_000 - 0.5) < 0.02

    def test_logp_matches_action_probability(self):
        rng = np.random.default_rng(31)
        p = _random_params(rng)
        z = rng.normal(size=16)
        probs = policy_forward(p, z)
        d = tn_should_stop(p, z, mode="greedy")
        assert d.logp == pytest.approx(float(np.log(probs[d.action])), abs=1e-12)
        assert d.p_stop == pytest.approx(probs[1], abs=1e-15)


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        p = init_policy(16, h1=6, h2=5, seed=3)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, p, training_config={"note": "test"})
        loaded, moments, config = load_checkpoint(path)
        for name in ("W1", "b1", "W2", "b2", "W3", "b3"):
            assert np.array_equal(getattr(loaded, name), getattr(p, name))
        assert moments is None
        assert config == {"note": "test"}

    def test_rejects_wrong_shapes(self, tmp_path):
        p = init_policy(16, h1=6, h2=5, seed=3)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, p)
        import json

        obj = json.loads(path.read_text())
        obj["weights"]["b1"] = [0.0]
        path.write_text(json.dumps(obj))
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_init_policy_head_is_zero(self):
        p = init_policy(16, seed=5)
        assert np.all(p.W3 == 0.0)
        assert np.all(p.b3 == 0.0)
        assert np.any(p.W1 != 0.0)

    def test_init_policy_deterministic(self):
        a = init_policy(16, seed=5)
        b = init_policy(16, seed=5)
        c = init_policy(16, seed=6)
        assert np.array_equal(a.W1, b.W1)
        assert not np.array_equal(a.W1, c.W1)
