import numpy as np
import pytest

from framepipe.context import ContextKind, PublicContext
from framepipe.errors import (IncompleteGeneration, KindMismatch, SequenceComplete,
                              ShapeMismatch)
from framepipe.policy import (ACTION_TOKEN_COUNT, Observation, decode_action_tokens,
                              encode_action_tokens, make_autoregressive_policy,
                              make_conditioning_policy, scripted_ar_policy)


def obs(frame, target, agent):
    return Observation(frame=frame, vector=np.array([*target, *agent], dtype=float))


def cond_ctx(h, frame=0):
    return PublicContext(kind=ContextKind.CONDITIONING, conditioning=np.asarray(h, float),
                         source_observation_id=frame, produced_frame=frame)


class TestPerception:
    def test_displacement_context(self):
        policy = make_conditioning_policy()
        ctx = policy.perception.perceive(obs(3, (2.0, 1.0), (0.5, 0.5)))
        assert ctx.kind == ContextKind.CONDITIONING
        assert np.allclose(ctx.conditioning, [1.5, 0.5])
        assert ctx.source_observation_id == 3

    def test_zero_displacement(self):
        policy = make_conditioning_policy()
        ctx = policy.perception.perceive(obs(0, (1.0, -1.0), (1.0, -1.0)))
        assert np.array_equal(ctx.conditioning, np.zeros(2))

    def test_shape_mismatch(self):
        policy = make_conditioning_policy()
        with pytest.raises(ShapeMismatch):
            policy.perception.perceive(Observation(frame=0, vector=np.zeros(3)))

    def test_staged_equals_monolithic(self):
        policy = make_conditioning_policy(layer_costs=(3.0, 5.0, 2.0, 4.0))
        o = obs(1, (0.3, 0.7), (-0.2, 0.1))
        whole = policy.perception.perceive(o)
        for cut in (1, 2, 3):
            latent = policy.perception.start(o)
            latent = policy.perception.apply_layers(latent, 0, cut)
            latent = policy.perception.apply_layers(latent, cut, 4)
            staged = policy.perception.finalize(latent, o)
            assert np.array_equal(staged.conditioning, whole.conditioning)

    def test_layer_costs_positive(self):
        with pytest.raises(ValueError):
            make_conditioning_policy(layer_costs=(1.0, 0.0))


class TestRefinementGeneration:
    def test_one_step_linear_update(self):
        policy = make_conditioning_policy(eta=0.1)
        state = policy.generation.initial_state()
        state = policy.generation.step(state, cond_ctx([1.0, 0.0]))
        assert np.allclose(state.vector, [0.1, 0.0])

    def test_closed_form_after_k_steps(self):
        eta, k = 0.08, 37
        policy = make_conditioning_policy(eta=eta)
        target = np.array([0.4, -0.9])
        state = policy.generation.initial_state()
        ctx = cond_ctx(target)
        for _ in range(k):
            state = policy.generation.step(state, ctx)
        expected = target * (1.0 - (1.0 - eta) ** k)
        assert np.allclose(state.vector, expected, rtol=1e-12)

    def test_fixed_point(self):
        policy = make_conditioning_policy(eta=0.3)
        target = np.array([0.2, 0.5])
        state = policy.generation.initial_state()
        state.vector = target.copy()
        state = policy.generation.step(state, cond_ctx(target))
        assert np.allclose(state.vector, target)

    def test_context_switch_closed_form(self):
        # after k steps on c1, the remaining n-k steps on c2 land at
        # c2 + beta^(n-k) * ((1 - beta^k) c1 - c2)
        eta, n, k = 0.08, 100, 30
        beta = 1.0 - eta
        policy = make_conditioning_policy(eta=eta, n_iterations=n, max_action=10.0)
        c1, c2 = np.array([1.0, 0.5]), np.array([-0.3, 0.8])
        state = policy.generation.initial_state()
        for _ in range(k):
            state = policy.generation.step(state, cond_ctx(c1))
        for _ in range(n - k):
            state = policy.generation.step(state, cond_ctx(c2))
        expected = c2 + beta ** (n - k) * ((1.0 - beta ** k) * c1 - c2)
        assert np.allclose(state.vector, expected, rtol=1e-12)

    def test_later_context_dominance_monotone(self):
        eta, n = 0.08, 100
        policy = make_conditioning_policy(eta=eta, n_iterations=n, max_action=10.0)
        c1, c2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        dist_prev = None
        for k in (80, 60, 40, 20):
            state = policy.generation.initial_state()
            for _ in range(k):
                state = policy.generation.step(state, cond_ctx(c1))
            for _ in range(n - k):
                state = policy.generation.step(state, cond_ctx(c2))
            dist = float(np.linalg.norm(state.vector - c2))
            if dist_prev is not None:
                assert dist < dist_prev  # more fresh steps pull strictly closer
            dist_prev = dist

    def test_kind_mismatch(self):
        policy = make_conditioning_policy()
        ar_policy = make_autoregressive_policy()
        ar_ctx = ar_policy.perception.perceive(obs(0, (0.1, 0.0), (0.0, 0.0)))
        with pytest.raises(KindMismatch):
            policy.generation.step(policy.generation.initial_state(), ar_ctx)

    def test_finish_clips_norm(self):
        policy = make_conditioning_policy(max_action=1.0)
        state = policy.generation.initial_state()
        state.vector = np.array([3.0, 4.0])
        state.steps = policy.generation.n_iterations
        action = policy.generation.finish(state)
        assert np.allclose(action.as_vector(), [0.6, 0.8])

    def test_finish_below_clip_untouched(self):
        policy = make_conditioning_policy(max_action=1.0)
        state = policy.generation.initial_state()
        state.vector = np.array([0.1, 0.0])
        state.steps = policy.generation.n_iterations
        assert np.allclose(policy.generation.finish(state).as_vector(), [0.1, 0.0])

    def test_finish_requires_all_iterations(self):
        policy = make_conditioning_policy()
        state = policy.generation.initial_state()
        state = policy.generation.step(state, cond_ctx([0.1, 0.1]))
        with pytest.raises(IncompleteGeneration):
            policy.generation.finish(state)

    def test_full_rollout_matches_clip_of_closed_form(self):
        eta, n = 0.08, 100
        policy = make_conditioning_policy(eta=eta, n_iterations=n, max_action=0.5)
        target = np.array([0.9, 0.1])
        ctx = cond_ctx(target)
        state = policy.generation.initial_state()
        for _ in range(n):
            state = policy.generation.step(state, ctx)
        action = policy.generation.finish(state).as_vector()
        raw = target * (1.0 - (1.0 - eta) ** n)
        expected = raw * (0.5 / np.linalg.norm(raw))
        assert np.allclose(action, expected, rtol=1e-12)

    def test_noise_init_deterministic_per_seed(self):
        policy = make_conditioning_policy(noise_init=True)
        a = policy.generation.initial_state(seed=5).vector
        b = policy.generation.initial_state(seed=5).vector
        c = policy.generation.initial_state(seed=6).vector
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestTokenPolicy:
    def test_zero_displacement_is_all_zero_buckets(self):
        tokens = encode_action_tokens((0.0, 0.0), max_action=0.8)
        assert tokens == (0,) * ACTION_TOKEN_COUNT

    def test_roundtrip_within_one_bucket(self):
        max_action = 0.8
        width = max_action / 63
        grid = np.linspace(-max_action, max_action, 23)
        for dx in grid:
            for dy in grid:
                tokens = encode_action_tokens((dx, dy), max_action)
                back = decode_action_tokens(tokens, max_action)
                assert abs(back[0] - dx) <= width
                assert abs(back[1] - dy) <= width

    def test_out_of_range_displacement_saturates(self):
        back = decode_action_tokens(encode_action_tokens((5.0, -5.0), 0.8), 0.8)
        assert np.allclose(back, [0.8, -0.8])

    def test_scripted_policy_deterministic(self):
        policy = make_autoregressive_policy(max_action=0.8)
        ctx = policy.perception.perceive(obs(0, (0.3, -0.2), (0.0, 0.0)))
        t1 = scripted_ar_policy(ctx, 0.8)
        t2 = scripted_ar_policy(ctx, 0.8)
        assert t1 == t2

    def test_scripted_policy_sequence_complete(self):
        policy = make_autoregressive_policy(max_action=0.8)
        ctx = policy.perception.perceive(obs(0, (0.3, -0.2), (0.0, 0.0)))
        full = ctx.with_action_tokens(encode_action_tokens((0.3, -0.2), 0.8))
        with pytest.raises(SequenceComplete):
            scripted_ar_policy(full, 0.8)

    def test_generation_collects_schema_tokens(self):
        policy = make_autoregressive_policy(max_action=0.8)
        ctx = policy.perception.perceive(obs(0, (0.25, -0.1), (0.0, 0.0)))
        state = policy.generation.initial_state()
        for _ in range(policy.generation.n_iterations):
            state = policy.generation.step(state, ctx)
        action = policy.generation.finish(state)
        assert action.values == encode_action_tokens((0.25, -0.1), 0.8)
        decoded = policy.generation.decode_action(action)
        assert np.linalg.norm(decoded - np.array([0.25, -0.1])) <= 2 * (0.8 / 63)

    def test_longer_responses_repeat_schema(self):
        tokens = encode_action_tokens((0.2, 0.1), 0.8, l_a=14)
        assert tokens[:7] == tokens[7:]

    def test_staleness_profile_length_enforced(self):
        policy = make_conditioning_policy(n_iterations=5)
        state = policy.generation.initial_state()
        for _ in range(5):
            state = policy.generation.step(state, cond_ctx([0.1, 0.1]))
        with pytest.raises(ValueError):
            policy.generation.finish(state, staleness_profile=(1.0,) * 3)
