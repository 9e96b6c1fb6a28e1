"""Consensus engine: Mann iteration mechanics, diagnostics, full loop."""

import numpy as np
import pytest

from multilook import engine
from multilook.engine import (
    AgentError,
    EngineConfig,
    ReconResult,
    StackedState,
    convergence_error,
    default_weights,
    mace_iterate,
    mu_residual,
    reconstruct,
    weighted_average,
)
from multilook.fidelity import EmParams, LookState
from multilook.forward import ForwardOperator, apply_adjoint, apply_forward
from multilook.priors import PriorConfig
from multilook.simulate import Phantom, SimParams, make_phantom, simulate_looks
from multilook.volume import Dims, dft3, full_aperture, make_aperture


def uniform_state(rng, n_agents=3, shape=(2, 2, 2)):
    w = rng.uniform(0.1, 2.0, size=(n_agents,) + shape)
    weights = np.full(n_agents, 1.0 / n_agents)
    return StackedState(w, w.copy(), weights)


def tiny_problem(seed=0, nx=4, ny=4, nt=2, looks=2, fraction=None):
    dims = Dims(nx, ny, nt)
    mask = full_aperture(dims) if fraction is None else make_aperture(dims, fraction)
    op = ForwardOperator(mask, 1e-3)
    r = make_phantom(Phantom(kind="cube", dims=dims, size=2.0))
    params = SimParams(dims=dims, looks=looks, noise_var=1e-3, seed=seed)
    return simulate_looks(r, params, op), op


class TestEngineConfig:
    def test_defaults(self):
        cfg = EngineConfig()
        assert cfg.rho == 0.5
        assert cfg.max_iters == 250
        assert cfg.tol == 1e-3
        assert cfg.clamp_negative is True
        assert cfg.early_stop is False

    @pytest.mark.parametrize(
        "kwargs",
        [{"rho": 0.0}, {"rho": 1.0}, {"max_iters": 0}, {"tol": 0.0}],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            EngineConfig(**kwargs)


class TestDefaultWeights:
    def test_half_on_prior_half_across_looks(self):
        w = default_weights(4)
        np.testing.assert_array_equal(w, [0.125, 0.125, 0.125, 0.125, 0.5])
        assert w.sum() == 1.0

    def test_rejects_zero_looks(self):
        with pytest.raises(ValueError):
            default_weights(0)


class TestStackedState:
    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes differ"):
            StackedState(np.zeros((2, 2, 2, 2)), np.zeros((2, 2, 2, 1)), np.full(2, 0.5))

    def test_rejects_single_agent(self):
        with pytest.raises(ValueError, match="two agents"):
            StackedState(np.zeros((1, 2, 2, 2)), np.zeros((1, 2, 2, 2)), np.ones(1))

    def test_rejects_wrong_weight_count(self):
        with pytest.raises(ValueError, match="weights"):
            StackedState(np.zeros((2, 2, 2, 2)), np.zeros((2, 2, 2, 2)), np.full(3, 1 / 3))

    @pytest.mark.parametrize("weights", [[-0.5, 1.5], [0.4, 0.4]])
    def test_rejects_invalid_weights(self, weights):
        with pytest.raises(ValueError, match="weights"):
            StackedState(np.zeros((2, 2, 2, 2)), np.zeros((2, 2, 2, 2)), np.array(weights))


class TestWeightedAverage:
    def test_matches_manual_average(self):
        rng = np.random.default_rng(1)
        stack = rng.standard_normal((3, 2, 2, 2))
        weights = np.array([0.2, 0.3, 0.5])
        expect = 0.2 * stack[0] + 0.3 * stack[1] + 0.5 * stack[2]
        np.testing.assert_allclose(weighted_average(stack, weights), expect, rtol=1e-14)

    def test_rejects_wrong_weight_count(self):
        with pytest.raises(ValueError, match="weights"):
            weighted_average(np.zeros((3, 2, 2, 2)), np.full(2, 0.5))


class TestMaceIterate:
    def test_identity_agents_reach_consensus_in_one_step(self):
        # r = w and x = w, so at rho = 1/2 every component lands on the average
        rng = np.random.default_rng(2)
        state = uniform_state(rng)
        agents = [lambda v: v] * 3
        w_bar = weighted_average(state.w, state.weights)
        new = mace_iterate(state, agents, 0.5)
        assert np.abs(new.w - w_bar[None]).max() <= 1e-14

    def test_identity_agents_preserve_average(self):
        rng = np.random.default_rng(3)
        state = uniform_state(rng)
        agents = [lambda v: v] * 3
        w_bar = weighted_average(state.w, state.weights)
        for _ in range(10):
            state = mace_iterate(state, agents, 0.5)
        np.testing.assert_allclose(
            weighted_average(state.w, state.weights), w_bar, rtol=1e-12
        )

    def test_shared_constant_output_is_a_fixed_point(self):
        rng = np.random.default_rng(4)
        state = uniform_state(rng)
        target = rng.uniform(0.5, 1.5, size=(2, 2, 2))
        agents = [lambda v: target.copy()] * 3

        # rho = 1/2 snaps the average onto the shared output immediately
        state = mace_iterate(state, agents, 0.5)
        np.testing.assert_allclose(
            weighted_average(state.w, state.weights), target, atol=1e-14
        )
        frozen = mace_iterate(state, agents, 0.5)
        np.testing.assert_allclose(frozen.w, state.w, rtol=0, atol=1e-13)
        assert convergence_error(frozen, agents) <= 1e-10

    def test_conservation_identity_general_rho(self):
        rng = np.random.default_rng(5)
        state = uniform_state(rng, n_agents=4, shape=(3, 2, 2))
        agents = [
            lambda v: np.sqrt(np.abs(v)),
            lambda v: v * 0.5,
            lambda v: v + 0.1,
            lambda v: np.full_like(v, 0.7),
        ]
        for rho in (0.2, 0.5, 0.8):
            new = mace_iterate(state, agents, rho)
            w_bar = weighted_average(state.w, state.weights)
            r_bar = weighted_average(new.r, state.weights)
            expect = w_bar + 2.0 * rho * (r_bar - w_bar)
            np.testing.assert_allclose(
                weighted_average(new.w, new.weights), expect, atol=1e-12
            )

    def test_wrong_agent_count_rejected(self):
        rng = np.random.default_rng(6)
        state = uniform_state(rng)
        with pytest.raises(ValueError, match="agents"):
            mace_iterate(state, [lambda v: v], 0.5)

    def test_raising_agent_wrapped_with_index(self):
        rng = np.random.default_rng(7)
        state = uniform_state(rng)

        def boom(v):
            raise RuntimeError("bad volume")

        with pytest.raises(AgentError, match="agent 1 failed"):
            mace_iterate(state, [lambda v: v, boom, lambda v: v], 0.5)


class TestConvergenceError:
    def test_zero_for_agreeing_agents(self):
        rng = np.random.default_rng(8)
        shape = (2, 2, 2)
        base = rng.uniform(0.5, 1.5, size=shape)
        state = StackedState(
            np.stack([base, base]), np.zeros((2,) + shape), np.full(2, 0.5)
        )
        assert convergence_error(state, [lambda v: v, lambda v: v]) == 0.0

    def test_matches_manual_gap(self):
        rng = np.random.default_rng(9)
        state = uniform_state(rng, n_agents=2)
        agents = [lambda v: v * 2.0, lambda v: v * 0.5]
        got = convergence_error(state, agents)
        r = np.stack([agents[0](state.w[0]), agents[1](state.w[1])])
        w_bar = weighted_average(state.w, state.weights)
        num = np.linalg.norm((r - w_bar[None]).ravel())
        den = np.sqrt(2.0) * np.linalg.norm(w_bar.ravel())
        assert got == pytest.approx(num / den, rel=1e-12)

    def test_zero_average_rejected(self):
        state = StackedState(
            np.zeros((2, 2, 2, 2)), np.zeros((2, 2, 2, 2)), np.full(2, 0.5)
        )
        with pytest.raises(ValueError, match="consensus average is zero"):
            convergence_error(state, [lambda v: v, lambda v: v])

    def test_wrong_agent_count_rejected(self):
        state = StackedState(
            np.ones((2, 2, 2, 2)), np.ones((2, 2, 2, 2)), np.full(2, 0.5)
        )
        with pytest.raises(ValueError, match="agents"):
            convergence_error(state, [lambda v: v])


class TestMuResidual:
    def test_exact_mean_field_has_tiny_residual(self):
        rng = np.random.default_rng(10)
        dims = Dims(4, 4, 2)
        op = ForwardOperator(full_aperture(dims), 0.3)
        y = rng.standard_normal(dims.shape) + 1j * rng.standard_normal(dims.shape)
        r_agent = rng.uniform(0.2, 2.0, size=dims.shape)
        r_tilde = r_agent + op.sigma_w2
        mu = dft3(y, inverse=True) * r_tilde / (r_tilde + op.sigma_w2)
        look = LookState(y=y, mu=mu, c=np.zeros(dims.shape), r_agent=r_agent)
        assert mu_residual([look], op, op.sigma_w2) <= 1e-10

    def test_zero_mean_field_gives_unit_residual(self):
        rng = np.random.default_rng(11)
        dims = Dims(2, 2, 2)
        op = ForwardOperator(full_aperture(dims), 0.5)
        y = rng.standard_normal(dims.shape) + 1j * rng.standard_normal(dims.shape)
        look = LookState(
            y=y,
            mu=np.zeros(dims.shape, dtype=np.complex128),
            c=np.zeros(dims.shape),
            r_agent=np.ones(dims.shape),
        )
        assert mu_residual([look], op, op.sigma_w2) == pytest.approx(1.0, rel=1e-12)

    def test_empty_looks_rejected(self):
        op = ForwardOperator(full_aperture(Dims(2, 2, 2)), 0.5)
        with pytest.raises(ValueError, match="at least one look"):
            mu_residual([], op, 0.5)

    def test_zero_data_rejected(self):
        dims = Dims(2, 2, 2)
        op = ForwardOperator(full_aperture(dims), 0.5)
        look = LookState(
            y=np.zeros(dims.shape, dtype=np.complex128),
            mu=np.zeros(dims.shape, dtype=np.complex128),
            c=np.zeros(dims.shape),
            r_agent=np.ones(dims.shape),
        )
        with pytest.raises(ValueError, match="zero back projection"):
            mu_residual([look], op, 0.5)


class TestReconstruct:
    def test_deterministic_given_same_inputs(self):
        ys, op = tiny_problem(seed=3)
        cfg = EngineConfig(max_iters=8)
        prior = PriorConfig(kind="tv", strength=0.05)
        a = reconstruct(ys, op, prior, cfg=cfg)
        b = reconstruct(ys, op, prior, cfg=cfg)
        np.testing.assert_array_equal(a.volume, b.volume)
        assert [t.convergence_error for t in a.trace] == [
            t.convergence_error for t in b.trace
        ]
        assert [t.mean_residual for t in a.trace] == [t.mean_residual for t in b.trace]

    def test_trace_and_result_shape(self):
        ys, op = tiny_problem(seed=4)
        cfg = EngineConfig(max_iters=6)
        out = reconstruct(ys, op, PriorConfig(kind="identity"), cfg=cfg)
        assert isinstance(out, ReconResult)
        assert out.volume.shape == op.dims.shape
        assert len(out.trace) == 6
        assert [t.iteration for t in out.trace] == [1, 2, 3, 4, 5, 6]
        walls = [t.wall_s for t in out.trace]
        assert all(b >= a for a, b in zip(walls, walls[1:]))
        assert len(out.looks) == len(ys)

    def test_callable_prior_equivalent_to_config(self):
        from multilook.priors import l21_shrink

        ys, op = tiny_problem(seed=5)
        cfg = EngineConfig(max_iters=5)
        via_cfg = reconstruct(
            ys, op, PriorConfig(kind="l21", strength=0.1), cfg=cfg
        )
        via_call = reconstruct(
            ys, op, lambda v: l21_shrink(v, 0.1), cfg=cfg
        )
        np.testing.assert_array_equal(via_cfg.volume, via_call.volume)

    def test_clamp_matches_explicit_clip(self):
        ys, op = tiny_problem(seed=6)

        def rough(v):
            return v - 0.25

        clamped = reconstruct(
            ys, op, rough, cfg=EngineConfig(max_iters=5)
        )
        manual = reconstruct(
            ys,
            op,
            lambda v: np.maximum(rough(v), 0.0),
            cfg=EngineConfig(max_iters=5, clamp_negative=False),
        )
        np.testing.assert_array_equal(clamped.volume, manual.volume)

    def test_operator_light_fraction_overrides_em(self):
        ys, op = tiny_problem(seed=7)
        cfg = EngineConfig(max_iters=4)
        em_default = EmParams(sigma_w2=op.sigma_w2)
        em_stale = EmParams(sigma_w2=op.sigma_w2, alpha=0.123)
        a = reconstruct(ys, op, PriorConfig(kind="identity"), em=em_default, cfg=cfg)
        b = reconstruct(ys, op, PriorConfig(kind="identity"), em=em_stale, cfg=cfg)
        np.testing.assert_array_equal(a.volume, b.volume)

    def test_early_stop_with_loose_tolerance(self):
        ys, op = tiny_problem(seed=8)
        cfg = EngineConfig(max_iters=50, tol=10.0, early_stop=True)
        out = reconstruct(ys, op, PriorConfig(kind="identity"), cfg=cfg)
        assert len(out.trace) == 1

    def test_progress_callback_sees_every_row(self):
        ys, op = tiny_problem(seed=9)
        rows = []
        out = reconstruct(
            ys,
            op,
            PriorConfig(kind="identity"),
            cfg=EngineConfig(max_iters=4),
            progress=rows.append,
        )
        assert rows == out.trace

    def test_cubic_prox_kind_runs(self):
        ys, op = tiny_problem(seed=10)
        em = EmParams(sigma_w2=op.sigma_w2, prox_kind="cubic")
        out = reconstruct(
            ys, op, PriorConfig(kind="identity"), em=em,
            cfg=EngineConfig(max_iters=4),
        )
        assert np.isfinite(out.volume).all()

    def test_empty_look_list_rejected(self):
        ys, op = tiny_problem(seed=11)
        with pytest.raises(ValueError, match="at least one look"):
            reconstruct([], op, PriorConfig(kind="identity"))

    def test_zero_data_rejected(self):
        ys, op = tiny_problem(seed=12)
        dead = [np.zeros_like(y) for y in ys]
        with pytest.raises(ValueError, match="zero back projection"):
            reconstruct(dead, op, PriorConfig(kind="identity"))

    def test_failing_prior_wrapped_with_iteration(self):
        ys, op = tiny_problem(seed=13)

        def boom(v):
            raise RuntimeError("denoiser broke")

        with pytest.raises(AgentError, match="prior agent failed at iteration 1"):
            reconstruct(ys, op, boom, cfg=EngineConfig(max_iters=3))

    def test_prior_shape_mismatch_rejected(self):
        ys, op = tiny_problem(seed=14)
        with pytest.raises(AgentError, match="returned shape"):
            reconstruct(
                ys,
                op,
                lambda v: np.zeros((2, 2)),
                cfg=EngineConfig(max_iters=3),
            )

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_consensus_detected(self):
        ys, op = tiny_problem(seed=15)
        shape = op.dims.shape
        with pytest.raises(RuntimeError, match="non-finite consensus state"):
            reconstruct(
                ys,
                op,
                lambda v: np.full(shape, np.inf),
                cfg=EngineConfig(max_iters=3),
            )

    def test_aperture_masked_problem_runs(self):
        ys, op = tiny_problem(seed=16, nx=8, ny=8, nt=4, fraction=0.6)
        assert op.alpha < 1.0
        out = reconstruct(
            ys,
            op,
            PriorConfig(kind="tv", strength=0.05),
            cfg=EngineConfig(max_iters=6),
        )
        assert np.isfinite(out.volume).all()
        assert out.volume.min() >= 0.0 or out.volume.min() > -1e-12
