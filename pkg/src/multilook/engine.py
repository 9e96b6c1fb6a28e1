"""Consensus engine: equilibrium among per-look fidelity agents and a prior.

The stacked state holds one volume per agent.  Each iteration evaluates
every agent on its component, reflects (x = 2r - w), broadcasts the
weighted average, and relaxes: w <- w + 2 rho (G(x) - r).  The returned
reconstruction is the weighted average of the final stack.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .fidelity import (
    EmParams,
    LookState,
    beta_schedule,
    mu_gradient_step,
    prox_cubic,
    prox_quadratic,
    update_c,
)
from .forward import ForwardOperator, apply_adjoint, apply_forward, back_project_init
from .priors import PriorConfig, make_prior_agent


class AgentError(RuntimeError):
    """An agent raised; message carries the agent index and iteration."""


@dataclass(frozen=True)
class EngineConfig:
    rho: float = 0.5
    max_iters: int = 250
    tol: float = 1e-3
    clamp_negative: bool = True
    early_stop: bool = False

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol <= 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")


def default_weights(n_looks: int) -> np.ndarray:
    """Half the weight split across the fidelity agents, half on the prior."""
    if n_looks < 1:
        raise ValueError(f"need at least one look, got {n_looks}")
    w = np.full(n_looks + 1, 1.0 / (2 * n_looks))
    w[-1] = 0.5
    return w


@dataclass
class StackedState:
    """Agent-indexed stacks w (inputs) and r (last outputs) plus weights."""

    w: np.ndarray
    r: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.w.shape != self.r.shape:
            raise ValueError(f"w and r shapes differ: {self.w.shape} vs {self.r.shape}")
        if self.w.shape[0] < 2:
            raise ValueError("need at least two agents (one look plus the prior)")
        if self.weights.shape != (self.w.shape[0],):
            raise ValueError(
                f"expected {self.w.shape[0]} weights, got shape {self.weights.shape}"
            )
        if (self.weights < 0).any() or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")


def weighted_average(stack: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Consensus average over the leading (agent) axis."""
    stack = np.asarray(stack, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (stack.shape[0],):
        raise ValueError(
            f"expected {stack.shape[0]} weights, got shape {weights.shape}"
        )
    return np.tensordot(weights, stack, axes=(0, 0))


def _relative_stack_gap(r_stack: np.ndarray, w_bar: np.ndarray) -> float:
    """|F(w) - G(w)| / |G(w)| over the stacked vector."""
    denom = np.sqrt(r_stack.shape[0] * float((w_bar * w_bar).sum()))
    if denom == 0.0:
        raise ValueError("consensus average is zero; convergence error undefined")
    diff = r_stack - w_bar[None]
    return float(np.sqrt((diff * diff).sum())) / denom


def _mann_update(
    w: np.ndarray, r_stack: np.ndarray, weights: np.ndarray, rho: float
) -> np.ndarray:
    x = 2.0 * r_stack - w
    w_new = w + 2.0 * rho * (weighted_average(x, weights)[None] - r_stack)
    # conservation: the new average must equal w_bar + 2 rho (r_bar - w_bar)
    w_bar = weighted_average(w, weights)
    expected = w_bar + 2.0 * rho * (weighted_average(r_stack, weights) - w_bar)
    actual = weighted_average(w_new, weights)
    scale = max(1.0, float(np.abs(actual).max()))
    if float(np.abs(actual - expected).max()) > 1e-10 * scale:
        raise RuntimeError("consensus conservation identity violated")
    return w_new


def mace_iterate(state: StackedState, agents, rho: float) -> StackedState:
    """One Mann step: r = F(w), x = 2r - w, w += 2 rho (G(x) - r)."""
    if len(agents) != state.w.shape[0]:
        raise ValueError(f"expected {state.w.shape[0]} agents, got {len(agents)}")
    r_stack = np.empty_like(state.w)
    for j, agent in enumerate(agents):
        try:
            r_stack[j] = agent(state.w[j])
        except Exception as e:
            raise AgentError(f"agent {j} failed: {e}") from e
    w_new = _mann_update(state.w, r_stack, state.weights, rho)
    return StackedState(w_new, r_stack, state.weights)


def convergence_error(state: StackedState, agents) -> float:
    """Relative agent/consensus gap at the current w, no state advance."""
    if len(agents) != state.w.shape[0]:
        raise ValueError(f"expected {state.w.shape[0]} agents, got {len(agents)}")
    r_stack = np.empty_like(state.w)
    for j, agent in enumerate(agents):
        try:
            r_stack[j] = agent(state.w[j])
        except Exception as e:
            raise AgentError(f"agent {j} failed: {e}") from e
    return _relative_stack_gap(r_stack, weighted_average(state.w, state.weights))


def _look_residual(
    mu: np.ndarray,
    r_tilde: np.ndarray,
    op: ForwardOperator,
    sigma_w2: float,
    b: np.ndarray,
    b_norm: float,
) -> float:
    q_mu = apply_adjoint(op, apply_forward(op, mu)) / sigma_w2 + mu / r_tilde
    return float(np.linalg.norm((q_mu - b).ravel())) / b_norm


def mu_residual(looks, op: ForwardOperator, sigma_w2: float, r_floor: float = 1e-12) -> float:
    """Mean relative normal-equation residual of the mean fields.

    Uses each look's current agent output (floored) as the reflectivity
    anchor in the regularized posterior precision.
    """
    if not looks:
        raise ValueError("need at least one look")
    total = 0.0
    for look in looks:
        anchors = np.maximum(look.r_agent, r_floor)
        r_tilde = anchors + sigma_w2 / op.alpha
        b = apply_adjoint(op, look.y) / sigma_w2
        b_norm = float(np.linalg.norm(b.ravel()))
        if b_norm == 0.0:
            raise ValueError("zero back projection; residual undefined")
        total += _look_residual(look.mu, r_tilde, op, sigma_w2, b, b_norm)
    return total / len(looks)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    convergence_error: float
    mean_residual: float
    wall_s: float


@dataclass
class ReconResult:
    volume: np.ndarray
    trace: list = field(default_factory=list)
    looks: list = field(default_factory=list)


def reconstruct(
    ys,
    op: ForwardOperator,
    prior,
    em: EmParams | None = None,
    cfg: EngineConfig | None = None,
    progress=None,
) -> ReconResult:
    """Full multi-look reconstruction loop.

    ``prior`` is either a PriorConfig (the agent is built and closed here)
    or a callable volume -> volume used as the prior agent directly.
    ``em.alpha`` is always overridden by the operator's light fraction.
    ``progress``, if given, receives each TraceRow as it is produced.
    """
    if em is None:
        em = EmParams(sigma_w2=op.sigma_w2)
    if cfg is None:
        cfg = EngineConfig()
    if isinstance(prior, PriorConfig):
        agent = make_prior_agent(prior)
        try:
            return reconstruct(ys, op, agent, em, cfg, progress)
        finally:
            agent.close()

    n_looks = len(ys)
    if n_looks < 1:
        raise ValueError("need at least one look")
    em = replace(em, alpha=op.alpha)
    mus, r0 = back_project_init(ys, op)
    looks = [
        LookState(y=y, mu=mu, c=np.zeros(op.dims.shape), r_agent=r0.copy())
        for y, mu in zip(ys, mus)
    ]
    # normal-equation right-hand sides, fixed across iterations
    bs = [mu * (em.alpha / em.sigma_w2) for mu in mus]
    b_norms = [float(np.linalg.norm(b.ravel())) for b in bs]
    if min(b_norms) == 0.0:
        raise ValueError("zero back projection; data carries no signal")

    weights = default_weights(n_looks)
    w = np.broadcast_to(r0, (n_looks + 1,) + op.dims.shape).copy()
    trace: list[TraceRow] = []
    started = time.perf_counter()
    for k in range(1, cfg.max_iters + 1):
        beta = max(beta_schedule(k), em.beta_floor)
        r_stack = np.empty_like(w)
        resid_total = 0.0
        for j, look in enumerate(looks):
            try:
                anchors = np.maximum(look.r_agent, em.r_floor)
                look.c = update_c(anchors, em.sigma_w2, em.alpha)
                look.mu = mu_gradient_step(look, anchors, op, em)
                if em.prox_kind == "cubic":
                    out = prox_cubic(w[j], look.mu, look.c, em.sigma2)
                else:
                    out = prox_quadratic(w[j], anchors, look.mu, look.c, em.sigma2, beta)
            except Exception as e:
                raise AgentError(f"agent {j} failed at iteration {k}: {e}") from e
            look.r_agent = out
            r_stack[j] = out
            resid_total += _look_residual(
                look.mu, anchors + em.sigma_w2 / em.alpha, op, em.sigma_w2, bs[j], b_norms[j]
            )
        try:
            prior_out = np.asarray(prior(w[n_looks]), dtype=np.float64)
        except Exception as e:
            raise AgentError(f"prior agent failed at iteration {k}: {e}") from e
        if prior_out.shape != op.dims.shape:
            raise AgentError(
                f"prior agent returned shape {prior_out.shape} at iteration {k}, "
                f"expected {op.dims.shape}"
            )
        if cfg.clamp_negative:
            prior_out = np.maximum(prior_out, 0.0)
        r_stack[n_looks] = prior_out

        conv = _relative_stack_gap(r_stack, weighted_average(w, weights))
        w = _mann_update(w, r_stack, weights, cfg.rho)
        if not np.isfinite(w).all():
            raise RuntimeError(f"non-finite consensus state at iteration {k}")
        trace.append(
            TraceRow(k, conv, resid_total / n_looks, time.perf_counter() - started)
        )
        if progress is not None:
            progress(trace[-1])
        if cfg.early_stop and conv < cfg.tol:
            break
    return ReconResult(weighted_average(w, weights), trace, looks)
