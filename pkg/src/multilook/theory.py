"""Convergence-theory checks on small quadratic consensus problems.

The reconstruction loop replaces each exact proximal agent with the prox
of a curvature-inflated surrogate re-anchored at the agent's previous
output.  On quadratics everything is computable in closed form, so this
module verifies the supporting theory directly: the surrogate ADMM
iteration reaches the analytic KKT point, a Fejer-style energy of the
iterates never increases, and the surrogate and exact agent chains share
their fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

MAX_DIM = 8
MAX_AGENTS = 8


@dataclass(frozen=True)
class QuadraticConsensusProblem:
    """N quadratics f_i(x) = (x - a_i)' Q_i (x - a_i) / 2 in dimension m.

    ``inflation[i]`` is the extra curvature t_i added by the surrogate
    f_i(x) + (t_i/2)|x - xi|^2; it must be at least
    lmax(Q_i) - lmin(Q_i) so the surrogate is at least as strongly convex
    as the gradient of f_i is Lipschitz.  ``sigma2`` is the prox strength.
    """

    qs: np.ndarray
    anchors: np.ndarray
    inflation: np.ndarray
    sigma2: float = 0.75

    def __post_init__(self):
        qs = np.asarray(self.qs, dtype=np.float64)
        anchors = np.asarray(self.anchors, dtype=np.float64)
        inflation = np.asarray(self.inflation, dtype=np.float64)
        object.__setattr__(self, "qs", qs)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "inflation", inflation)
        if qs.ndim != 3 or qs.shape[1] != qs.shape[2]:
            raise ValueError(f"qs must be (N, m, m), got {qs.shape}")
        n, m = qs.shape[0], qs.shape[1]
        if not (1 <= n <= MAX_AGENTS and 1 <= m <= MAX_DIM):
            raise ValueError(f"need N <= {MAX_AGENTS}, m <= {MAX_DIM}, got N={n}, m={m}")
        if anchors.shape != (n, m):
            raise ValueError(f"anchors must be ({n}, {m}), got {anchors.shape}")
        if inflation.shape != (n,):
            raise ValueError(f"inflation must be ({n},), got {inflation.shape}")
        if self.sigma2 <= 0:
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
        for i in range(n):
            if not np.allclose(qs[i], qs[i].T, atol=1e-12):
                raise ValueError(f"Q_{i} is not symmetric")
            evals = np.linalg.eigvalsh(qs[i])
            if evals[0] <= 0:
                raise ValueError(f"Q_{i} is not positive definite")
            if self.inflation[i] < evals[-1] - evals[0] - 1e-12:
                raise ValueError(
                    f"inflation[{i}] = {self.inflation[i]} is below the "
                    f"eigenvalue spread {evals[-1] - evals[0]}"
                )

    @property
    def n_agents(self) -> int:
        return self.qs.shape[0]

    @property
    def dim(self) -> int:
        return self.qs.shape[1]

    def lipschitz(self) -> np.ndarray:
        """L_i = largest eigenvalue of Q_i."""
        return np.array([np.linalg.eigvalsh(q)[-1] for q in self.qs])


def default_inflation(qs: np.ndarray) -> np.ndarray:
    """t_i = 2 lmax - lmin, making the surrogate exactly 2L-strongly convex."""
    qs = np.asarray(qs, dtype=np.float64)
    out = np.empty(qs.shape[0])
    for i, q in enumerate(qs):
        evals = np.linalg.eigvalsh(q)
        out[i] = 2.0 * evals[-1] - evals[0]
    return out


def random_consensus_problem(
    rng: np.random.Generator, n_agents: int = 3, dim: int = 4, sigma2: float = 0.75
) -> QuadraticConsensusProblem:
    """Random well-conditioned instance with default surrogate inflation."""
    qs = np.empty((n_agents, dim, dim))
    for i in range(n_agents):
        basis = rng.standard_normal((dim, dim))
        u, _ = np.linalg.qr(basis)
        evals = rng.uniform(0.5, 3.0, size=dim)
        qs[i] = (u * evals) @ u.T
        qs[i] = 0.5 * (qs[i] + qs[i].T)
    anchors = rng.uniform(-2.0, 2.0, size=(n_agents, dim))
    return QuadraticConsensusProblem(qs, anchors, default_inflation(qs), sigma2)


def grad_f(problem: QuadraticConsensusProblem, i: int, x: np.ndarray) -> np.ndarray:
    return problem.qs[i] @ (np.asarray(x, dtype=np.float64) - problem.anchors[i])


def consensus_minimizer(problem: QuadraticConsensusProblem) -> np.ndarray:
    """Analytic solution of sum_i Q_i (x - a_i) = 0."""
    lhs = problem.qs.sum(axis=0)
    rhs = np.einsum("imk,ik->m", problem.qs, problem.anchors)
    return np.linalg.solve(lhs, rhs)


def kkt_point(problem: QuadraticConsensusProblem):
    """(r*, z*, u*) of the consensus split: r_i* = z* = x*, u_i* = -s2 grad f_i."""
    x_star = consensus_minimizer(problem)
    r_star = np.tile(x_star, (problem.n_agents, 1))
    u_star = np.stack(
        [-problem.sigma2 * grad_f(problem, i, x_star) for i in range(problem.n_agents)]
    )
    return r_star, x_star.copy(), u_star


class _ProxSolvers:
    """Prefactored linear solves for the exact and surrogate proximal maps."""

    def __init__(self, problem: QuadraticConsensusProblem):
        self.problem = problem
        eye = np.eye(problem.dim)
        s2 = problem.sigma2
        self._exact = [lu_factor(q + eye / s2) for q in problem.qs]
        self._surrogate = [
            lu_factor(q + t * eye + eye / s2)
            for q, t in zip(problem.qs, problem.inflation)
        ]

    def exact(self, i: int, v: np.ndarray) -> np.ndarray:
        """argmin_x f_i(x) + |x - v|^2 / (2 sigma2)."""
        p = self.problem
        return lu_solve(self._exact[i], p.qs[i] @ p.anchors[i] + v / p.sigma2)

    def surrogate(self, i: int, v: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Same prox for the inflated surrogate anchored at xi."""
        p = self.problem
        rhs = p.qs[i] @ p.anchors[i] + p.inflation[i] * xi + v / p.sigma2
        return lu_solve(self._surrogate[i], rhs)


def exact_prox(problem: QuadraticConsensusProblem, i: int, v: np.ndarray) -> np.ndarray:
    return _ProxSolvers(problem).exact(i, np.asarray(v, dtype=np.float64))


def surrogate_prox(
    problem: QuadraticConsensusProblem, i: int, v: np.ndarray, xi: np.ndarray
) -> np.ndarray:
    return _ProxSolvers(problem).surrogate(
        i, np.asarray(v, dtype=np.float64), np.asarray(xi, dtype=np.float64)
    )


@dataclass
class AdmmTrace:
    r: np.ndarray
    z: np.ndarray
    u: np.ndarray
    lyapunov: np.ndarray
    iterations: int


def run_surrogate_admm(
    problem: QuadraticConsensusProblem, iters: int = 2000
) -> AdmmTrace:
    """Consensus ADMM with surrogate proxes re-anchored at previous outputs.

    Starts from r = z = u = 0 (anchors included) and records the energy
    sum_i [ L_i|r_i - r_i*|^2 + (1/s2)|z - z*|^2 + (1/s2)|u_i - u_i*|^2 ]
    at every iterate, including the start.
    """
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    solvers = _ProxSolvers(problem)
    n, m, s2 = problem.n_agents, problem.dim, problem.sigma2
    lip = problem.lipschitz()
    r_star, z_star, u_star = kkt_point(problem)

    r = np.zeros((n, m))
    z = np.zeros(m)
    u = np.zeros((n, m))
    xi = np.zeros((n, m))

    def energy():
        val = 0.0
        for i in range(n):
            val += lip[i] * float(((r[i] - r_star[i]) ** 2).sum())
            val += float(((z - z_star) ** 2).sum()) / s2
            val += float(((u[i] - u_star[i]) ** 2).sum()) / s2
        return val

    lyap = [energy()]
    for _ in range(iters):
        for i in range(n):
            r[i] = solvers.surrogate(i, z - u[i], xi[i])
        xi = r.copy()
        z = (r + u).mean(axis=0)
        u = u + r - z[None]
        lyap.append(energy())
    return AdmmTrace(r, z, u, np.array(lyap), iters)


def run_mann(
    problem: QuadraticConsensusProblem,
    agents: str = "exact",
    iters: int = 2000,
    rho: float = 0.5,
) -> np.ndarray:
    """Uniform-weight Mann iteration with exact or surrogate prox agents.

    Returns the consensus average of the final agent outputs; both agent
    kinds drive it to the same minimizer.
    """
    if agents not in ("exact", "surrogate"):
        raise ValueError(f"agents must be 'exact' or 'surrogate', got {agents!r}")
    if not (0.0 < rho < 1.0):
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    solvers = _ProxSolvers(problem)
    n, m = problem.n_agents, problem.dim
    w = np.zeros((n, m))
    xi = np.zeros((n, m))
    r = np.zeros((n, m))
    for _ in range(iters):
        for i in range(n):
            if agents == "exact":
                r[i] = solvers.exact(i, w[i])
            else:
                r[i] = solvers.surrogate(i, w[i], xi[i])
        xi = r.copy()
        x = 2.0 * r - w
        w = w + 2.0 * rho * (x.mean(axis=0)[None] - r)
    return r.mean(axis=0)


@dataclass(frozen=True)
class ValidationReport:
    n_agents: int
    dim: int
    kkt_distance: float
    fixed_point_gap: float
    lyapunov: np.ndarray
    lyapunov_monotone: bool
    iterations: int

    def summary(self) -> str:
        flag = "yes" if self.lyapunov_monotone else "NO"
        return (
            f"N={self.n_agents} m={self.dim}: |limit - x*| = {self.kkt_distance:.3e}, "
            f"surrogate/exact gap = {self.fixed_point_gap:.3e}, "
            f"energy monotone = {flag}"
        )


def validate_consensus_theory(
    problem: QuadraticConsensusProblem, iters: int = 2000, mann_iters: int = 2000
) -> ValidationReport:
    """Run the surrogate ADMM and both Mann chains; report the three checks."""
    trace = run_surrogate_admm(problem, iters)
    x_star = consensus_minimizer(problem)
    diffs = np.diff(trace.lyapunov)
    monotone = bool((diffs <= 1e-12).all())
    exact_limit = run_mann(problem, "exact", mann_iters)
    surrogate_limit = run_mann(problem, "surrogate", mann_iters)
    return ValidationReport(
        n_agents=problem.n_agents,
        dim=problem.dim,
        kkt_distance=float(np.linalg.norm(trace.z - x_star)),
        fixed_point_gap=float(np.linalg.norm(surrogate_limit - exact_limit)),
        lyapunov=trace.lyapunov,
        lyapunov_monotone=monotone,
        iterations=iters,
    )
