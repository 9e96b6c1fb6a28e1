"""Per-look data-fidelity agent built from an expectation-step surrogate.

Each look keeps a complex mean field and a diagonal covariance estimate of
the latent speckle given its measurements.  One exact-line-search gradient
step refines the mean per outer iteration, and the agent output is a
proximal update of the per-voxel barrier surrogate

    sum_j  log r_j + (|mean_j|^2 + cov_j) / r_j

either exactly (cubic root) or through an interval-clipped quadratic
linearization whose trust interval shrinks over iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .forward import ForwardOperator, apply_adjoint, apply_forward

PROX_KINDS = ("quadratic", "cubic")


@dataclass
class LookState:
    """Evolving per-look bundle: data, mean field, covariance diagonal, output."""

    y: np.ndarray
    mu: np.ndarray
    c: np.ndarray
    r_agent: np.ndarray


@dataclass(frozen=True)
class EmParams:
    """Agent parameters.

    ``sigma_w2`` is the measurement noise power assumed by reconstruction;
    ``sigma2`` the proximal strength (the useful range is about [0.001, 1]);
    ``alpha`` the aperture light fraction, normally filled in from the
    forward operator; ``r_floor`` lifts zero reflectivities before any 1/r'.
    """

    sigma_w2: float
    sigma2: float = 0.1
    beta_floor: float = 1.01
    alpha: float = 1.0
    prox_kind: str = "quadratic"
    r_floor: float = 1e-12

    def __post_init__(self):
        if self.sigma_w2 <= 0.0:
            raise ValueError(f"sigma_w2 must be > 0, got {self.sigma_w2}")
        if self.sigma2 <= 0.0:
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
        if self.beta_floor <= 1.0:
            raise ValueError(f"beta_floor must be > 1, got {self.beta_floor}")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.prox_kind not in PROX_KINDS:
            raise ValueError(f"prox_kind must be one of {PROX_KINDS}, got {self.prox_kind!r}")
        if self.r_floor <= 0.0:
            raise ValueError(f"r_floor must be > 0, got {self.r_floor}")


def update_c(r_prime: np.ndarray, sigma_w2: float, alpha: float) -> np.ndarray:
    """Diagonal posterior covariance under the orthogonality approximation.

    c_j = sigma_w2 r'_j / (alpha r'_j + sigma_w2), which lies in
    [0, sigma_w2/alpha) and saturates at the noise floor for bright voxels.
    """
    if sigma_w2 <= 0.0 or alpha <= 0.0:
        raise ValueError("sigma_w2 and alpha must be > 0")
    return kernels.covariance_diag(np.asarray(r_prime, dtype=np.float64), sigma_w2, alpha)


def h_value(
    mu: np.ndarray, y: np.ndarray, r_prime: np.ndarray, op: ForwardOperator, params: EmParams
) -> float:
    """Regularized mean-field objective (noise floor added to r')."""
    floored = r_prime + params.sigma_w2 / params.alpha
    resid = y - apply_forward(op, mu)
    quad = float(np.vdot(resid, resid).real) / (2.0 * params.sigma_w2)
    prior = 0.5 * float(((mu.conj() * mu).real / floored).sum())
    return quad + prior


def mu_gradient_step(
    state: LookState, r_prime: np.ndarray, op: ForwardOperator, params: EmParams
) -> np.ndarray:
    """One steepest-descent step on the mean-field objective, exact step size.

    The step size uses the same noise-floored diagonal as the gradient, so
    the line search is exact for the objective actually minimized and the
    objective never increases.  A zero gradient returns the mean unchanged.
    """
    inv_floored = 1.0 / (r_prime + params.sigma_w2 / params.alpha)
    mu, y = state.mu, state.y
    # d = -grad h = -( A^H(A mu - y)/sigma_w2 + D(1/(r' + floor)) mu )
    d = -(apply_adjoint(op, apply_forward(op, mu) - y) / params.sigma_w2 + inv_floored * mu)
    norm2 = float(np.vdot(d, d).real)
    if norm2 == 0.0:
        return mu
    ad = apply_forward(op, d)
    curv = float(np.vdot(ad, ad).real) / params.sigma_w2 + float(
        ((d.conj() * d).real * inv_floored).sum()
    )
    return mu + (norm2 / curv) * d


def em_surrogate_value(r: np.ndarray, mu: np.ndarray, c: np.ndarray) -> float:
    """Value of the barrier surrogate at r; requires r > 0 voxelwise."""
    r = np.asarray(r, dtype=np.float64)
    if (r <= 0).any():
        raise ValueError("surrogate value requires r > 0 at every voxel")
    s = (mu.conj() * mu).real + c
    return float((np.log(r) + s / r).sum())


def prox_cubic(v: np.ndarray, mu: np.ndarray, c: np.ndarray, sigma2: float) -> np.ndarray:
    """Exact proximal map of the barrier surrogate (positive cubic root)."""
    s = (np.asarray(mu).conj() * np.asarray(mu)).real + np.asarray(c, dtype=np.float64)
    if (s < 0).any():
        raise ValueError("second moment must be nonnegative")
    return kernels.prox_cubic(np.asarray(v, dtype=np.float64), s, sigma2)


def prox_quadratic(
    v: np.ndarray,
    r_prime: np.ndarray,
    mu: np.ndarray,
    c: np.ndarray,
    sigma2: float,
    beta: float,
) -> np.ndarray:
    """Interval-clipped quadratic-fit proximal update anchored at r'.

    ``beta`` > 1 bounds the per-call multiplicative change: the output lies
    between r' and r'/beta (or beta r', depending on the derivative sign of
    the convex part at r').
    """
    if beta <= 1.0:
        raise ValueError(f"beta must be > 1, got {beta}")
    r_prime = np.asarray(r_prime, dtype=np.float64)
    if (r_prime <= 0).any():
        raise ValueError("prox_quadratic requires r' > 0 at every voxel")
    s = (np.asarray(mu).conj() * np.asarray(mu)).real + np.asarray(c, dtype=np.float64)
    return kernels.prox_quadratic(np.asarray(v, dtype=np.float64), r_prime, s, sigma2, beta)


def beta_schedule(k: int) -> float:
    """Shrinking trust-interval ratio: 1 + 2/ln(k + 2), strictly > 1.

    The +2 shift keeps the schedule finite from the first iteration on and
    decays toward 1 so late iterations make small multiplicative moves.
    """
    if k < 1:
        raise ValueError(f"iteration index must be >= 1, got {k}")
    return 1.0 + 2.0 / math.log(k + 2.0)
