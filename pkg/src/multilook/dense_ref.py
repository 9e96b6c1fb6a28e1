"""Dense reference computations for small problems.

Everything here materializes the measurement operator as an explicit
matrix, so exact likelihoods and posterior moments can be evaluated
without the orthogonality approximation used by the fast path.  Intended
for validation only; guarded to n <= 64 unknowns.
"""

from __future__ import annotations

import numpy as np

MAX_DENSE_N = 64


def _check_small(n: int) -> None:
    if n > MAX_DENSE_N:
        raise ValueError(f"dense reference limited to n <= {MAX_DENSE_N}, got {n}")


def dense_matrix(op) -> np.ndarray:
    """Materialize the forward operator as an (n, n) complex matrix."""
    from .forward import apply_forward

    n = op.dims.n
    _check_small(n)
    shape = op.dims.shape
    a = np.empty((n, n), dtype=np.complex128)
    basis = np.zeros(n, dtype=np.complex128)
    for j in range(n):
        basis[j] = 1.0
        a[:, j] = apply_forward(op, basis.reshape(shape)).ravel()
        basis[j] = 0.0
    return a


def exact_nll(y: np.ndarray, r: np.ndarray, a: np.ndarray, sigma_w2: float) -> float:
    """Exact negative log-likelihood of one look, up to the constant n log pi.

    y ~ CN(0, A D(r) A^H + sigma_w2 I); returns log det(Sigma) + y^H Sigma^-1 y.
    """
    y = np.asarray(y, dtype=np.complex128).ravel()
    r = np.asarray(r, dtype=np.float64).ravel()
    _check_small(r.size)
    sigma = (a * r) @ a.conj().T + sigma_w2 * np.eye(a.shape[0])
    sign, logdet = np.linalg.slogdet(sigma)
    if sign.real <= 0:
        raise np.linalg.LinAlgError("covariance is not positive definite")
    solve = np.linalg.solve(sigma, y)
    return float(logdet.real + np.vdot(y, solve).real)


def posterior_moments(
    y: np.ndarray, r_prime: np.ndarray, a: np.ndarray, sigma_w2: float
) -> tuple[np.ndarray, np.ndarray]:
    """Exact posterior mean and covariance diagonal of the latent field.

    Posterior precision P = A^H A / sigma_w2 + D(1/r'); returns
    (mu, diag(P^-1)) with mu = P^-1 A^H y / sigma_w2.
    """
    y = np.asarray(y, dtype=np.complex128).ravel()
    r_prime = np.asarray(r_prime, dtype=np.float64).ravel()
    _check_small(r_prime.size)
    if (r_prime <= 0).any():
        raise ValueError("posterior moments require r' > 0")
    precision = a.conj().T @ a / sigma_w2 + np.diag(1.0 / r_prime)
    cov = np.linalg.inv(precision)
    mu = cov @ (a.conj().T @ y) / sigma_w2
    return mu, np.diag(cov).real.copy()


def exact_surrogate(
    r: np.ndarray, y: np.ndarray, r_prime: np.ndarray, a: np.ndarray, sigma_w2: float
) -> float:
    """Expectation-step upper bound on the exact negative log-likelihood.

    Built from the exact posterior moments at anchor r'.  As a function of r
    it majorizes exact_nll up to a constant independent of r, with equality
    of gradients at r = r'.
    """
    r = np.asarray(r, dtype=np.float64).ravel()
    if (r <= 0).any():
        raise ValueError("surrogate requires r > 0")
    mu, cdiag = posterior_moments(y, r_prime, a, sigma_w2)
    s = (mu.conj() * mu).real + cdiag
    return float((np.log(r) + s / r).sum())
