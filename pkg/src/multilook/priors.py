"""Prior agents: interchangeable volume denoisers for the consensus loop.

Four kinds: isotropic total-variation (dual projection with a fixed inner
budget), per-depth-slice block shrinkage, separable Gaussian smoothing, and
a client for an out-of-process denoiser speaking the framed-stdio protocol
in `sidecar`.  All agents map a real volume to a real volume of the same
shape; the consensus engine clamps negative outputs, not the agents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

PRIOR_KINDS = ("tv", "l21", "gaussian", "external", "identity")

# Chambolle dual step; 1/(4*ndim) guarantees convergence of the projection.
_TV_TAU = 1.0 / 12.0


@dataclass(frozen=True)
class PriorConfig:
    """Prior agent selection.

    ``strength`` is the regularization weight for tv/l21 and the kernel
    width in voxels for gaussian; ``inner_iters`` only affects tv;
    ``command`` and ``timeout`` only affect external.
    """

    kind: str = "tv"
    strength: float = 0.05
    inner_iters: int = 20
    command: tuple = ()
    timeout: float = 60.0

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"kind must be one of {PRIOR_KINDS}, got {self.kind!r}")
        if self.strength < 0:
            raise ValueError(f"strength must be >= 0, got {self.strength}")
        if self.inner_iters < 1:
            raise ValueError(f"inner_iters must be >= 1, got {self.inner_iters}")
        if self.kind == "external" and not self.command:
            raise ValueError("external prior requires a sidecar command")
        if self.timeout <= 0:
            raise ValueError(f"timeout must be > 0, got {self.timeout}")


def _grad(u):
    """Forward differences along each axis, zero at the trailing face."""
    g = np.zeros((3,) + u.shape)
    g[0, :-1, :, :] = u[1:, :, :] - u[:-1, :, :]
    g[1, :, :-1, :] = u[:, 1:, :] - u[:, :-1, :]
    g[2, :, :, :-1] = u[:, :, 1:] - u[:, :, :-1]
    return g


def _div(p):
    """Negative adjoint of _grad, so <_grad u, p> = -<u, _div p>."""
    d = np.zeros(p.shape[1:])
    d[0, :, :] += p[0, 0, :, :]
    d[1:-1, :, :] += p[0, 1:-1, :, :] - p[0, :-2, :, :]
    d[-1, :, :] -= p[0, -2, :, :]
    d[:, 0, :] += p[1, :, 0, :]
    d[:, 1:-1, :] += p[1, :, 1:-1, :] - p[1, :, :-2, :]
    d[:, -1, :] -= p[1, :, -2, :]
    d[:, :, 0] += p[2, :, :, 0]
    d[:, :, 1:-1] += p[2, :, :, 1:-1] - p[2, :, :, :-2]
    d[:, :, -1] -= p[2, :, :, -2]
    return d


def tv_value(v: np.ndarray) -> float:
    """Isotropic total variation: sum of voxelwise gradient magnitudes."""
    g = _grad(np.asarray(v, dtype=np.float64))
    return float(np.sqrt((g * g).sum(axis=0)).sum())


def tv_denoise(v: np.ndarray, lam: float, inner_iters: int = 20) -> np.ndarray:
    """Approximate prox of lam*TV at v via projection onto the dual ball.

    Runs a fixed budget of dual iterations (the agent must have bounded
    per-call cost), so the output is an approximation of the exact prox.
    The step p <- (p + tau*g)/(1 + tau*|g|) with g = grad(div p - v/lam)
    keeps |p| <= 1 voxelwise; the primal estimate is v - lam*div p.
    """
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    v = np.asarray(v, dtype=np.float64)
    if lam == 0.0:
        return v.copy()
    p = np.zeros((3,) + v.shape)
    for _ in range(inner_iters):
        g = _grad(_div(p) - v / lam)
        mag = np.sqrt((g * g).sum(axis=0))
        p = (p + _TV_TAU * g) / (1.0 + _TV_TAU * mag)
    out = v - lam * _div(p)
    # fixed-budget iterations can overshoot on hard inputs; never return
    # anything worse than the input under the objective being proxed
    if 0.5 * ((out - v) ** 2).sum() + lam * tv_value(out) > lam * tv_value(v):
        return v.copy()
    return out


def l21_shrink(v: np.ndarray, lam: float) -> np.ndarray:
    """Block soft-thresholding of constant-depth slices.

    Exact prox of lam * sum_z ||v(:,:,z)||_2: each slice is scaled by
    max(0, 1 - lam/m_z) where m_z is its Frobenius norm.
    """
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    v = np.asarray(v, dtype=np.float64)
    if lam == 0.0:
        return v.copy()
    m = np.sqrt((v * v).sum(axis=(0, 1)))
    scale = np.zeros_like(m)
    np.divide(lam, m, out=scale, where=m > 0)
    scale = np.maximum(0.0, 1.0 - scale)
    return v * scale[None, None, :]


def gaussian_denoise(v: np.ndarray, width: float) -> np.ndarray:
    """Separable Gaussian smoothing, reflective boundary, mass-preserving."""
    if width < 0:
        raise ValueError(f"width must be >= 0, got {width}")
    v = np.asarray(v, dtype=np.float64)
    if width == 0.0:
        return v.copy()
    return gaussian_filter(v, sigma=width, mode="reflect")


class PriorAgent:
    """Callable wrapper so every prior kind exposes close()."""

    def __init__(self, fn, closer=None):
        self._fn = fn
        self._closer = closer

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self._fn(v)

    def close(self):
        if self._closer is not None:
            self._closer()
            self._closer = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def make_prior_agent(cfg: PriorConfig) -> PriorAgent:
    """Instantiate the configured prior as a callable volume -> volume.

    External agents spawn their sidecar process immediately; call close()
    (or use the agent as a context manager) to shut it down.
    """
    if cfg.kind == "tv":
        return PriorAgent(lambda v: tv_denoise(v, cfg.strength, cfg.inner_iters))
    if cfg.kind == "l21":
        return PriorAgent(lambda v: l21_shrink(v, cfg.strength))
    if cfg.kind == "gaussian":
        return PriorAgent(lambda v: gaussian_denoise(v, cfg.strength))
    if cfg.kind == "identity":
        return PriorAgent(lambda v: np.asarray(v, dtype=np.float64).copy())
    from .sidecar import ExternalDenoiser

    client = ExternalDenoiser(cfg.command, timeout=cfg.timeout)
    return PriorAgent(client.denoise, closer=client.close)
