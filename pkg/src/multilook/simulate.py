"""Synthetic scenes and multi-look measurement generation.

Scenes are thin Lambertian shells: one voxel per cross-range column at the
nearest surface depth, shaded by the cosine of the angle between the outward
normal and the range axis, then normalized so the brightest voxel is 1.
Fully developed speckle is drawn per look and pushed through the aperture
operator with additive complex white noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import ForwardOperator, apply_forward
from .volume import Dims, make_aperture

PHANTOM_KINDS = ("sphere", "cube", "stepped-block", "plane")


@dataclass(frozen=True)
class Phantom:
    """Analytic surface primitive placed on the padded grid.

    ``size`` is the object extent in voxels (sphere diameter, cube edge,
    plate side); ``center`` offsets the object from the grid center, also
    in voxels.
    """

    kind: str
    dims: Dims
    size: float
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}; choose from {PHANTOM_KINDS}")
        if self.size <= 0:
            raise ValueError(f"phantom size must be > 0, got {self.size}")


@dataclass(frozen=True)
class SimParams:
    dims: Dims
    looks: int = 4
    noise_var: float = 1e-3
    seed: int = 0
    diameter_fraction: float = 0.5

    def __post_init__(self):
        if self.looks < 1:
            raise ValueError(f"looks must be >= 1, got {self.looks}")
        if self.noise_var <= 0.0:
            raise ValueError(f"noise_var must be > 0, got {self.noise_var}")


def _depth_index(z: np.ndarray, nt: int, what: str) -> np.ndarray:
    k = np.rint(z).astype(int)
    if k.size and (k.min() < 0 or k.max() >= nt):
        raise ValueError(f"{what} exceeds the range extent of the grid")
    return k


def make_phantom(p: Phantom) -> np.ndarray:
    """Render the phantom's front surface as a reflectivity volume."""
    nx, ny, nt = p.dims.shape
    cx = (nx - 1) / 2.0 + p.center[0]
    cy = (ny - 1) / 2.0 + p.center[1]
    cz = (nt - 1) / 2.0 + p.center[2]
    vol = np.zeros(p.dims.shape)
    half = p.size / 2.0

    # Voxel centers span [0, n-1]; the whole object must fit on the grid.
    for c, n, axis in ((cx, nx, "x"), (cy, ny, "y")):
        if c - half < -0.5 or c + half > n - 0.5:
            raise ValueError(f"phantom extends past the grid along {axis}")

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    if p.kind == "sphere":
        rho2 = (ii - cx) ** 2 + (jj - cy) ** 2
        inside = rho2 <= half * half
        if not inside.any():
            raise ValueError("sphere footprint does not intersect the grid")
        height = np.sqrt(np.maximum(half * half - rho2[inside], 0.0))
        k = _depth_index(cz - height, nt, "sphere surface")
        vol[ii[inside], jj[inside], k] = height / half  # cos of normal vs range axis
    else:
        foot = (np.abs(ii - cx) <= half) & (np.abs(jj - cy) <= half)
        if not foot.any():
            raise ValueError("plate footprint does not intersect the grid")
        if p.kind == "plane":
            depth = np.full(int(foot.sum()), cz)
        elif p.kind == "cube":
            depth = np.full(int(foot.sum()), cz - half)
        else:  # stepped-block: two flat plates a quarter-extent apart in depth
            near = ii[foot] < cx
            depth = np.where(near, cz - half / 2.0, cz + half / 2.0)
        k = _depth_index(depth, nt, f"{p.kind} surface")
        vol[ii[foot], jj[foot], k] = 1.0

    peak = vol.max()
    if peak <= 0.0:
        raise ValueError("phantom rendered no surface voxels")
    vol /= peak
    return vol


def look_rng(seed: int, look: int) -> np.random.Generator:
    """Counter-based per-look stream: Philox keyed by (seed XOR look index).

    Philox is platform-independent, so a fixed seed reproduces byte-identical
    draws anywhere, and the per-look keys let looks be generated in any order.
    """
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF) ^ int(look)
    return np.random.Generator(np.random.Philox(key=np.array([key, 0], dtype=np.uint64)))


def draw_speckle(r: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One fully developed speckle field: entries CN(0, r) independently."""
    if (r < 0).any():
        raise ValueError("reflectivity must be nonnegative")
    u = rng.standard_normal(r.shape)
    v = rng.standard_normal(r.shape)
    return np.sqrt(r) * (u + 1j * v) / np.sqrt(2.0)


def make_operator(params: SimParams, sigma_w2: float | None = None) -> ForwardOperator:
    mask = make_aperture(params.dims, params.diameter_fraction)
    return ForwardOperator(mask, params.noise_var if sigma_w2 is None else sigma_w2)


def simulate_looks(
    r: np.ndarray, params: SimParams, op: ForwardOperator | None = None
) -> list[np.ndarray]:
    """Generate the pupil-domain look stack y = A g + noise.

    Looks are statistically independent (distinct Philox keys) and the whole
    stack is deterministic for a fixed seed.
    """
    if r.shape != params.dims.shape:
        raise ValueError(f"reflectivity shape {r.shape} != dims {params.dims.shape}")
    if (r < 0).any():
        raise ValueError("reflectivity must be nonnegative")
    if op is None:
        op = make_operator(params)
    ys = []
    scale = np.sqrt(params.noise_var / 2.0)
    for ell in range(params.looks):
        rng = look_rng(params.seed, ell)
        g = draw_speckle(r, rng)
        noise = scale * (rng.standard_normal(r.shape) + 1j * rng.standard_normal(r.shape))
        ys.append(apply_forward(op, g) + noise)
    return ys


def estimate_snr_db(ys: list[np.ndarray], op: ForwardOperator, noise_var: float) -> float:
    """In-aperture SNR estimate: mean measured power over support, minus the
    noise floor, relative to the noise floor."""
    support = op.mask.mask > 0
    power = float(np.mean([np.mean(np.abs(y[support]) ** 2) for y in ys]))
    signal = max(power - noise_var, 0.0)
    if signal == 0.0:
        return float("-inf")
    return 10.0 * np.log10(signal / noise_var)
