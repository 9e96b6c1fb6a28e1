"""The linear measurement operator (aperture mask composed with the DFT).

``apply_forward`` maps an image-domain field to masked pupil data; since the
mask is binary and the DFT orthonormal, the normal operator is an orthogonal
projection, which the adjoint/idempotence tests rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import ApertureMask, Dims, _check_volume, dft3, full_aperture


@dataclass(frozen=True, eq=False)
class ForwardOperator:
    """Pupil mask plus the measurement noise variance used in reconstruction."""

    mask: ApertureMask
    sigma_w2: float

    def __post_init__(self):
        if self.sigma_w2 <= 0.0:
            raise ValueError(f"sigma_w2 must be > 0, got {self.sigma_w2}")

    @property
    def dims(self) -> Dims:
        return self.mask.dims

    @property
    def alpha(self) -> float:
        return self.mask.alpha

    def without_aperture(self) -> "ForwardOperator":
        """All-ones-mask twin; only the mean-field update changes downstream."""
        return ForwardOperator(full_aperture(self.dims), self.sigma_w2)


def apply_forward(op: ForwardOperator, g: np.ndarray) -> np.ndarray:
    """A g: orthonormal DFT followed by the pupil mask (zero outside support)."""
    _check_volume(g, op.dims)
    return op.mask.mask * dft3(g)


def apply_adjoint(op: ForwardOperator, y: np.ndarray) -> np.ndarray:
    """A^H y: mask then inverse DFT.  A^H A is an orthogonal projection."""
    _check_volume(y, op.dims)
    return dft3(op.mask.mask * y, inverse=True)


def speckle_average(ys: list[np.ndarray], op: ForwardOperator) -> np.ndarray:
    """Baseline reconstruction: mean squared magnitude of back-projected looks."""
    if not ys:
        raise ValueError("need at least one look")
    acc = np.zeros(op.dims.shape)
    for y in ys:
        bp = apply_adjoint(op, y)
        acc += (bp.conj() * bp).real
    return acc / len(ys)


def back_project_init(
    ys: list[np.ndarray], op: ForwardOperator
) -> tuple[list[np.ndarray], np.ndarray]:
    """Initial per-look mean fields and reflectivity estimate.

    Means are (1/alpha) A^H y so their squared magnitude starts on the scale
    of the reflectivity despite the aperture's energy loss; the reflectivity
    seed is the speckle average.
    """
    if not ys:
        raise ValueError("need at least one look")
    mus = [apply_adjoint(op, y) / op.alpha for y in ys]
    r0 = np.zeros(op.dims.shape)
    for mu in mus:
        r0 += (mu.conj() * mu).real
    r0 *= op.alpha**2 / len(ys)
    return mus, r0
