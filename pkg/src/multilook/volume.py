"""3D volume grids, the orthonormal DFT, and pupil aperture masks.

Volumes are numpy arrays of shape ``(nx, ny, nt)``: two cross-range axes
followed by the range axis.  Real volumes are float64, complex volumes
complex128.  Frequency-domain arrays keep the DC bin at index 0 on every
axis, so multiplying by a stored mask composes directly with FFT output.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.fft

ALLOWED_PAD_FACTORS = (Fraction(1), Fraction(3, 2), Fraction(2))

# Worker cap for the FFT backend; None lets scipy pick a single thread.
_fft_workers: int | None = None


def set_fft_workers(n: int | None) -> None:
    """Cap FFT parallelism.  Results are identical for any worker count."""
    global _fft_workers
    if n is not None and n < 1:
        raise ValueError(f"worker count must be >= 1, got {n}")
    _fft_workers = n


def as_pad_factor(value) -> Fraction:
    """Coerce a zero-padding factor to one of the supported rationals."""
    if isinstance(value, str):
        value = Fraction(value)
    q = Fraction(value)
    if q not in ALLOWED_PAD_FACTORS:
        allowed = ", ".join(str(float(a)) for a in ALLOWED_PAD_FACTORS)
        raise ValueError(f"padding factor must be one of {allowed}, got {value}")
    return q


@dataclass(frozen=True)
class Dims:
    """Padded reconstruction grid sizes plus the zero-padding factor q.

    ``nx, ny, nt`` are the post-padding voxel counts per axis; the unpadded
    measurement grid has ``nx/q x ny/q x nt/q`` samples and must divide
    exactly.
    """

    nx: int
    ny: int
    nt: int
    q: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "q", as_pad_factor(self.q))
        for name in ("nx", "ny", "nt"):
            size = getattr(self, name)
            if not isinstance(size, (int, np.integer)) or size < 2:
                raise ValueError(f"{name} must be an integer >= 2, got {size!r}")
            object.__setattr__(self, name, int(size))
            if (size * self.q.denominator) % self.q.numerator != 0:
                raise ValueError(
                    f"{name} = {size} is not divisible by q = {self.q}; "
                    f"the unpadded measurement grid must be integral"
                )

    @classmethod
    def from_unpadded(cls, mx: int, my: int, mt: int, q=1) -> "Dims":
        """Build padded dims from measurement-grid sizes.

        Fractional q pads to the nearest even integer per axis; sizes where
        that rounding breaks exact divisibility (q = 3/2 with the unpadded
        size not a multiple of 4) are rejected rather than silently changing
        the effective padding factor.
        """
        q = as_pad_factor(q)

        def pad(m: int) -> int:
            p = q * m
            if p.denominator == 1 and (q == 1 or p.numerator % 2 == 0):
                return int(p)
            return int(round(float(p) / 2.0)) * 2

        return cls(pad(mx), pad(my), pad(mt), q)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nt)

    @property
    def n(self) -> int:
        return self.nx * self.ny * self.nt

    @property
    def unpadded(self) -> tuple[int, int, int]:
        """Measurement-grid sizes (nx/q, ny/q, nt/q)."""
        scale = self.q
        return tuple(int(s * scale.denominator // scale.numerator) for s in self.shape)


@dataclass(frozen=True, eq=False)
class ApertureMask:
    """Binary pupil support on the padded grid, stored DC-at-index-0.

    ``alpha`` is the passed-light fraction: the number of nonzero mask
    entries divided by the total voxel count.
    """

    dims: Dims
    mask: np.ndarray
    alpha: float

    def __post_init__(self):
        if self.mask.shape != self.dims.shape:
            raise ValueError(f"mask shape {self.mask.shape} != dims {self.dims.shape}")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")


def _check_volume(v: np.ndarray, dims: Dims | None = None) -> None:
    if v.ndim != 3:
        raise ValueError(f"expected a 3D volume, got shape {v.shape}")
    if dims is not None and v.shape != dims.shape:
        raise ValueError(f"volume shape {v.shape} does not match dims {dims.shape}")


def dft3(v: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Orthonormal 3D DFT (1/sqrt(n) scaling both directions).

    Unitary: norms are preserved and ``dft3(dft3(v), inverse=True) == v``
    up to floating-point rounding.
    """
    _check_volume(v)
    fft = scipy.fft.ifftn if inverse else scipy.fft.fftn
    return fft(v, norm="ortho", workers=_fft_workers)


def make_aperture(dims: Dims, diameter_fraction: float) -> ApertureMask:
    """Circular pupil mask: a disk on the unpadded cross-range grid.

    The disk diameter is ``diameter_fraction`` of the unpadded cross-range
    grid length; a pixel belongs to the disk when its center lies within
    diameter/2 of the grid center.  The disk is replicated across the
    unpadded range frames, embedded centered in the padded grid (zero in
    the padding region), then shifted to the DC-at-index-0 layout.
    """
    if not (0.0 < diameter_fraction <= 1.0):
        raise ValueError(f"diameter_fraction must lie in (0, 1], got {diameter_fraction}")
    mx, my, mt = dims.unpadded
    diameter = diameter_fraction * min(mx, my)
    # Membership in doubled integer coordinates about the geometric center
    # of the unpadded plane: exact arithmetic, and exactly symmetric under
    # 90-degree rotation for square grids.
    ix = 2 * np.arange(mx)[:, None] - (mx - 1)
    iy = 2 * np.arange(my)[None, :] - (my - 1)
    disk = (ix * ix + iy * iy) <= diameter * diameter

    centered = np.zeros(dims.shape)
    ox, oy, ot = ((n - m) // 2 for n, m in zip(dims.shape, (mx, my, mt)))
    centered[ox : ox + mx, oy : oy + my, ot : ot + mt] = disk[:, :, None]
    mask = np.fft.ifftshift(centered)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("aperture mask is empty; diameter_fraction too small for grid")
    return ApertureMask(dims, mask, count / dims.n)


def full_aperture(dims: Dims) -> ApertureMask:
    """All-ones mask (alpha = 1): the no-aperture ablation, A reduces to the DFT."""
    return ApertureMask(dims, np.ones(dims.shape), 1.0)
