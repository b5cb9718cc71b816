"""Periodic-box spectral calculus for 3-component vector fields.

Fields live on a cube of side ``size`` with ``modes`` points per axis and are
stored as Fourier coefficients in numpy FFT order with the forward transform
normalised by 1/modes^3 (the zero mode is the spatial mean).  Differentiation
multiplies by i*xi with the Nyquist plane of the differentiated axis zeroed;
the same "derivative wavenumbers" feed the curl, the divergence, and the
velocity recovery so that curl of the recovered velocity reproduces a
divergence-free mean-zero field mode by mode.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_AXES = (1, 2, 3)

# With VORTEX_DEBUG set, every constructed field is checked for Hermitian
# symmetry (real fields stay real through every operation).
_DEBUG = bool(os.environ.get("VORTEX_DEBUG"))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class BoxGrid:
    """Periodic box of side ``size`` with ``modes`` (even) points per axis."""

    size: float
    modes: int

    def __post_init__(self) -> None:
        if self.modes < 4 or self.modes % 2 != 0:
            raise ValueError(f"modes must be even and >= 4, got {self.modes}")
        if not self.size > 0:
            raise ValueError(f"box size must be positive, got {self.size}")
        n = int(self.modes)
        k1 = np.fft.fftfreq(n, d=1.0 / n)  # integer wavenumbers, FFT order
        shape = [(n, 1, 1), (1, n, 1), (1, 1, n)]
        k_int = [k1.reshape(s) for s in shape]
        scale = 2.0 * math.pi / self.size
        xi = np.stack([np.broadcast_to(scale * k, (n, n, n)) for k in k_int])
        xi_sq = np.sum(xi * xi, axis=0)
        # Odd derivatives zero the Nyquist plane of their own axis.
        deriv_xi = xi.copy()
        for a in range(3):
            deriv_xi[a][np.broadcast_to(k_int[a] == -n // 2, (n, n, n))] = 0.0
        deriv_sq = np.sum(deriv_xi * deriv_xi, axis=0)
        inv_deriv_sq = np.zeros_like(deriv_sq)
        nz = deriv_sq > 0.0
        inv_deriv_sq[nz] = 1.0 / deriv_sq[nz]
        keep = np.ones((n, n, n), dtype=bool)
        for a in range(3):
            keep &= np.broadcast_to(np.abs(k_int[a]) <= n // 3, (n, n, n))
        x1 = np.arange(n) * (self.size / n)
        coords = np.stack(np.meshgrid(x1, x1, x1, indexing="ij"))
        for name, arr in (
            ("_xi", xi),
            ("_xi_sq", xi_sq),
            ("_deriv_xi", deriv_xi),
            ("_inv_deriv_sq", inv_deriv_sq),
            ("_dealias_keep", keep),
            ("_coords", coords),
        ):
            object.__setattr__(self, name, _readonly(arr))

    @property
    def xi(self) -> np.ndarray:
        return self._xi  # type: ignore[attr-defined]

    @property
    def xi_sq(self) -> np.ndarray:
        return self._xi_sq  # type: ignore[attr-defined]

    @property
    def deriv_xi(self) -> np.ndarray:
        return self._deriv_xi  # type: ignore[attr-defined]

    @property
    def inv_deriv_sq(self) -> np.ndarray:
        return self._inv_deriv_sq  # type: ignore[attr-defined]

    @property
    def dealias_keep(self) -> np.ndarray:
        return self._dealias_keep  # type: ignore[attr-defined]

    @property
    def coordinates(self) -> np.ndarray:
        return self._coords  # type: ignore[attr-defined]

    @property
    def cell_volume(self) -> float:
        return (self.size / self.modes) ** 3

    @property
    def volume(self) -> float:
        return self.size ** 3


@dataclass(frozen=True)
class SpectralField:
    """Three complex coefficient blocks, one per vector component."""

    grid: BoxGrid
    coef: np.ndarray  # (3, n, n, n) complex128

    def __post_init__(self) -> None:
        c = np.asarray(self.coef, dtype=np.complex128)
        n = self.grid.modes
        if c.shape != (3, n, n, n):
            raise ValueError(f"coefficients must have shape (3, {n}, {n}, {n})")
        object.__setattr__(self, "coef", _readonly(c))
        if _DEBUG:
            scale = float(np.max(np.abs(c))) or 1.0
            defect = self.hermitian_defect()
            if defect > 1e-10 * scale:
                raise AssertionError(
                    f"Hermitian symmetry violated: defect {defect:.3e} at scale {scale:.3e}"
                )

    @classmethod
    def zero(cls, grid: BoxGrid) -> "SpectralField":
        return cls(grid, np.zeros((3, grid.modes, grid.modes, grid.modes), complex))

    def to_physical(self) -> np.ndarray:
        return np.fft.ifftn(self.coef, axes=_AXES, norm="forward").real

    def hermitian_defect(self) -> float:
        rev = self.coef
        for a in _AXES:
            rev = np.roll(np.flip(rev, axis=a), 1, axis=a)
        return float(np.max(np.abs(self.coef - np.conj(rev))))

    def divergence_defect(self) -> float:
        g = self.grid
        div = np.sum(1j * g.deriv_xi * self.coef, axis=0)
        return float(np.max(np.abs(div)))

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coef + other.coef)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coef - other.coef)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.grid, self.coef * scalar)

    __rmul__ = __mul__


def to_spectral(grid: BoxGrid, physical: np.ndarray) -> SpectralField:
    """Forward transform of a (3, n, n, n) physical field, mean in the zero mode."""
    u = np.asarray(physical, dtype=np.float64)
    n = grid.modes
    if u.shape != (3, n, n, n):
        raise ValueError(f"physical field must have shape (3, {n}, {n}, {n})")
    return SpectralField(grid, np.fft.fftn(u, axes=_AXES, norm="forward"))


def heat_semigroup(u: SpectralField, t: float) -> SpectralField:
    """Diagonal heat flow: every mode damped by exp(-|xi|^2 t)."""
    if t < 0:
        raise ValueError(f"heat semigroup needs t >= 0, got {t}")
    return SpectralField(u.grid, u.coef * np.exp(-u.grid.xi_sq * t))


def laplacian(u: SpectralField) -> SpectralField:
    return SpectralField(u.grid, -u.grid.xi_sq * u.coef)


def partial_derivative(u: SpectralField, axis: int) -> SpectralField:
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    return SpectralField(u.grid, 1j * u.grid.deriv_xi[axis] * u.coef)


def curl(u: SpectralField) -> SpectralField:
    s = u.grid.deriv_xi
    c = u.coef
    out = np.stack(
        [
            1j * (s[1] * c[2] - s[2] * c[1]),
            1j * (s[2] * c[0] - s[0] * c[2]),
            1j * (s[0] * c[1] - s[1] * c[0]),
        ]
    )
    return SpectralField(u.grid, out)


def divergence(u: SpectralField) -> np.ndarray:
    return np.sum(1j * u.grid.deriv_xi * u.coef, axis=0)


def project_divergence_free(u: SpectralField, remove_mean: bool = True) -> SpectralField:
    """Leray projection u - xi (xi . u)/|xi|^2, optionally dropping the mean."""
    g = u.grid
    dot = np.sum(g.deriv_xi * u.coef, axis=0)
    out = u.coef - g.deriv_xi * (dot * g.inv_deriv_sq)
    if remove_mean:
        out = out.copy()
        out[:, 0, 0, 0] = 0.0
    return SpectralField(g, out)


def biot_savart(u: SpectralField) -> SpectralField:
    """Velocity with the given curl: X = i xi x u / |xi|^2, zero mean.

    Gradient components of u are annihilated by the cross product, so the
    operator only sees the divergence-free part; composing with ``curl``
    returns a divergence-free mean-zero input unchanged on every mode with
    nonzero derivative wavenumber.
    """
    g = u.grid
    s = g.deriv_xi
    c = u.coef
    cross = np.stack(
        [
            s[1] * c[2] - s[2] * c[1],
            s[2] * c[0] - s[0] * c[2],
            s[0] * c[1] - s[1] * c[0],
        ]
    )
    return SpectralField(g, 1j * cross * g.inv_deriv_sq)


@dataclass(frozen=True)
class FourierMultiplier:
    """One complex factor per mode, applied to each component alike."""

    grid: BoxGrid
    values: np.ndarray  # (n, n, n) complex

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.complex128)
        n = self.grid.modes
        if v.shape != (n, n, n):
            raise ValueError(f"multiplier must have shape ({n}, {n}, {n})")
        object.__setattr__(self, "values", _readonly(v))

    def hermitian_defect(self) -> float:
        rev = self.values
        for a in (0, 1, 2):
            rev = np.roll(np.flip(rev, axis=a), 1, axis=a)
        return float(np.max(np.abs(self.values - np.conj(rev))))

    def apply(self, u: SpectralField) -> SpectralField:
        return SpectralField(u.grid, self.values * u.coef)


@dataclass(frozen=True)
class ConvolutionOperator:
    """Convolution with an integrable kernel, realised as a multiplier.

    ``kernel_l1`` records the physical-space rectangle quadrature of |h|;
    by the discrete Young inequality it bounds the operator on every L^p.
    """

    multiplier: FourierMultiplier
    kernel_l1: float

    @property
    def grid(self) -> BoxGrid:
        return self.multiplier.grid

    def apply(self, u: SpectralField) -> SpectralField:
        return self.multiplier.apply(u)


def _kernel_from_multiplier(grid: BoxGrid, values: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(values, norm="forward").real / grid.volume


def convolution_operator_from_multiplier(
    grid: BoxGrid, values: np.ndarray, tol: float = 1e-10
) -> ConvolutionOperator:
    mult = FourierMultiplier(grid, values)
    scale = float(np.max(np.abs(values))) or 1.0
    if mult.hermitian_defect() > tol * scale:
        raise ValueError("multiplier is not Hermitian: kernel would not be real")
    kernel = _kernel_from_multiplier(grid, mult.values)
    l1 = float(np.sum(np.abs(kernel)) * grid.cell_volume)
    return ConvolutionOperator(mult, l1)


def convolution_operator_from_kernel(grid: BoxGrid, kernel: np.ndarray) -> ConvolutionOperator:
    h = np.asarray(kernel, dtype=np.float64)
    n = grid.modes
    if h.shape != (n, n, n):
        raise ValueError(f"kernel samples must have shape ({n}, {n}, {n})")
    values = grid.volume * np.fft.fftn(h, norm="forward")
    l1 = float(np.sum(np.abs(h)) * grid.cell_volume)
    return ConvolutionOperator(FourierMultiplier(grid, values), l1)


def gaussian_convolution_operator(grid: BoxGrid, sigma: float, mass: float) -> ConvolutionOperator:
    """Kernel mass * gaussian(sigma): multiplier mass * exp(-sigma^2 |xi|^2 / 2)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    values = mass * np.exp(-0.5 * sigma * sigma * grid.xi_sq)
    return convolution_operator_from_multiplier(grid, values.astype(complex))


def dirac_convolution_operator(grid: BoxGrid, mass: float = 1.0) -> ConvolutionOperator:
    """Unit-mass discrete delta (kernel 1/cell_volume at the origin)."""
    values = np.full((grid.modes,) * 3, mass, dtype=complex)
    return convolution_operator_from_multiplier(grid, values)


def dealias(u: SpectralField) -> SpectralField:
    return SpectralField(u.grid, u.coef * u.grid.dealias_keep)


def vorticity_nonlinearity(u: SpectralField, apply_dealias: bool = True) -> SpectralField:
    """Quadratic term -(X . grad) u + (u . grad) X with X the recovered velocity.

    Pseudospectral evaluation: derivatives in mode space, products on the
    physical grid, with 2/3-rule truncation of the product inputs and of the
    result so the quadratic term is alias-free on the retained modes.
    """
    g = u.grid
    x = biot_savart(u)
    if apply_dealias:
        u_band, x_band = dealias(u), dealias(x)
    else:
        u_band, x_band = u, x
    u_phys = u_band.to_physical()
    x_phys = x_band.to_physical()
    out_phys = np.zeros_like(u_phys)
    for b in range(3):
        du_b = partial_derivative(u_band, b).to_physical()
        dx_b = partial_derivative(x_band, b).to_physical()
        out_phys += -x_phys[b] * du_b + u_phys[b] * dx_b
    out = to_spectral(g, out_phys)
    return dealias(out) if apply_dealias else out


def lp_norm(field, p: float, grid: BoxGrid | None = None) -> float:
    """Cell-volume weighted L^p norm of the pointwise Euclidean magnitude."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if isinstance(field, SpectralField):
        grid = field.grid
        phys = field.to_physical()
    else:
        if grid is None:
            raise ValueError("physical-array input needs an explicit grid")
        phys = np.asarray(field, dtype=np.float64)
    mag = np.sqrt(np.sum(phys * phys, axis=0))
    if math.isinf(p):
        return float(np.max(mag))
    return float((np.sum(mag ** p) * grid.cell_volume) ** (1.0 / p))


def inner_product(u: SpectralField, v: SpectralField) -> float:
    """L^2 pairing integral of u . v, evaluated by the Parseval sum."""
    if u.grid is not v.grid and u.grid != v.grid:
        raise ValueError("fields live on different grids")
    return float(np.real(np.sum(u.coef * np.conj(v.coef)))) * u.grid.volume


def spectral_l2(u: SpectralField) -> float:
    return math.sqrt(float(np.sum(np.abs(u.coef) ** 2)) * u.grid.volume)


def random_field(
    grid: BoxGrid,
    seed: int,
    decay: float = 2.0,
    divergence_free: bool = False,
    mean_zero: bool = False,
    nyquist_free: bool = True,
) -> SpectralField:
    """Seeded random real field with power-law decaying coefficients."""
    rng = np.random.default_rng(seed)
    n = grid.modes
    phys = rng.standard_normal((3, n, n, n))
    field = to_spectral(grid, phys)
    k_sq = grid.xi_sq * (grid.size / (2.0 * math.pi)) ** 2
    filt = (1.0 + k_sq) ** (-decay / 2.0)
    coef = field.coef * filt
    if nyquist_free:
        c = coef.copy()
        half = n // 2
        c[:, half, :, :] = 0.0
        c[:, :, half, :] = 0.0
        c[:, :, :, half] = 0.0
        coef = c
    out = SpectralField(grid, coef)
    if divergence_free:
        out = project_divergence_free(out, remove_mean=mean_zero)
    elif mean_zero:
        c = out.coef.copy()
        c[:, 0, 0, 0] = 0.0
        out = SpectralField(grid, c)
    return out


def bump_fields(grid: BoxGrid, count: int, seed: int) -> list[SpectralField]:
    """Band-limited bump test fields, unit L^2 norm, modes within |k| <= 2.

    Each component is a product over the axes of (1 + cos(2 pi (x - c)/L))^2
    with a seeded random centre c and sign, the periodic stand-in for a
    smooth compactly supported test function with exactly computable
    derivatives on the grid.
    """
    rng = np.random.default_rng(seed)
    x = grid.coordinates
    out = []
    for _ in range(count):
        phys = np.empty((3, grid.modes, grid.modes, grid.modes))
        for comp in range(3):
            centers = rng.uniform(0.0, grid.size, size=3)
            sign = 1.0 if rng.uniform() < 0.5 else -1.0
            bump = np.ones_like(phys[comp])
            for a in range(3):
                bump *= (1.0 + np.cos(2.0 * math.pi * (x[a] - centers[a]) / grid.size)) ** 2
            phys[comp] = sign * bump
        field = to_spectral(grid, phys)
        out.append(field * (1.0 / lp_norm(field, 2)))
    return out


# ---------------------------------------------------------------------------
# Field store: JSON header + little-endian binary (re, im) pairs per mode per
# component, modes serialised in row-major centered-k order.


def save_field(u: SpectralField, path_base) -> tuple[Path, Path]:
    base = Path(path_base)
    base.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "schema_version": 1,
        "box_size": u.grid.size,
        "modes": u.grid.modes,
        "components": 3,
        "layout": "row-major centered-k order",
        "value_format": "little-endian float64 (re, im) pairs",
    }
    hp = base.with_suffix(".json")
    hp.write_text(json.dumps(header, sort_keys=True, indent=2) + "\n")
    centered = np.fft.fftshift(u.coef, axes=_AXES)
    flat = np.empty(centered.size * 2)
    flat[0::2] = centered.real.reshape(-1)
    flat[1::2] = centered.imag.reshape(-1)
    bp = base.with_suffix(".bin")
    bp.write_bytes(flat.astype("<f8").tobytes())
    return hp, bp


def load_field(path_base) -> SpectralField:
    base = Path(path_base)
    header = json.loads(base.with_suffix(".json").read_text())
    n = int(header["modes"])
    grid = BoxGrid(float(header["box_size"]), n)
    flat = np.frombuffer(base.with_suffix(".bin").read_bytes(), dtype="<f8")
    coef = (flat[0::2] + 1j * flat[1::2]).reshape(3, n, n, n)
    return SpectralField(grid, np.fft.ifftshift(coef, axes=_AXES))
