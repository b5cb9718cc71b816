"""The pathwise noise transformation and its operator-norm bookkeeping.

Each noise channel acts by a convolution plus a scalar drift, so the whole
family commutes and the time-t transformation is a single Fourier multiplier

    m(t, xi) = prod_i exp( beta_i(t) A_i(xi) - (t/2) A_i(xi)^2 ),

with A_i the channel symbol (kernel multiplier plus drift constant).  The
reciprocal multiplier is exp of the negated exponent, so forward and inverse
agree to roundoff mode by mode.

Operator norms of the transformation on L^p have no closed form for p != 2;
the gate logic therefore uses the Young-inequality upper bound derived from
the kernel masses, together with the exact L^2 multiplier sup as a
cross-check.  The bound is conservative: it never admits data the exact
norms would reject.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .roughpath import DrivingPath
from .spectral import BoxGrid, ConvolutionOperator, SpectralField

# Kernel-mass threshold for the drift constants: below this margin the
# deterministic part of the norm-bound exponent stops being negative.
DOMINANCE_CONSTANT = math.sqrt(12.0) + 3.0


class GateError(RuntimeError):
    """Smallness gate violated (and no override requested)."""


@dataclass(frozen=True)
class NoiseModel:
    """Channel data: drift constants and optional convolution kernels.

    ``kernels[i] is None`` means a pure scalar channel (zero kernel).  With
    ``require_dominance`` set, construction insists that every drift constant
    exceeds DOMINANCE_CONSTANT times the kernel mass, the standing assumption
    behind global-in-time bounds.
    """

    lambdas: tuple[float, ...]
    kernels: tuple[ConvolutionOperator | None, ...]
    require_dominance: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        object.__setattr__(self, "kernels", tuple(self.kernels))
        if len(self.lambdas) != len(self.kernels) or not self.lambdas:
            raise ValueError("need one drift constant per kernel, at least one channel")
        if self.require_dominance:
            margins = dominance_margins(self)
            if np.any(margins <= 0.0):
                raise ValueError(
                    f"dominance margins must all be positive, got {margins.tolist()}"
                )

    @property
    def channels(self) -> int:
        return len(self.lambdas)

    @property
    def masses(self) -> np.ndarray:
        return np.array([0.0 if k is None else k.kernel_l1 for k in self.kernels])

    def channel_symbol(self, grid: BoxGrid, i: int) -> np.ndarray:
        """A_i(xi) = kernel multiplier + drift constant, as an (n,n,n) array."""
        lam = self.lambdas[i]
        k = self.kernels[i]
        if k is None:
            return np.full((grid.modes,) * 3, lam, dtype=complex)
        return k.multiplier.values + lam


def dominance_margins(noise: NoiseModel) -> np.ndarray:
    """Per-channel |lambda_i| - (sqrt(12)+3)|h_i|_1; the gate wants all > 0."""
    return np.abs(np.array(noise.lambdas)) - DOMINANCE_CONSTANT * noise.masses


def deterministic_exponents(noise: NoiseModel) -> np.ndarray:
    """Per-channel lambda^2/2 - 3(|lambda| m + m^2/2), m the kernel mass.

    This is minus the t-linear part of the norm-bound exponent; it is
    positive exactly when the corresponding dominance margin is positive.
    """
    lam = np.abs(np.array(noise.lambdas))
    m = noise.masses
    return 0.5 * lam * lam - 3.0 * (lam * m + 0.5 * m * m)


@dataclass(frozen=True)
class TransformSymbols:
    """Precomputed per-mode channel symbols for one grid."""

    grid: BoxGrid
    channel: tuple[np.ndarray, ...]  # A_i arrays
    squared_sum: np.ndarray  # sum_i A_i^2


def transform_symbols(noise: NoiseModel, grid: BoxGrid) -> TransformSymbols:
    channel = tuple(noise.channel_symbol(grid, i) for i in range(noise.channels))
    squared = sum(a * a for a in channel)
    return TransformSymbols(grid, channel, squared)


def transform_exponent(
    symbols: TransformSymbols, beta_t: np.ndarray, t: float, order=None
) -> np.ndarray:
    """log-multiplier sum_i beta_i A_i - (t/2) A_i^2 in the given channel order."""
    idx = range(len(symbols.channel)) if order is None else order
    e = np.zeros_like(symbols.squared_sum)
    for i in idx:
        a = symbols.channel[i]
        e = e + beta_t[i] * a - (0.5 * t) * (a * a)
    return e


@dataclass(frozen=True)
class NoiseTransform:
    """Time-t multiplier realisation of the transformation and its inverse."""

    grid: BoxGrid
    time: float
    exponent: np.ndarray  # (n, n, n) complex

    def __post_init__(self) -> None:
        e = np.asarray(self.exponent, dtype=np.complex128)
        object.__setattr__(self, "exponent", e)
        object.__setattr__(self, "_forward", np.exp(e))
        object.__setattr__(self, "_inverse", np.exp(-e))

    @property
    def forward_multiplier(self) -> np.ndarray:
        return self._forward  # type: ignore[attr-defined]

    @property
    def inverse_multiplier(self) -> np.ndarray:
        return self._inverse  # type: ignore[attr-defined]

    def apply(self, u: SpectralField, inverse: bool = False) -> SpectralField:
        if u.grid != self.grid:
            raise ValueError("field grid does not match transform grid")
        m = self._inverse if inverse else self._forward  # type: ignore[attr-defined]
        return SpectralField(u.grid, m * u.coef)


def build_transform(
    noise: NoiseModel,
    grid: BoxGrid,
    beta_t: np.ndarray,
    t: float,
    order=None,
    symbols: TransformSymbols | None = None,
) -> NoiseTransform:
    """Construct the transformation at one time from the channel values.

    The factors are commuting multipliers, so ``order`` only permutes the
    floating-point summation of the exponent; any order agrees to roundoff.
    """
    if t < 0:
        raise ValueError(f"transform time must be >= 0, got {t}")
    beta_t = np.asarray(beta_t, dtype=np.float64)
    if beta_t.shape != (noise.channels,):
        raise ValueError(f"need one channel value per channel, got {beta_t.shape}")
    if symbols is None:
        symbols = transform_symbols(noise, grid)
    return NoiseTransform(grid, t, transform_exponent(symbols, beta_t, t, order))


class TransformProvider:
    """Transforms at rough-grid nodes, cached per node index."""

    def __init__(self, noise: NoiseModel, path: DrivingPath, grid: BoxGrid):
        self.noise = noise
        self.path = path
        self.grid = grid
        self.symbols = transform_symbols(noise, grid)
        self._cache: dict[int, NoiseTransform] = {}

    def at_index(self, j: int) -> NoiseTransform:
        got = self._cache.get(j)
        if got is None:
            t = float(self.path.grid.times[j])
            e = transform_exponent(self.symbols, self.path.values[j], t)
            got = NoiseTransform(self.grid, t, e)
            self._cache[j] = got
        return got


def _validate_exponents(p: float, q: float) -> None:
    if not (1.5 < p < 2.0):
        raise ValueError(f"p must lie in (3/2, 2), got {p}")
    if abs(1.0 / q - (2.0 / p - 1.0 / 3.0)) > 1e-9:
        raise ValueError(f"q must satisfy 1/q = 2/p - 1/3, got p={p}, q={q}")


@dataclass(frozen=True)
class NormBound:
    """Upper bound for the triple operator-norm product, with L^2 reference."""

    upper: float
    exact_l2: float


def norm_product_bound(
    noise: NoiseModel,
    beta_t: np.ndarray,
    t: float,
    p: float,
    q: float,
    symbols: TransformSymbols | None = None,
) -> NormBound:
    """Young-inequality bound for ||G_t||_p ||G_t||_{3p/(3-p)} ||G_t^-1||_q.

    Splitting each channel exponent into its scalar part and its kernel part
    and bounding exp of the kernel part by exp(|coefficient| |h|_1) on every
    L^p gives the p-independent product

        prod_i exp( lambda_i beta_i - (t/2) lambda_i^2
                    + 3 (|beta_i - t lambda_i| |h_i|_1 + (t/2) |h_i|_1^2) ).

    The exact L^2 value (the multiplier-sup product) is returned alongside;
    the bound dominates it, and for pure scalar channels the two coincide.
    """
    _validate_exponents(p, q)
    beta_t = np.asarray(beta_t, dtype=np.float64)
    lam = np.array(noise.lambdas)
    m = noise.masses
    exponent = float(
        np.sum(
            lam * beta_t
            - 0.5 * t * lam * lam
            + 3.0 * (np.abs(beta_t - t * lam) * m + 0.5 * t * m * m)
        )
    )
    upper = math.exp(exponent)
    if all(k is None for k in noise.kernels):
        scalar = float(np.sum(lam * beta_t - 0.5 * t * lam * lam))
        exact = math.exp(scalar)
    else:
        if symbols is None:
            grid = next(k.grid for k in noise.kernels if k is not None)
            symbols = transform_symbols(noise, grid)
        re = np.real(transform_exponent(symbols, beta_t, t))
        exact = math.exp(2.0 * float(np.max(re)) - float(np.min(re)))
    return NormBound(upper, exact)


@dataclass(frozen=True)
class BoundSeries:
    """Norm-bound time series along a sampled path."""

    times: np.ndarray
    upper: np.ndarray
    exact_l2: np.ndarray | None

    @property
    def sup(self) -> float:
        return float(np.max(self.upper))


def bound_series(
    noise: NoiseModel,
    path: DrivingPath,
    p: float,
    q: float,
    stride: int = 1,
    with_exact: bool = False,
) -> BoundSeries:
    """Norm bounds at every stride-th node of the sampled horizon."""
    _validate_exponents(p, q)
    times = path.grid.times[::stride]
    beta = path.values[::stride]
    lam = np.array(noise.lambdas)
    m = noise.masses
    exponents = np.sum(
        lam * beta
        - 0.5 * times[:, None] * lam * lam
        + 3.0 * (np.abs(beta - times[:, None] * lam) * m + 0.5 * times[:, None] * m * m),
        axis=1,
    )
    upper = np.exp(exponents)
    exact = None
    if with_exact:
        exact = np.array(
            [norm_product_bound(noise, beta[i], float(times[i]), p, q).exact_l2
             for i in range(times.size)]
        )
    return BoundSeries(times, upper, exact)


@dataclass(frozen=True)
class GateReport:
    """Smallness check: bound sup times the initial-data norm against c_star."""

    eta_sup: float
    u0_norm: float
    product: float
    c_star: float
    passed: bool
    margins: tuple[float, ...]

    def to_json_dict(self) -> dict:
        return {
            "eta_sup": self.eta_sup,
            "u0_norm": self.u0_norm,
            "product": self.product,
            "c_star": self.c_star,
            "pass": self.passed,
            "margins": list(self.margins),
        }


def smallness_gate(
    u0,
    eta_sup: float,
    c_star: float,
    noise: NoiseModel | None = None,
) -> GateReport:
    """Pass iff eta_sup * |u0|_{3/2} <= c_star.  Failure is a value, not an error.

    ``u0`` may be a SpectralField (norm computed here) or a precomputed norm.
    """
    from .spectral import lp_norm

    if isinstance(u0, SpectralField):
        u0_norm = lp_norm(u0, 1.5)
    else:
        u0_norm = float(u0)
    product = eta_sup * u0_norm
    margins = () if noise is None else tuple(float(x) for x in dominance_margins(noise))
    return GateReport(
        eta_sup=float(eta_sup),
        u0_norm=u0_norm,
        product=product,
        c_star=float(c_star),
        passed=bool(product <= c_star),
        margins=margins,
    )
