"""Certification of the rough-path weak formulation for the solved field.

The physical field is U = (transform) y with y the solved trajectory; every
check here works pathwise on one realisation.  The central objects are the
scalar observables <B~_i U, phi> paired against a band-limited test field:
they are controlled by the driving path with expansion coefficient
<B~_k B~_i U, phi>, and the stochastic side of the weak formulation is their
compensated-sum integral.  Checks report defects, all-pairs quotients and
refinement-rate fits; pass thresholds live with the callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .roughpath import (
    ControlledPath,
    RateFit,
    RoughPath,
    dyadic_partitions,
    fit_rate,
    rough_integral,
)
from .solver import Trajectory
from .spectral import (
    BoxGrid,
    FourierMultiplier,
    SpectralField,
    inner_product,
    laplacian,
    spectral_l2,
    vorticity_nonlinearity,
)
from .transform import (
    NoiseModel,
    TransformSymbols,
    transform_exponent,
    transform_symbols,
)


def _window_node_indices(rp: RoughPath, start: float, end: float, stride: int = 1) -> np.ndarray:
    if not (0.0 < start < end <= rp.grid.horizon):
        raise ValueError(f"window must satisfy 0 < start < end <= horizon, got ({start}, {end})")
    idx = rp.grid.window_indices(start, end)
    if stride > 1:
        keep = (idx - idx[0]) % stride == 0
        keep[-1] = True
        idx = np.unique(idx[keep])
    return idx


class _FieldAtNodes:
    """Streaming evaluation of U = transform(y) at rough-grid nodes."""

    def __init__(self, traj: Trajectory, rp: RoughPath, noise: NoiseModel, grid: BoxGrid):
        self.traj = traj
        self.rp = rp
        self.grid = grid
        self.symbols: TransformSymbols = transform_symbols(noise, grid)

    def exponent(self, j: int) -> np.ndarray:
        t = float(self.rp.times[j])
        return transform_exponent(self.symbols, self.rp.values[j], t)

    def y_at(self, j: int) -> SpectralField:
        return self.traj.field_at(float(self.rp.times[j]))

    def u_at(self, j: int) -> SpectralField:
        y = self.y_at(j)
        return SpectralField(self.grid, np.exp(self.exponent(j)) * y.coef)


def _adjoint_channel_fields(
    noise: NoiseModel, grid: BoxGrid, phi: SpectralField
) -> tuple[list[SpectralField], list[list[SpectralField]]]:
    """psi_i = B~_i* phi and psi_ik = (B~_k B~_i)* phi as ready-made fields."""
    symbols = transform_symbols(noise, grid)
    first = []
    second: list[list[SpectralField]] = []
    for i in range(noise.channels):
        ai = np.conj(symbols.channel[i])
        first.append(FourierMultiplier(grid, ai).apply(phi))
    for i in range(noise.channels):
        row = []
        for k in range(noise.channels):
            aik = np.conj(symbols.channel[i] * symbols.channel[k])
            row.append(FourierMultiplier(grid, aik).apply(phi))
        second.append(row)
    return first, second


@dataclass(frozen=True)
class Observable:
    """Paths t -> <B~_i U_t, phi> with their expansion coefficients.

    ``values[t, i]`` holds the observable and ``derivative[t, i, k]`` the
    coefficient <B~_k B~_i U_t, phi>; the coefficient is symmetric in (i, k)
    because the channel operators commute.
    """

    node_indices: np.ndarray
    times: np.ndarray
    values: np.ndarray  # (K, N)
    derivative: np.ndarray  # (K, N, N)

    def controlled(self) -> ControlledPath:
        return ControlledPath(self.node_indices, self.times, self.values, self.derivative)

    def subsample(self, stride: int) -> "Observable":
        return Observable(
            self.node_indices[::stride].copy(),
            self.times[::stride].copy(),
            self.values[::stride].copy(),
            self.derivative[::stride].copy(),
        )


def build_observable(
    traj: Trajectory,
    rp: RoughPath,
    noise: NoiseModel,
    phi: SpectralField,
    window: tuple[float, float],
    stride: int = 1,
) -> Observable:
    """Evaluate the controlled observable at every rough-grid node in a window.

    The trajectory is interpolated linearly in its coefficients and the
    transformation applied exactly at each node time; windows touching t = 0
    are rejected because the field is singular there.
    """
    grid = phi.grid
    idx = _window_node_indices(rp, window[0], window[1], stride)
    fields = _FieldAtNodes(traj, rp, noise, grid)
    psi1, psi2 = _adjoint_channel_fields(noise, grid, phi)
    n = noise.channels
    values = np.empty((idx.size, n))
    deriv = np.empty((idx.size, n, n))
    for row, j in enumerate(idx):
        u = fields.u_at(int(j))
        for i in range(n):
            values[row, i] = inner_product(u, psi1[i])
            for k in range(n):
                deriv[row, i, k] = inner_product(u, psi2[i][k])
    return Observable(idx, rp.times[idx].copy(), values, deriv)


@dataclass(frozen=True)
class ResidualLadder:
    """Rough weak-form residual across a dyadic partition ladder.

    ``rate`` fits the whole ladder; ``rate_to_floor`` stops at the smallest
    residual, measuring the decrease before the fixed deterministic-side
    error floor (set by the solver mesh) takes over.
    """

    lhs_increment: float
    drift_integral: float
    meshes: tuple[float, ...]
    stochastic: tuple[float, ...]
    residuals: tuple[float, ...]
    rate: RateFit
    rate_to_floor: RateFit

    @property
    def final_residual(self) -> float:
        return self.residuals[-1]


def rough_weak_residual(
    traj: Trajectory,
    rp: RoughPath,
    noise: NoiseModel,
    phi: SpectralField,
    observable: Observable,
    levels: int = 5,
    nonlinearity=vorticity_nonlinearity,
    drift_stride: int = 1,
) -> ResidualLadder:
    """Defect of the rough weak formulation over the observable's window.

    The deterministic side pairs the field increment against the test field
    and subtracts the trapezoid integral of <U, lap phi> - <M(U), phi> over
    the fine nodes; the stochastic side is the compensated-sum integral of
    the observable at each dyadic partition level.  The residual sequence and
    its log-log rate fit certify convergence of the formulation.
    """
    grid = phi.grid
    idx = observable.node_indices
    fields = _FieldAtNodes(traj, rp, noise, grid)
    lap_phi = laplacian(phi)
    drift_idx = idx[:: max(1, drift_stride)]
    if drift_idx[-1] != idx[-1]:
        drift_idx = np.append(drift_idx, idx[-1])
    drift_vals = np.empty(drift_idx.size)
    for row, j in enumerate(drift_idx):
        u = fields.u_at(int(j))
        val = inner_product(u, lap_phi)
        if nonlinearity is not None:
            val -= inner_product(nonlinearity(u), phi)
        drift_vals[row] = val
    t = rp.times[drift_idx]
    drift = float(np.sum(0.5 * (drift_vals[1:] + drift_vals[:-1]) * np.diff(t)))
    u_start = fields.u_at(int(idx[0]))
    u_end = fields.u_at(int(idx[-1]))
    lhs = inner_product(u_end - u_start, phi)

    controlled = observable.controlled()
    ladder = dyadic_partitions(0, idx.size - 1, levels)
    meshes, stoch, residuals = [], [], []
    for pos in ladder:
        part = idx[pos]
        matrix = rough_integral(controlled, rp, part)
        rhs = float(np.trace(matrix))
        meshes.append(float(np.max(np.diff(observable.times[pos]))))
        stoch.append(rhs)
        residuals.append(abs(lhs - drift - rhs))
    floor = int(np.argmin(residuals)) + 1
    return ResidualLadder(
        lhs_increment=lhs,
        drift_integral=drift,
        meshes=tuple(meshes),
        stochastic=tuple(stoch),
        residuals=tuple(residuals),
        rate=fit_rate(meshes, residuals),
        rate_to_floor=fit_rate(meshes[:floor], residuals[:floor]),
    )


@dataclass(frozen=True)
class QuotientTable:
    """All-pairs Hoelder quotients of the remainder and the coefficient path."""

    remainder: tuple[float, ...]  # per channel, exponent 2*alpha
    coefficient: float  # joint alpha-quotient of the derivative path
    alpha: float


def remainder_quotients(observable: Observable, rp: RoughPath, alpha: float) -> QuotientTable:
    """sup |R^i_uv| / (v-u)^(2 alpha) with R the controlled-path remainder.

    The remainder subtracts the first-order expansion along the driver from
    the raw increment; finiteness plus stability under grid refinement is the
    controlled-structure certificate.
    """
    idx = observable.node_indices
    times = observable.times
    y = observable.values
    yp = observable.derivative
    beta = rp.values[idx]
    n = y.shape[1]
    best_r = np.zeros(n)
    best_c = 0.0
    for a in range(idx.size - 1):
        dt = times[a + 1 :] - times[a]
        dy = y[a + 1 :] - y[a]  # (M, N)
        dbeta = beta[a + 1 :] - beta[a]  # (M, N)
        expansion = dbeta @ yp[a].T  # (M, N): sum_k Y'[i,k] dbeta[k]
        rem = np.abs(dy - expansion) / (dt ** (2.0 * alpha))[:, None]
        best_r = np.maximum(best_r, rem.max(axis=0))
        dcoef = yp[a + 1 :] - yp[a]
        mag = np.sqrt(np.sum(dcoef * dcoef, axis=(1, 2)))
        best_c = max(best_c, float(np.max(mag / dt ** alpha)))
    return QuotientTable(tuple(best_r), best_c, alpha)


def transform_taylor_defect(
    noise: NoiseModel,
    grid: BoxGrid,
    phi: SpectralField,
    t_u: float,
    beta_u: np.ndarray,
    t_v: float,
    beta_v: np.ndarray,
    symbols: TransformSymbols | None = None,
) -> float:
    """L^2 size of the transform increment minus its second-order expansion.

    The increment of the transformation applied to phi is expanded to second
    order in the channel increments and first order in the time step; the
    defect must vanish faster than the time step (exponent 3/2 for Brownian
    data, 2 for frozen channels).
    """
    if symbols is None:
        symbols = transform_symbols(noise, grid)
    beta_u = np.asarray(beta_u, dtype=np.float64)
    beta_v = np.asarray(beta_v, dtype=np.float64)
    dt = t_v - t_u
    dbeta = beta_v - beta_u
    e_u = transform_exponent(symbols, beta_u, t_u)
    e_v = transform_exponent(symbols, beta_v, t_v)
    exact = (np.exp(e_v) - np.exp(e_u)) * phi.coef
    bracket = np.zeros_like(symbols.squared_sum)
    for i, a_i in enumerate(symbols.channel):
        bracket = bracket + dbeta[i] * a_i
        for k, a_k in enumerate(symbols.channel):
            bracket = bracket + 0.5 * a_i * a_k * dbeta[k] * dbeta[i]
    bracket = bracket - 0.5 * dt * symbols.squared_sum
    approx = np.exp(e_u) * bracket * phi.coef
    return spectral_l2(SpectralField(grid, exact - approx))


def taylor_rate(
    noise: NoiseModel,
    grid: BoxGrid,
    phi: SpectralField,
    rp: RoughPath,
    start: int,
    span: int,
    levels: int = 5,
) -> RateFit:
    """Fit of the Taylor-defect decay under dyadic shrinking of the interval."""
    if span < 2 ** (levels - 1):
        raise ValueError(f"span {span} too short for {levels} dyadic levels")
    symbols = transform_symbols(noise, grid)
    meshes, defects = [], []
    for k in range(levels):
        width = span // (2 ** k)
        u, v = start, start + width
        d = transform_taylor_defect(
            noise,
            grid,
            phi,
            float(rp.times[u]),
            rp.values[u],
            float(rp.times[v]),
            rp.values[v],
            symbols=symbols,
        )
        meshes.append(float(rp.times[v] - rp.times[u]))
        defects.append(d)
    return fit_rate(meshes, defects)


@dataclass(frozen=True)
class BracketReport:
    """Discrete left-point versus trapezoid level-2 bookkeeping on one path."""

    symmetric_defect: float  # trapezoid symmetric part vs half outer product
    covariation_defect: float  # (trapezoid - left-point) vs half covariation
    diag_deviations: tuple[float, ...]  # |QV - (v-u)| per window
    diag_tolerances: tuple[float, ...]
    offdiag_deviations: tuple[float, ...]
    offdiag_tolerances: tuple[float, ...]

    @property
    def diag_pass(self) -> bool:
        return all(d < t for d, t in zip(self.diag_deviations, self.diag_tolerances))

    @property
    def offdiag_pass(self) -> bool:
        return all(d < t for d, t in zip(self.offdiag_deviations, self.offdiag_tolerances))


def bracket_identities(rp_left: RoughPath, rp_trap: RoughPath, windows) -> BracketReport:
    """Check the two level-2 flavor identities on shared-path enhancements.

    The symmetric part of the trapezoid tensor equals half the outer product
    of the increment exactly, and the flavor difference equals half the
    discrete covariation matrix exactly; the diagonal covariation concentrates
    at the window length and the off-diagonal at zero, each tested at five
    standard deviations of the corresponding quadratic-variation estimator.
    """
    if rp_left.flavor == rp_trap.flavor:
        raise ValueError("need one left-point and one trapezoid enhancement")
    if rp_left.flavor != "ito":
        rp_left, rp_trap = rp_trap, rp_left
    if not np.array_equal(rp_left.values, rp_trap.values):
        raise ValueError("enhancements must share the same driving path")
    inc = rp_left.path.increments
    sym_defect = 0.0
    cov_defect = 0.0
    diag_dev, diag_tol, off_dev, off_tol = [], [], [], []
    for u, v in windows:
        b_ito = rp_left.levy_area(u, v)
        b_trap = rp_trap.levy_area(u, v)
        db = rp_left.increment(u, v)
        sym_defect = max(
            sym_defect,
            float(np.max(np.abs(0.5 * (b_trap + b_trap.T) - 0.5 * np.outer(db, db)))),
        )
        cov = inc[u:v].T @ inc[u:v]
        cov_defect = max(cov_defect, float(np.max(np.abs(b_trap - b_ito - 0.5 * cov))))
        length = float(rp_left.times[v] - rp_left.times[u])
        steps = v - u
        diag_dev.append(float(np.max(np.abs(np.diag(cov) - length))))
        diag_tol.append(5.0 * math.sqrt(2.0 * length * length / steps))
        off = cov - np.diag(np.diag(cov))
        off_dev.append(float(np.max(np.abs(off))))
        off_tol.append(5.0 * math.sqrt(length * length / steps))
    return BracketReport(
        symmetric_defect=sym_defect,
        covariation_defect=cov_defect,
        diag_deviations=tuple(diag_dev),
        diag_tolerances=tuple(diag_tol),
        offdiag_deviations=tuple(off_dev),
        offdiag_tolerances=tuple(off_tol),
    )


def integrand_continuity(
    traj: Trajectory, q: float, epsilon: float, window: tuple[float, float]
) -> float:
    """All-pairs epsilon-Hoelder quotient of the cached integrand in L^q."""
    from .spectral import lp_norm

    start, end = window
    if not (0.0 < start < end):
        raise ValueError(f"window must stay away from t = 0, got {window}")
    pos = traj.node_window(start, end)
    if pos.size < 2:
        raise ValueError("window contains fewer than two trajectory nodes")
    best = 0.0
    for ii, j in enumerate(pos[:-1]):
        for k in pos[ii + 1 :]:
            dt = float(traj.times[k] - traj.times[j])
            d = lp_norm(traj.integrands[k] - traj.integrands[j], q)
            best = max(best, d / dt ** epsilon)
    return best


@dataclass(frozen=True)
class InverseRouteReport:
    """Partition-wise reconstruction of the deterministic weak form.

    ``expansion_residuals`` measures the full three-term Taylor route,
    ``drift_residuals`` the reduced drift-rectangle route after the exact
    flavor-identity cancellations; both shrink under refinement, and the
    final drift residual is comparable to the trapezoid window residual of
    the solver.
    """

    meshes: tuple[float, ...]
    expansion_residuals: tuple[float, ...]
    drift_residuals: tuple[float, ...]
    cancellation_gap: tuple[float, ...]
    window_residual: float


def inverse_route_consistency(
    traj: Trajectory,
    rp: RoughPath,
    noise: NoiseModel,
    phi: SpectralField,
    window: tuple[float, float],
    levels: int = 5,
    nonlinearity=vorticity_nonlinearity,
    max_cells: int = 256,
) -> InverseRouteReport:
    """Reproduce the weak form of the transformed solution from the field.

    Splitting the increment of (inverse transform applied to U) over each
    partition cell into the three product terms, expanding the transform
    factors to second order and applying the exact flavor identities leaves
    the drift rectangle plus covariation fluctuations; the report records the
    residual ladders of the full expansion and of the reduced drift form.
    """
    from .solver import window_weak_residual

    grid = phi.grid
    fields = _FieldAtNodes(traj, rp, noise, grid)
    symbols = fields.symbols
    lap_phi = laplacian(phi)
    idx = _window_node_indices(rp, window[0], window[1])
    n = noise.channels

    psi1, psi2 = _adjoint_channel_fields(noise, grid, phi)
    sq_fields = [
        FourierMultiplier(grid, np.conj(symbols.channel[i] ** 2)).apply(phi)
        for i in range(n)
    ]

    cache: dict[int, tuple] = {}

    def cell_data(j: int):
        got = cache.get(j)
        if got is None:
            y = fields.y_at(j)
            tr_j = np.exp(fields.exponent(j))
            g_field = None
            if nonlinearity is not None:
                u = SpectralField(grid, tr_j * y.coef)
                g_field = SpectralField(
                    grid, np.exp(-fields.exponent(j)) * nonlinearity(u).coef
                )
            b1 = np.array([inner_product(y, psi1[i]) for i in range(n)])
            b2 = np.array(
                [[inner_product(y, psi2[i][k]) for k in range(n)] for i in range(n)]
            )
            bsq = np.array([inner_product(y, sq_fields[i]) for i in range(n)])
            drift = inner_product(y, lap_phi)
            if g_field is not None:
                drift += inner_product(g_field, phi)
            cache[j] = (b1, b2, bsq, drift)
            return cache[j]
        return got

    y_start = fields.y_at(int(idx[0]))
    y_end = fields.y_at(int(idx[-1]))
    target = inner_product(y_end - y_start, phi)

    ladder = dyadic_partitions(0, idx.size - 1, levels)
    ladder = [pos for pos in ladder if pos.size - 1 <= max_cells]
    meshes, exp_res, drift_res, gaps = [], [], [], []
    for pos in ladder:
        part = idx[pos]
        lefts, rights = part[:-1], part[1:]
        dts = rp.times[rights] - rp.times[lefts]
        total_exp = 0.0
        total_drift = 0.0
        for c in range(lefts.size):
            u, v = int(lefts[c]), int(rights[c])
            dt = float(dts[c])
            db = rp.increment(u, v)
            tensor = rp.levy_area(u, v)
            b1, b2, bsq, drift = cell_data(u)
            j1 = -float(b1 @ db) + 0.5 * dt * float(np.sum(bsq)) + 0.5 * float(
                db @ b2 @ db
            )
            j2 = drift * dt + float(b1 @ db) + float(np.sum(b2 * tensor))
            j3 = -float(db @ b2 @ db)
            total_exp += j1 + j2 + j3
            total_drift += drift * dt
        meshes.append(float(np.max(dts)))
        exp_res.append(abs(target - total_exp))
        drift_res.append(abs(target - total_drift))
        gaps.append(abs(total_exp - total_drift))
    wres = window_weak_residual(traj, phi, window[0], window[1])
    return InverseRouteReport(
        meshes=tuple(meshes),
        expansion_residuals=tuple(exp_res),
        drift_residuals=tuple(drift_res),
        cancellation_gap=tuple(gaps),
        window_residual=wres,
    )


def observable_continuity(traj: Trajectory, phi: SpectralField) -> float:
    """Largest adjacent-node jump of t -> <y_t, phi>; shrinks under refinement."""
    vals = np.array([inner_product(f, phi) for f in traj.fields])
    return float(np.max(np.abs(np.diff(vals))))
