"""Discrete fundamental solution (propagator) of the linear part of the
model, a periodized heat-kernel reference, and empirical validation of the
kernel bounds (Gaussian envelope, integral bounds, row-mass sandwich).

The propagator from time s to t is a product of single-substep implicit
(backward Euler) solves (I - dt*L)^{-1} with coefficients frozen at each
substep midpoint, divided by the quadrature weight so that entries
approximate kernel values K(x_i, t; y_j, s).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .coeff import CoefficientSet
from .errors import NumericsError, UsageError
from .grid import Field, TorusGrid, VectorField, gradient

__all__ = [
    "Propagator",
    "GaussianFit",
    "MassSandwichReport",
    "IntegralBoundsReport",
    "assemble_lfp",
    "build_propagator",
    "apply_propagator",
    "kernel_y_gradient",
    "periodized_heat_kernel",
    "validate_gaussian_bounds",
    "validate_integral_bounds",
    "validate_mass_sandwich",
    "matrix_exponential_propagator",
    "fit_duhamel_constant",
    "ImplicitStepper",
]


def _neighbor_index(grid: TorusGrid, shift: int, axis: int) -> np.ndarray:
    idx = np.arange(grid.n_cells).reshape(grid.shape)
    return np.roll(idx, -shift, axis=grid.numpy_axis(axis)).ravel()


def assemble_lfp(c: CoefficientSet, grid: TorusGrid, t: float) -> sparse.csr_matrix:
    """Sparse divergence-form operator: face-averaged D/pi diffusion,
    central grad(phi)/pi drift, and the zeroth-order coefficient W."""
    if grid != c.grid:
        raise UsageError("coefficient set and grid mismatch")
    n = grid.n_cells
    h = grid.h
    pi_vals = c.pi_at(t).values
    a = c.D.values / pi_vals
    grad_phi = gradient(c.phi)
    w = c.W_at(t).values

    rows, cols, data = [], [], []
    diag = w.copy()
    eye = np.arange(n)
    for axis in range(grid.dim):
        up = _neighbor_index(grid, +1, axis)
        dn = _neighbor_index(grid, -1, axis)
        a_up = 0.5 * (a + a[up]) / h**2
        a_dn = 0.5 * (a + a[dn]) / h**2
        b = grad_phi.components[axis] / pi_vals / (2.0 * h)
        rows.append(eye)
        cols.append(up)
        data.append(a_up + b)
        rows.append(eye)
        cols.append(dn)
        data.append(a_dn - b)
        diag -= a_up + a_dn
    rows.append(eye)
    cols.append(eye)
    data.append(diag)
    L = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return L.tocsr()


class ImplicitStepper:
    """Backward-Euler substepping engine with LU reuse.

    For a time-independent mobility every substep shares one factorization
    per distinct dt; otherwise the operator is refactored at each substep
    midpoint.
    """

    def __init__(self, c: CoefficientSet, grid: TorusGrid):
        self.c = c
        self.grid = grid
        self._lu_cache: dict[float, object] = {}

    def _lu(self, t_mid: float, dt: float):
        if self.c.time_independent_pi:
            lu = self._lu_cache.get(dt)
            if lu is None:
                L = assemble_lfp(self.c, self.grid, 0.0)
                m = sparse.identity(self.grid.n_cells, format="csc") - dt * L.tocsc()
                lu = self._factor(m)
                self._lu_cache[dt] = lu
            return lu
        L = assemble_lfp(self.c, self.grid, t_mid)
        m = sparse.identity(self.grid.n_cells, format="csc") - dt * L.tocsc()
        return self._factor(m)

    @staticmethod
    def _factor(m):
        try:
            return spla.splu(m)
        except RuntimeError as err:
            raise NumericsError(
                f"singular implicit solve, assumptions A1/A4 likely violated: {err}"
            ) from err

    def advance(self, values: np.ndarray, t0: float, t1: float, substeps: int) -> np.ndarray:
        """Advance raw values from t0 to t1 in the given number of substeps."""
        if t1 <= t0:
            raise UsageError("advance requires t1 > t0")
        dt = (t1 - t0) / substeps
        if not self.c.time_independent_pi and dt > 1e-2:
            raise UsageError(
                f"time-dependent mobility requires substeps with dt <= 1e-2, got {dt:.3g}"
            )
        out = values
        for k in range(substeps):
            lu = self._lu(t0 + (k + 0.5) * dt, dt)
            out = lu.solve(out)
        return out


@dataclass(frozen=True, eq=False)
class Propagator:
    """Grid-to-grid kernel K(x_i, t; y_j, s) as a dense matrix.

    Applying to a Field g computes h^dim * matrix @ g.values.  ``ladder``
    (when kept) holds (time, matrix) checkpoints after every substep, used by
    the bound validators.
    """

    grid: TorusGrid
    s: float
    t: float
    matrix: np.ndarray
    substeps: int
    ladder: tuple = ()

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if not (0 <= self.s < self.t):
            raise UsageError(f"need 0 <= s < t, got s={self.s}, t={self.t}")

    @property
    def min_entry(self) -> float:
        return float(np.min(self.matrix))

    @property
    def suspicious(self) -> bool:
        return self.min_entry < -1e-10

    def row_masses(self) -> np.ndarray:
        return self.grid.h**self.grid.dim * np.sum(self.matrix, axis=1)


def build_propagator(
    c: CoefficientSet,
    grid: TorusGrid,
    s: float,
    t: float,
    substeps: int,
    keep_ladder: bool = False,
    ladder_stride: int = 1,
) -> Propagator:
    """Assemble the discrete kernel as a product of implicit substep solves.

    With keep_ladder, every ladder_stride-th intermediate product is stored
    as a (time, matrix) checkpoint for the bound validators.
    """
    if t <= s:
        raise UsageError(f"need t > s, got s={s}, t={t}")
    if substeps < 1:
        raise UsageError("substeps must be >= 1")
    stepper = ImplicitStepper(c, grid)
    n = grid.n_cells
    hdim = grid.h**grid.dim
    dt = (t - s) / substeps
    op = np.eye(n)
    ladder = []
    for k in range(substeps):
        op = stepper.advance(op, s + k * dt, s + (k + 1) * dt, 1)
        if keep_ladder and (k + 1) % ladder_stride == 0:
            ladder.append((s + (k + 1) * dt, op / hdim))
    matrix = op / hdim
    worst = float(np.min(matrix))
    if worst < -1e-6:
        raise NumericsError(
            f"propagator has entries down to {worst:.3g}; substepping too coarse"
        )
    w_scale = max(abs(c.W_inf), abs(c.W_sup))
    if w_scale == 0.0:
        masses = op.sum(axis=1)
        if np.max(np.abs(masses - 1.0)) > 1e-8:
            raise NumericsError(
                "discrete maximum principle violated: row masses deviate from 1 "
                f"by {np.max(np.abs(masses - 1.0)):.3g} although W is identically 0"
            )
    return Propagator(grid, s, t, matrix, substeps, tuple(ladder))


def apply_propagator(p: Propagator, g: Field) -> Field:
    if g.grid != p.grid:
        raise UsageError("propagator and field grids differ")
    hdim = p.grid.h**p.grid.dim
    return Field(p.grid, hdim * (p.matrix @ g.values))


def _row_gradients(matrix: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """(N, dim, N) array: central y-gradient of every kernel row."""
    n = grid.n_cells
    out = np.empty((n, grid.dim, n))
    resh = matrix.reshape((n,) + grid.shape)
    for axis in range(grid.dim):
        np_ax = 1 + grid.numpy_axis(axis)
        d = (np.roll(resh, -1, axis=np_ax) - np.roll(resh, 1, axis=np_ax)) / (2.0 * grid.h)
        out[:, axis, :] = d.reshape(n, n)
    return out


def _grad_magnitude(grads: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(grads**2, axis=1))


def kernel_y_gradient(p: Propagator) -> list:
    """Discrete gradient of each kernel row viewed as a function of y."""
    grads = _row_gradients(p.matrix, p.grid)
    return [
        VectorField(p.grid, tuple(grads[i, a, :] for a in range(p.grid.dim)))
        for i in range(p.grid.n_cells)
    ]


def periodized_heat_kernel(x, y, tau: float, a: float = 1.0) -> float:
    """Heat kernel on the unit torus by image summation over |k|_inf <= 3.

    Valid for tau in (0, 1]; the first omitted image contributes below 1e-12
    there for diffusivity a <= 1.
    """
    if tau <= 0:
        raise UsageError(f"tau must be positive, got {tau}")
    if tau > 1:
        raise UsageError(f"periodized evaluation requires tau <= 1, got {tau}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = x.size
    offsets = np.arange(-3, 4)
    if d == 1:
        shifts = offsets[:, None]
    else:
        k1, k2 = np.meshgrid(offsets, offsets, indexing="ij")
        shifts = np.column_stack([k1.ravel(), k2.ravel()])
    diff = x[None, :] - y[None, :] - shifts
    r2 = np.sum(diff * diff, axis=1)
    return float(np.sum((4.0 * np.pi * a * tau) ** (-d / 2.0) * np.exp(-r2 / (4.0 * a * tau))))


def _distance_matrix(grid: TorusGrid) -> np.ndarray:
    pts = np.stack(grid.meshgrid(), axis=1)
    d = np.abs(pts[:, None, :] - pts[None, :, :])
    d = np.minimum(d, 1.0 - d)
    return np.sqrt(np.sum(d * d, axis=2))


@dataclass(frozen=True)
class GaussianFit:
    C_fit: float
    c_fit: float
    max_residual: float
    deriv_order: tuple

    def __post_init__(self):
        if not (np.isfinite(self.C_fit) and np.isfinite(self.c_fit)):
            raise NumericsError("Gaussian fit produced non-finite constants")
        if self.C_fit <= 0 or self.c_fit <= 0:
            raise NumericsError("Gaussian fit produced non-positive constants")


def validate_gaussian_bounds(
    p: Propagator,
    orders: tuple = (0, 0),
    min_tau_substeps: int | None = None,
    rel_floor: float = 0.02,
) -> GaussianFit:
    """Fit the heat-kernel-type envelope to the discrete kernel and its
    derivatives over the substep ladder.

    The envelope is |d_t^a grad_y^b K| <= C tau^{-(d+2a+b)/2} exp(-c r^2/tau)
    with r the torus distance.  The decay rate c comes from a least-squares
    fit of log-data against r^2/tau; C is then the smallest constant making
    every sampled residual <= 0.  Two exclusions keep the fit on resolved
    data: values below rel_floor times the peak of their time slice (the far
    tail of an implicit time discretization decays exponentially, not
    Gaussianly), and ladder times below min_tau_substeps substeps (the early
    backward Euler kernel is a resolvent, not yet Gaussian).  The latter
    defaults to the smallest count keeping the time-discretization tail lift
    z^2*dt/(32*tau) below 0.05 across the admitted dynamic range.
    """
    a_ord, b_ord = orders
    if a_ord < 0 or b_ord < 0 or 2 * a_ord + b_ord > 2:
        raise UsageError(f"supported derivative orders have 2a+b <= 2, got {orders}")
    if p.t - p.s > 1.0:
        raise UsageError(
            f"Gaussian bounds are validated on unit horizons only, got t-s={p.t - p.s:.3g}"
        )
    if not p.ladder:
        raise UsageError("propagator was built without keep_ladder=True")
    if min_tau_substeps is None:
        z_max = 4.0 * np.log(1.0 / rel_floor)
        min_tau_substeps = max(8, int(np.ceil(z_max**2 / (32.0 * 0.05))))

    grid = p.grid
    d = grid.dim
    dt = (p.t - p.s) / p.substeps
    dist2 = _distance_matrix(grid) ** 2
    k_exp = (d + 2 * a_ord + b_ord) / 2.0

    z_all, u_all = [], []
    times = [tau for tau, _ in p.ladder]
    mats = [m for _, m in p.ladder]
    for idx, (t_k, mat) in enumerate(p.ladder):
        tau = t_k - p.s
        if tau < min_tau_substeps * dt - 1e-15:
            continue
        if a_ord == 1:
            if idx == 0 or idx == len(p.ladder) - 1:
                continue
            data = np.abs((mats[idx + 1] - mats[idx - 1]) / (times[idx + 1] - times[idx - 1]))
        elif b_ord == 0:
            data = np.abs(mat)
        elif b_ord == 1:
            data = _grad_magnitude(_row_gradients(mat, grid))
        else:
            grads = _row_gradients(mat, grid)
            mag2 = np.zeros_like(mat)
            for axis in range(d):
                mag2 += _row_gradients(grads[:, axis, :], grid)[:, axis, :] ** 2
            data = np.sqrt(mag2)
        mask = data > max(rel_floor * np.max(data), 1e-280)
        z_all.append((dist2[mask] / tau).ravel())
        u_all.append((np.log(data[mask]) + k_exp * np.log(tau)).ravel())

    if not z_all:
        raise UsageError("no eligible ladder times; lower min_tau_substeps or add substeps")
    z = np.concatenate(z_all)
    u = np.concatenate(u_all)
    slope = np.polyfit(z, u, 1)[0]
    c_fit = max(-slope, 1e-8)
    log_c_env = float(np.max(u + c_fit * z))
    resid = float(np.max(u + c_fit * z - log_c_env))
    return GaussianFit(float(np.exp(log_c_env)), float(c_fit), resid, (a_ord, b_ord))


@dataclass(frozen=True)
class MassSandwichReport:
    lower: float
    upper: float
    row_min: float
    row_max: float
    tol: float
    slack: float
    passed: bool


def validate_mass_sandwich(p: Propagator, c: CoefficientSet, tol: float = 1e-6) -> MassSandwichReport:
    """Check exp(W_inf (t-s)) <= row mass <= exp(W_sup (t-s)) within
    tol plus an O(h^2) slack (reported)."""
    span = p.t - p.s
    lower = float(np.exp(c.W_inf * span))
    upper = float(np.exp(c.W_sup * span))
    masses = p.row_masses()
    slack = p.grid.h**2
    passed = bool(
        np.all(masses >= lower - tol - slack) and np.all(masses <= upper + tol + slack)
    )
    return MassSandwichReport(
        lower, upper, float(np.min(masses)), float(np.max(masses)), tol, slack, passed
    )


@dataclass(frozen=True)
class IntegralBoundsReport:
    C1: float
    C2: float
    C3: float
    C1_refined: float
    C2_refined: float
    C3_refined: float
    stable: bool
    beta: float
    notes: str = ""


def _frozen_pi(c: CoefficientSet) -> CoefficientSet:
    """Stationary view with the mobility frozen at t=0 (for validators)."""
    if c.time_independent_pi:
        return c
    from dataclasses import replace

    pi0 = c.pi_at(0.0)
    v0 = c.V_at(0.0)
    w0 = c.W_at(0.0)
    return replace(
        c,
        pi_at=lambda t: pi0,
        V_at=lambda t: v0,
        W_at=lambda t: w0,
        time_independent_pi=True,
    )


def _integral_constants(
    c: CoefficientSet, grid: TorusGrid, times, substeps: int, beta: float
) -> tuple[float, float, float]:
    t_max = max(times)
    p = build_propagator(c, grid, 0.0, t_max, substeps, keep_ladder=True)
    dt = t_max / substeps
    hdim = grid.h**grid.dim

    ladder_mats = [m for _, m in p.ladder]
    grads = [_row_gradients(m, grid) for m in ladder_mats]
    mags = [_grad_magnitude(g) for g in grads]
    # A(tau): per-x integral of |grad_y K|, maximized over x
    a_of_tau = np.array([np.max(hdim * mg.sum(axis=1)) for mg in mags])
    # B(sigma): same for |d_tau grad_y K| (centered differences on the ladder)
    b_of_tau = np.full(substeps, np.nan)
    for k in range(1, substeps - 1):
        db = np.abs((grads[k + 1] - grads[k - 1]) / (2.0 * dt))
        b_of_tau[k] = np.max(hdim * _grad_magnitude(db).sum(axis=1))
    b_of_tau[0] = b_of_tau[1] if substeps > 2 else 0.0
    b_of_tau[-1] = b_of_tau[-2] if substeps > 2 else 0.0

    def int_a(width: float) -> float:
        ks = np.flatnonzero((np.arange(1, substeps + 1) * dt) <= width + 1e-15)
        return float(np.sum(a_of_tau[ks]) * dt)

    c1 = 0.0
    c2 = 0.0
    for tp in times:
        for tt in times:
            if tt <= tp + 1e-15:
                continue
            c1 = max(c1, int_a(tt - tp) / np.sqrt(tt - tp))
            # triple integral: s in [0, t'), tau in [t', t)
            si = np.arange(0.5 * dt, tp, dt)
            tj = np.arange(tp + 0.5 * dt, tt, dt)
            if si.size and tj.size:
                sig = tj[None, :] - si[:, None]
                idx = np.clip(np.round(sig / dt).astype(int) - 1, 0, substeps - 1)
                lhs = float(np.sum(b_of_tau[idx]) * dt * dt)
                c2 = max(c2, lhs / np.sqrt(tt - tp))

    # Hoelder difference integral at the final time
    dist = _distance_matrix(grid)
    n = grid.n_cells
    acc = np.zeros((n, n))
    for mg_grads in grads:
        diff = mg_grads[:, None, :, :] - mg_grads[None, :, :, :]
        acc += hdim * _grad_magnitude(diff.reshape(n * n, grid.dim, n)).sum(axis=1).reshape(n, n)
    acc *= dt
    denom = t_max ** ((1.0 - beta) / 2.0) * dist**beta
    off = ~np.eye(n, dtype=bool)
    c3 = float(np.max(acc[off] / denom[off]))
    return c1, c2, c3


def validate_integral_bounds(
    c: CoefficientSet,
    grid: TorusGrid,
    times,
    substeps: int = 64,
    beta: float | None = None,
) -> IntegralBoundsReport:
    """Fit the smallest constants in the three kernel integral bounds and
    check their stability under one grid refinement (factor-2 drift)."""
    times = sorted(float(t) for t in times)
    if times[-1] > 1.0:
        raise UsageError("integral bounds are validated for times <= 1 only")
    if times[-1] <= 0:
        raise UsageError("need at least one positive time")
    beta = c.beta_declared if beta is None else beta
    notes = ""
    cc = _frozen_pi(c)
    if cc is not c:
        notes = "mobility frozen at t=0 for this validation; "

    c1, c2, c3 = _integral_constants(cc, grid, times, substeps, beta)

    if c.problem is None:
        return IntegralBoundsReport(c1, c2, c3, np.nan, np.nan, np.nan, False, beta,
                                    notes + "no problem spec attached; refinement skipped")
    try:
        spec2 = c.problem.with_resolution(2 * grid.n_per_axis)
    except UsageError:
        return IntegralBoundsReport(c1, c2, c3, np.nan, np.nan, np.nan, False, beta,
                                    notes + "table-backed problem; refinement skipped")
    from .coeff import build_coefficients

    c2set = _frozen_pi(build_coefficients(spec2))
    r1, r2, r3 = _integral_constants(c2set, spec2.make_grid(), times, substeps, beta)
    ratios = [max(a, b) / max(min(a, b), 1e-300) for a, b in ((c1, r1), (c2, r2), (c3, r3))]
    stable = all(r < 2.0 for r in ratios)
    return IntegralBoundsReport(c1, c2, c3, r1, r2, r3, stable, beta, notes)


def fit_duhamel_constant(
    c: CoefficientSet, grid: TorusGrid, horizon: float = 0.01, substeps: int = 64
) -> float:
    """Fitted constant C1 in the Duhamel-kernel bound
    int_t' ^t int |grad_y K| <= C1 |t - t'|^(1/2), measured on the actual
    discrete kernel.  This is the measured surrogate fed to the time-bound
    formula."""
    cc = _frozen_pi(c)
    p = build_propagator(cc, grid, 0.0, horizon, substeps, keep_ladder=True)
    dt = horizon / substeps
    hdim = grid.h**grid.dim
    best = 0.0
    acc = 0.0
    for k, (_, mat) in enumerate(p.ladder):
        mg = _grad_magnitude(_row_gradients(mat, grid))
        acc += np.max(hdim * mg.sum(axis=1)) * dt
        best = max(best, acc / np.sqrt((k + 1) * dt))
    return float(best)


def matrix_exponential_propagator(
    c: CoefficientSet, grid: TorusGrid, s: float, t: float
) -> Propagator:
    """Exact-in-time propagator expm((t-s) L) for time-independent mobility;
    kept as a cross-check for the substepped construction on small grids."""
    if not c.time_independent_pi:
        raise UsageError("matrix exponential cross-check requires time-independent mobility")
    if grid.n_cells > 4096:
        raise UsageError("matrix exponential cross-check is limited to small grids")
    from scipy.linalg import expm

    L = assemble_lfp(c, grid, 0.5 * (s + t)).toarray()
    op = expm((t - s) * L)
    return Propagator(grid, s, t, op / grid.h**grid.dim, substeps=1)
