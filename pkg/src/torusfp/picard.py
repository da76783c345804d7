"""Numerical realization of the fixed-point existence construction: the
admissible set Y, the Duhamel map, the explicit time bound, Banach
iteration, the continuity estimate, and global-in-time concatenation.

The Duhamel map is evaluated in its pre-integration-by-parts form: the
propagator applied to div(V f log f), with the time integral by composite
midpoint over a uniform lattice.  On the discrete level this agrees exactly
with the gradient-of-kernel form by the adjointness of the grid calculus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coeff import CoefficientSet
from .equilibrium import apriori_bounds, equilibrium_state
from .errors import AssumptionError, NumericsError, UsageError
from .grid import Field, Trajectory, VectorField, divergence, gradient, integrate, sup_norm
from .kernel import ImplicitStepper, assemble_lfp, fit_duhamel_constant

__all__ = [
    "PicardSpace",
    "GlobalPlan",
    "FixedPointReport",
    "time_bound",
    "time_bound_primed",
    "picard_space",
    "psi_map",
    "fixed_point_solve",
    "contraction_ratio",
    "continuity_check",
    "global_solve",
    "random_y_trajectory",
    "rhs_divergence_form",
    "rhs_expanded_form",
    "pde_residual",
]


def time_bound(
    mu: float, f0_norm: float, c_gauss: float, v_norm: float, w_inf: float, w_sup: float
) -> float:
    """Explicit local existence horizon T.

    sqrt(T) is the smaller of the contraction branch
    min(mu,1) / (2 (C R (2R/mu + |log mu| + 1) ||V|| + 1)) with
    R = 1 + mu + 2||f0||, and the row-mass branch
    sqrt(log 2 / (|W_inf| + |W_sup| + 1)).
    """
    if mu <= 0:
        raise UsageError(f"mu must be positive, got {mu}")
    r = 1.0 + mu + 2.0 * f0_norm
    branch1 = min(mu, 1.0) / (
        2.0 * (c_gauss * r * (2.0 * r / mu + abs(math.log(mu)) + 1.0) * v_norm + 1.0)
    )
    branch2 = math.sqrt(math.log(2.0) / (abs(w_inf) + abs(w_sup) + 1.0))
    return min(branch1, branch2) ** 2


def time_bound_primed(
    mu: float,
    m: float,
    big_m: float,
    f0_norm: float,
    c_gauss: float,
    v_norm: float,
    w_inf: float,
    w_sup: float,
) -> tuple[float, float, float]:
    """Window horizon T' for the global induction, with the primed constants
    R' = 1 + mu + 2||f0|| + 2M and gamma = min(mu, m/4).

    Returns (T', R', gamma).
    """
    if mu <= 0 or m <= 0:
        raise UsageError("mu and m must be positive")
    gamma = min(mu, m / 4.0)
    r_prime = 1.0 + mu + 2.0 * f0_norm + 2.0 * big_m
    branch1 = min(mu, 1.0, m / 4.0) / (
        2.0 * (c_gauss * r_prime * (2.0 * r_prime / gamma + abs(math.log(gamma)) + 1.0) * v_norm + 1.0)
    )
    branch2 = math.sqrt(math.log(2.0) / (abs(w_inf) + abs(w_sup) + 1.0))
    return min(branch1, branch2) ** 2, r_prime, gamma


@dataclass(frozen=True)
class PicardSpace:
    """Parameters of the admissible set Y = {f : f >= mu, sup|f| <= R} on a
    horizon T, plus the constants the horizon was computed from.

    C_gauss is the measured kernel constant fed to the time-bound formula (a
    fitted surrogate for the unquantified theoretical constant; it is inert
    when V vanishes).
    """

    mu: float
    Lambda: float
    R: float
    T: float
    C_gauss: float
    W_inf: float
    W_sup: float
    V_norm: float


def picard_space(
    f0: Field,
    c: CoefficientSet,
    mu: float | None = None,
    lam: float | None = None,
    c_gauss: float | None = None,
    safety: float = 0.5,
) -> PicardSpace:
    """Build the solver's operating space by policy.

    mu defaults to min(f0)/4 (the largest value the initial-data assumption
    permits).  When V is nonzero, C_gauss is fitted from the actual discrete
    kernel and the horizon additionally shrinks by ``safety``; when V
    vanishes the formula does not involve C and the horizon is used as is.
    """
    if mu is None:
        mu = (
            c.problem.mu
            if c.problem is not None and c.problem.mu is not None
            else float(np.min(f0.values)) / 4.0
        )
    if lam is None:
        lam = (
            c.problem.lam
            if c.problem is not None and c.problem.lam is not None
            else float(np.max(f0.values))
        )
    v_norm = c.v_sup_norm()
    if c_gauss is None:
        c_gauss = fit_duhamel_constant(c, c.grid) if v_norm > 0 else 1.0
    t_formula = time_bound(mu, sup_norm(f0), c_gauss, v_norm, c.W_inf, c.W_sup)
    t_op = t_formula * (safety if v_norm > 0 else 1.0)
    return PicardSpace(
        mu=mu,
        Lambda=lam,
        R=1.0 + mu + 2.0 * sup_norm(f0),
        T=t_op,
        C_gauss=c_gauss,
        W_inf=c.W_inf,
        W_sup=c.W_sup,
        V_norm=v_norm,
    )


def _check_in_y(values: np.ndarray, space: PicardSpace) -> tuple[float, float]:
    return float(np.min(values)), float(np.max(np.abs(values)))


def _require_in_y(values: np.ndarray, space: PicardSpace, slack: float, what: str):
    vmin, vsup = _check_in_y(values, space)
    if vmin < space.mu - slack or vsup > space.R + slack:
        raise NumericsError(
            f"{what} leaves Y: min={vmin:.6g} (mu={space.mu:.6g}), "
            f"sup={vsup:.6g} (R={space.R:.6g})"
        )


def _linear_frames(
    f0_vals: np.ndarray,
    stepper: ImplicitStepper,
    t0: float,
    length: float,
    nt: int,
    substeps: int,
) -> np.ndarray:
    n = f0_vals.size
    delta = length / nt
    out = np.empty((nt + 1, n))
    out[0] = f0_vals
    for m in range(nt):
        out[m + 1] = stepper.advance(out[m], t0 + m * delta, t0 + (m + 1) * delta, substeps)
    return out


def _nonlinear_source(c: CoefficientSet, favg: np.ndarray, t_mid: float) -> np.ndarray:
    v = c.V_at(t_mid)
    w = favg * np.log(favg)
    vec = VectorField(c.grid, tuple(comp * w for comp in v.components))
    return divergence(vec).values


def _psi_values(
    fvals: np.ndarray,
    linear: np.ndarray,
    c: CoefficientSet,
    stepper: ImplicitStepper,
    t0: float,
    length: float,
    nt: int,
    substeps: int,
    v_zero: bool,
) -> np.ndarray:
    if v_zero:
        return linear.copy()
    delta = length / nt
    out = np.empty_like(linear)
    out[0] = linear[0]
    source_acc = np.zeros(linear.shape[1])
    for m in range(nt):
        ta = t0 + m * delta
        tb = t0 + (m + 1) * delta
        t_mid = ta + 0.5 * delta
        favg = 0.5 * (fvals[m] + fvals[m + 1])
        src = _nonlinear_source(c, favg, t_mid)
        source_acc = stepper.advance(source_acc, ta, tb, substeps) + delta * stepper.advance(
            src, t_mid, tb, substeps
        )
        out[m + 1] = linear[m + 1] + source_acc
    return out


def _uniform_lattice_params(times: np.ndarray) -> tuple[float, float, int]:
    nt = times.size - 1
    if nt < 1:
        raise UsageError("trajectory needs at least two time points")
    delta = np.diff(times)
    if np.max(np.abs(delta - delta[0])) > 1e-12 * max(delta[0], 1e-300):
        raise UsageError("the Duhamel quadrature requires a uniform time lattice")
    return float(times[0]), float(times[-1] - times[0]), nt


def psi_map(
    f: Trajectory,
    f0: Field,
    c: CoefficientSet,
    space: PicardSpace,
    substeps_per_interval: int = 1,
) -> Trajectory:
    """One application of the Duhamel map to a trajectory in Y."""
    if f.grid != c.grid or f0.grid != c.grid:
        raise UsageError("trajectory, initial data and coefficients must share one grid")
    vals = f.values_matrix()
    _require_in_y(vals, space, 1e-10, "psi_map input")
    t0, length, nt = _uniform_lattice_params(f.times)
    stepper = ImplicitStepper(c, c.grid)
    linear = _linear_frames(f0.values, stepper, t0, length, nt, substeps_per_interval)
    out = _psi_values(
        vals, linear, c, stepper, t0, length, nt, substeps_per_interval, space.V_norm == 0.0
    )
    return Trajectory(c.grid, f.times, [Field(c.grid, row) for row in out])


@dataclass(frozen=True)
class FixedPointReport:
    iterations: int
    final_residual: float
    empirical_contraction: float
    in_Y_every_iterate: bool


def _fixed_point_values(
    f0_vals: np.ndarray,
    c: CoefficientSet,
    space: PicardSpace,
    stepper: ImplicitStepper,
    t0: float,
    length: float,
    nt: int,
    substeps: int,
    tol: float,
    max_iter: int,
    initial_slack: float = 1e-12,
    iteration_log: list | None = None,
) -> tuple[np.ndarray, FixedPointReport]:
    if float(np.min(f0_vals)) < 4.0 * space.mu - initial_slack:
        raise AssumptionError(
            f"initial data must satisfy f0 >= 4*mu = {4 * space.mu:.6g}, "
            f"min f0 = {np.min(f0_vals):.6g}"
        )
    v_zero = space.V_norm == 0.0
    linear = _linear_frames(f0_vals, stepper, t0, length, nt, substeps)
    u = np.tile(f0_vals, (nt + 1, 1))
    diffs: list[float] = []
    in_y = True
    rising = 0
    iterations = 0
    for _ in range(max_iter):
        unew = _psi_values(u, linear, c, stepper, t0, length, nt, substeps, v_zero)
        iterations += 1
        d = float(np.max(np.abs(unew - u)))
        diffs.append(d)
        vmin, vsup = _check_in_y(unew, space)
        if iteration_log is not None:
            ratio = diffs[-1] / diffs[-2] if len(diffs) >= 2 and diffs[-2] > 0 else float("nan")
            iteration_log.append(
                (iterations, d, ratio, float(np.min(unew)), float(np.max(unew)))
            )
        if vmin < space.mu - 1e-10 or vsup > space.R + 1e-10:
            in_y = False
        if vmin < space.mu - 1e-6 or vsup > space.R + 1e-6:
            raise NumericsError(
                f"Picard iterate exits Y at iteration {iterations}: "
                f"min={vmin:.6g} (mu={space.mu:.6g}), sup={vsup:.6g} (R={space.R:.6g})"
            )
        if len(diffs) >= 2 and diffs[-2] > 0 and diffs[-1] / diffs[-2] > 1.0:
            rising += 1
            if rising >= 3:
                raise NumericsError(
                    "Picard iteration not contracting for 3 consecutive steps; "
                    "T is too large for the discrete setting"
                )
        else:
            rising = 0
        u = unew
        if d <= tol:
            break
        if v_zero:
            # the map does not depend on the iterate, so the next difference
            # is exactly zero; record the implied extra iteration
            iterations += 1
            diffs.append(0.0)
            break
    else:
        raise NumericsError(f"Picard iteration did not converge in {max_iter} iterations")

    ratios = [b / a for a, b in zip(diffs, diffs[1:]) if a > 0]
    report = FixedPointReport(
        iterations=iterations,
        final_residual=diffs[-1],
        empirical_contraction=max(ratios) if ratios else 0.0,
        in_Y_every_iterate=in_y,
    )
    return u, report


def fixed_point_solve(
    f0: Field,
    c: CoefficientSet,
    space: PicardSpace,
    tol: float = 1e-8,
    max_iter: int = 40,
    nt: int = 64,
    substeps_per_interval: int = 1,
    auto_refine: int = 0,
    t0: float = 0.0,
    iteration_log: list | None = None,
) -> tuple[Trajectory, FixedPointReport]:
    """Banach iteration of the Duhamel map from the constant-in-time
    extension of f0, on a lattice of nt midpoint intervals over [0, space.T].

    ``auto_refine`` doublings of the lattice are attempted; refinement stops
    early once the fixed point moves by less than tol/10.
    """
    if f0.grid != c.grid:
        raise UsageError("f0 and coefficients must share one grid")
    stepper = ImplicitStepper(c, c.grid)
    vals, report = _fixed_point_values(
        f0.values, c, space, stepper, t0, space.T, nt, substeps_per_interval, tol, max_iter,
        iteration_log=iteration_log,
    )
    for _ in range(auto_refine):
        nt2 = 2 * nt
        vals2, report2 = _fixed_point_values(
            f0.values, c, space, stepper, t0, space.T, nt2, substeps_per_interval, tol, max_iter
        )
        change = float(np.max(np.abs(vals2[::2] - vals)))
        nt, vals, report = nt2, vals2, report2
        if change < tol / 10.0:
            break
    times = (space.T / nt) * np.arange(nt + 1)
    traj = Trajectory(c.grid, times, [Field(c.grid, row) for row in vals])
    return traj, report


def contraction_ratio(
    f: Trajectory,
    g: Trajectory,
    f0: Field,
    c: CoefficientSet,
    space: PicardSpace,
    substeps_per_interval: int = 1,
) -> float:
    """sup-norm ratio ||psi f - psi g|| / ||f - g||; zero for f = g."""
    if not np.array_equal(f.times, g.times):
        raise UsageError("trajectories must share one time lattice")
    fv = f.values_matrix()
    gv = g.values_matrix()
    denom = float(np.max(np.abs(fv - gv)))
    if denom == 0.0:
        return 0.0
    _require_in_y(fv, space, 1e-10, "contraction_ratio input f")
    _require_in_y(gv, space, 1e-10, "contraction_ratio input g")
    t0, length, nt = _uniform_lattice_params(f.times)
    stepper = ImplicitStepper(c, c.grid)
    linear = _linear_frames(f0.values, stepper, t0, length, nt, substeps_per_interval)
    v_zero = space.V_norm == 0.0
    pf = _psi_values(fv, linear, c, stepper, t0, length, nt, substeps_per_interval, v_zero)
    pg = _psi_values(gv, linear, c, stepper, t0, length, nt, substeps_per_interval, v_zero)
    return float(np.max(np.abs(pf - pg))) / denom


def continuity_check(
    f0: Field,
    g0: Field,
    c: CoefficientSet,
    space: PicardSpace,
    tol: float = 1e-10,
    max_iter: int = 40,
    nt: int = 64,
    substeps_per_interval: int = 1,
) -> float:
    """Solve both fixed points and return ||f - g||_traj / ||f0 - g0||."""
    denom = float(np.max(np.abs(f0.values - g0.values)))
    if denom == 0.0:
        return 0.0
    stepper = ImplicitStepper(c, c.grid)
    uf, _ = _fixed_point_values(
        f0.values, c, space, stepper, 0.0, space.T, nt, substeps_per_interval, tol, max_iter
    )
    ug, _ = _fixed_point_values(
        g0.values, c, space, stepper, 0.0, space.T, nt, substeps_per_interval, tol, max_iter
    )
    return float(np.max(np.abs(uf - ug))) / denom


@dataclass(frozen=True)
class GlobalPlan:
    m: float
    M: float
    R_prime: float
    gamma: float
    T_prime: float
    num_windows: int


def global_solve(
    f0: Field,
    c: CoefficientSet,
    T_final: float,
    mu: float | None = None,
    c_gauss: float | None = None,
    tol: float = 1e-9,
    max_iter: int = 40,
    nt_per_window: int = 16,
    substeps_per_interval: int = 1,
    envelope_tol: float = 1e-4,
    num_windows_override: int | None = None,
    safety: float = 0.5,
    max_windows: int = 200_000,
) -> tuple[Trajectory, GlobalPlan]:
    """March the fixed-point solver over consecutive windows of length T'
    up to T_final, each window starting from the previous terminal frame.

    Every computed frame is checked against the a priori envelope
    [m - envelope_tol, M + envelope_tol]; seam frames are asserted
    bit-identical across windows.  The returned trajectory holds the seam
    frames (window boundaries).  Marching refuses to start when the window
    horizon would require more than max_windows windows (the honest horizon
    is tiny for strongly nonlinear problems; pass num_windows_override to
    take responsibility for longer windows).
    """
    if f0.grid != c.grid:
        raise UsageError("f0 and coefficients must share one grid")
    if T_final <= 0:
        raise UsageError("T_final must be positive")
    if c.problem is not None:
        from .coeff import validate_assumptions

        rep = validate_assumptions(c, f0, c.problem)
        if not rep.all_pass:
            names = ", ".join(ch.name for ch in rep.failing())
            raise AssumptionError(f"assumption(s) {names} fail: cannot start the global solve")
    if mu is None:
        mu = (
            c.problem.mu
            if c.problem is not None and c.problem.mu is not None
            else float(np.min(f0.values)) / 4.0
        )
    mass = integrate(f0)
    eq = equilibrium_state(c, mass)
    bnd = apriori_bounds(f0, eq, c)
    v_norm = c.v_sup_norm()
    if c_gauss is None:
        c_gauss = fit_duhamel_constant(c, c.grid) if v_norm > 0 else 1.0
    t_prime, r_prime, gamma = time_bound_primed(
        mu, bnd.m, bnd.M, sup_norm(f0), c_gauss, v_norm, c.W_inf, c.W_sup
    )
    t_op = t_prime * (safety if v_norm > 0 else 1.0)
    if num_windows_override is not None:
        nw = num_windows_override
        t_op = T_final / nw
    else:
        nw = int(math.ceil(T_final / t_op - 1e-12))
        if nw > max_windows:
            raise NumericsError(
                f"global solve needs {nw} windows of T'={t_prime:.3g} to reach "
                f"T_final={T_final:g}; pass num_windows_override (or a smaller "
                "T_final) to proceed"
            )
    plan = GlobalPlan(
        m=bnd.m, M=bnd.M, R_prime=r_prime, gamma=gamma, T_prime=t_prime, num_windows=nw
    )

    lam = (
        c.problem.lam
        if c.problem is not None and c.problem.lam is not None
        else float(np.max(f0.values))
    )
    stepper = ImplicitStepper(c, c.grid)
    cur = f0.values
    seam_times = [0.0]
    seams = [cur]
    for k in range(nw):
        start = k * t_op
        length = t_op if k < nw - 1 else T_final - start
        space_k = PicardSpace(
            mu=gamma,
            Lambda=lam,
            R=r_prime,
            T=length,
            C_gauss=c_gauss,
            W_inf=c.W_inf,
            W_sup=c.W_sup,
            V_norm=v_norm,
        )
        try:
            vals, _rep = _fixed_point_values(
                cur,
                c,
                space_k,
                stepper,
                start,
                length,
                nt_per_window,
                substeps_per_interval,
                tol,
                max_iter,
                initial_slack=envelope_tol + 1e-9,
            )
        except NumericsError as err:
            raise NumericsError(f"window {k} of {nw} failed: {err}") from err
        if not np.array_equal(vals[0], cur):
            raise NumericsError(f"window {k}: seam frame is not bit-identical")
        lo = float(np.min(vals))
        hi = float(np.max(vals))
        if lo < bnd.m - envelope_tol or hi > bnd.M + envelope_tol:
            raise NumericsError(
                f"window {k}: a priori envelope violated "
                f"(min={lo:.6g} vs m={bnd.m:.6g}, max={hi:.6g} vs M={bnd.M:.6g}); "
                "discretization error"
            )
        cur = vals[-1]
        seam_times.append(start + length)
        seams.append(cur)

    traj = Trajectory(c.grid, np.asarray(seam_times), [Field(c.grid, v) for v in seams])
    return traj, plan


def random_y_trajectory(
    space: PicardSpace,
    grid,
    rng: np.random.Generator,
    nt: int = 64,
    n_modes: int = 4,
) -> Trajectory:
    """Seeded smooth random element of Y: a low-frequency Fourier series with
    1/k^2-decaying coefficients, mildly modulated in time, clipped to
    [mu, R]."""
    times = (space.T / nt) * np.arange(nt + 1)
    xs = grid.meshgrid()
    base = rng.uniform(space.mu + 0.2 * (space.R - space.mu), space.R - 0.2 * (space.R - space.mu))
    amp_scale = 0.5 * (space.R - space.mu)
    vals = np.full((nt + 1, grid.n_cells), base)
    t_hat = times / space.T if space.T > 0 else times
    for _ in range(n_modes):
        kvec = rng.integers(1, 4, size=grid.dim)
        phase = rng.uniform(0, 2 * np.pi)
        tphase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(-1, 1) * amp_scale / float(np.sum(kvec**2))
        arg = phase
        for a in range(grid.dim):
            arg = arg + 2 * np.pi * kvec[a] * xs[a]
        spatial = np.cos(arg)
        modulation = 1.0 + 0.3 * np.cos(np.pi * t_hat + tphase)
        vals += amp * modulation[:, None] * spatial[None, :]
    vals = np.clip(vals, space.mu, space.R)
    return Trajectory(grid, times, [Field(grid, row) for row in vals])


def rhs_divergence_form(f: Field, c: CoefficientSet, t: float = 0.0) -> Field:
    """Discrete right side in gradient-flow form: div((f/pi) grad(D log f + phi))."""
    mu_chem = Field(f.grid, c.D.values * np.log(f.values) + c.phi.values)
    grad_mu = gradient(mu_chem)
    mobility = f.values / c.pi_at(t).values
    flux = VectorField(f.grid, tuple(mobility * comp for comp in grad_mu.components))
    return divergence(flux)


def rhs_expanded_form(f: Field, c: CoefficientSet, t: float = 0.0) -> Field:
    """Discrete right side in linear-plus-nonlinear form: L f + div(V f log f)."""
    lf = assemble_lfp(c, c.grid, t) @ f.values
    nl = _nonlinear_source(c, f.values, t)
    return Field(f.grid, lf + nl)


def pde_residual(traj: Trajectory, c: CoefficientSet, t_offset: float = 0.0) -> float:
    """Sup norm of the discrete equation residual d_t f - L f - div(V f log f)
    along a trajectory, with centered differencing on each lattice interval."""
    vals = traj.values_matrix()
    worst = 0.0
    for m in range(len(traj.times) - 1):
        delta = traj.times[m + 1] - traj.times[m]
        t_mid = t_offset + 0.5 * (traj.times[m] + traj.times[m + 1])
        favg = Field(traj.grid, 0.5 * (vals[m] + vals[m + 1]))
        rhs = rhs_expanded_form(favg, c, t_mid)
        resid = (vals[m + 1] - vals[m]) / delta - rhs.values
        worst = max(worst, float(np.max(np.abs(resid))))
    return worst
