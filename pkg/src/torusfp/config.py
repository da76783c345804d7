"""Config-file ingestion: line-oriented "key = value" sections
[grid], [coefficients], [initial], [run], [picard], [kernel], [tolerances].

Coefficient entries are expression strings (D, pi, phi, f0) or snapshot-CSV
tables (D_table, pi_table, phi_table, f0_table; paths relative to the config
file).  See the README for the full key list.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from . import expressions as ex
from .coeff import ProblemSpec, Tolerances
from .errors import UsageError
from .fvsolver import FVConfig
from .grid import TorusGrid, load_field_csv

__all__ = ["PicardOptions", "KernelOptions", "RunConfig", "load_config"]


@dataclass(frozen=True)
class PicardOptions:
    tol: float = 1e-9
    max_iter: int = 40
    nt: int = 64
    nt_per_window: int = 16
    windows: int = 0  # 0 = automatic from the window horizon
    safety: float = 0.5
    envelope_tol: float = 1e-4
    snapshot_stride: int = 8


@dataclass(frozen=True)
class KernelOptions:
    horizon: float = 2e-3
    substeps: int = 600
    ladder_stride: int = 20
    rel_floor: float = 0.02
    sandwich_horizon: float = 0.1
    sandwich_substeps: int = 100
    integral_times: tuple = (0.0, 0.005, 0.01, 0.02)
    integral_substeps: int = 64


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSpec
    fv: FVConfig
    picard: PicardOptions = field(default_factory=PicardOptions)
    kernel: KernelOptions = field(default_factory=KernelOptions)
    seed: int = 0
    snapshot_stride: int = 0
    source_path: Path | None = None
    source_text: str = ""


def _get(cp, section, key, cast, default):
    if not cp.has_section(section) or not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError as err:
        raise UsageError(f"config [{section}] {key} = {raw!r}: {err}") from err


def _coefficient(cp, section, name, base: Path, grid: TorusGrid):
    table_key = f"{name}_table"
    if cp.has_option(section, table_key):
        path = base / cp.get(section, table_key)
        if not path.exists():
            raise UsageError(f"table file not found: {path}")
        return load_field_csv(path, grid)
    if cp.has_option(section, name):
        return ex.parse_expr(cp.get(section, name))
    raise UsageError(f"config section [{section}] must define {name} or {table_key}")


def load_config(path) -> RunConfig:
    """Parse a config file into a RunConfig."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    text = path.read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise UsageError(f"malformed config {path}: {err}") from err

    for section in ("grid", "coefficients", "initial", "run"):
        if not cp.has_section(section):
            raise UsageError(f"config {path} is missing the [{section}] section")

    dim = _get(cp, "grid", "dim", int, 1)
    n = _get(cp, "grid", "n", int, None)
    if n is None:
        raise UsageError("config [grid] must set n")
    grid = TorusGrid(dim, n)
    base = path.parent

    d_coeff = _coefficient(cp, "coefficients", "D", base, grid)
    pi_coeff = _coefficient(cp, "coefficients", "pi", base, grid)
    phi_coeff = _coefficient(cp, "coefficients", "phi", base, grid)
    f0 = _coefficient(cp, "initial", "f0", base, grid)

    tol = Tolerances(
        quadrature=_get(cp, "tolerances", "quadrature", float, 1e-12),
        root=_get(cp, "tolerances", "root", float, 1e-12),
        dt_safety=_get(cp, "run", "dt_safety", float, 0.9),
    )
    problem = ProblemSpec(
        dim=dim,
        n_per_axis=n,
        d_coeff=d_coeff,
        pi_coeff=pi_coeff,
        phi_coeff=phi_coeff,
        f0=f0,
        T_final=_get(cp, "run", "t_final", float, 1.0),
        mu=_get(cp, "run", "mu", float, None),
        lam=_get(cp, "run", "lambda", float, None),
        beta_declared=_get(cp, "run", "beta", float, 0.5),
        tolerances=tol,
    )
    fv = FVConfig(
        dt_safety=tol.dt_safety,
        stepper=_get(cp, "run", "stepper", str, "implicit"),
        max_newton_iter=_get(cp, "run", "max_newton_iter", int, 30),
        newton_tol=_get(cp, "run", "newton_tol", float, 1e-13),
        diag_every=_get(cp, "run", "diag_every", int, 10),
    )
    picard = PicardOptions(
        tol=_get(cp, "picard", "tol", float, 1e-9),
        max_iter=_get(cp, "picard", "max_iter", int, 40),
        nt=_get(cp, "picard", "nt", int, 64),
        nt_per_window=_get(cp, "picard", "nt_per_window", int, 16),
        windows=_get(cp, "picard", "windows", int, 0),
        safety=_get(cp, "picard", "safety", float, 0.5),
        envelope_tol=_get(cp, "picard", "envelope_tol", float, 1e-4),
        snapshot_stride=_get(cp, "picard", "snapshot_stride", int, 8),
    )
    times_raw = _get(cp, "kernel", "integral_times", str, "0,0.005,0.01,0.02")
    try:
        integral_times = tuple(float(tok) for tok in times_raw.split(","))
    except ValueError as err:
        raise UsageError(f"config [kernel] integral_times: {err}") from err
    kernel = KernelOptions(
        horizon=_get(cp, "kernel", "horizon", float, 2e-3),
        substeps=_get(cp, "kernel", "substeps", int, 600),
        ladder_stride=_get(cp, "kernel", "ladder_stride", int, 20),
        rel_floor=_get(cp, "kernel", "rel_floor", float, 0.02),
        sandwich_horizon=_get(cp, "kernel", "sandwich_horizon", float, 0.1),
        sandwich_substeps=_get(cp, "kernel", "sandwich_substeps", int, 100),
        integral_times=integral_times,
        integral_substeps=_get(cp, "kernel", "integral_substeps", int, 64),
    )
    return RunConfig(
        problem=problem,
        fv=fv,
        picard=picard,
        kernel=kernel,
        seed=_get(cp, "run", "seed", int, 0),
        snapshot_stride=_get(cp, "run", "snapshot_stride", int, 0),
        source_path=path,
        source_text=text,
    )
