"""Experiment configuration, the solve pipeline, sweeps and reports."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .assembly import MediumKind, MediumSpec, assemble_point_source, assemble_system, element_data
from .linalg import NumericalError, gmres
from .mesh import build_unit_square_mesh
from .partition import graph_partition, uniform_partition
from .schwarz import RAS, TwoLevel, build_local_problems, dtn_coarse_space, parallel_map

logger = logging.getLogger(__name__)

# (n_glob, k) pairs used throughout the reference tables
CANONICAL_PAIRS: tuple[tuple[int, float], ...] = (
    (100, 18.5),
    (200, 29.3),
    (400, 46.5),
    (800, 73.8),
    (1600, 117.2),
)
DESK_MAX_N_GLOB = 400

CSV_COLUMNS = ["n_glob", "k_or_omega", "rho", "variant", "N", "alpha", "iters", "coarse_dim", "converged", "seconds"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    n_glob: int = 100
    medium: str = "homogeneous"
    k: float | None = 18.5
    omega: float | None = None
    rho: float | None = None
    partition: str = "uniform"  # uniform | graph | file
    subdomains: int = 25
    partition_file: str | None = None
    alpha: float = 1.0
    rtol: float = 1e-6
    max_it: int = 500
    one_level: bool = False
    overlap: int = 1
    overlap_mode: str = "element"  # element | dof
    side: str = "right"
    allow_large: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.n_glob < 2:
            raise ConfigError(f"n_glob must be >= 2, got {self.n_glob}")
        if self.n_glob > DESK_MAX_N_GLOB and not self.allow_large:
            raise ConfigError(f"n_glob={self.n_glob} exceeds the desk envelope {DESK_MAX_N_GLOB}; pass --large (allow_large)")
        if not 0 < self.rtol < 1:
            raise ConfigError(f"rtol must lie in (0, 1), got {self.rtol}")
        if not 0.5 <= self.alpha <= 2:
            raise ConfigError(f"alpha must lie in [0.5, 2], got {self.alpha}")
        if self.max_it < 1:
            raise ConfigError("max_it must be >= 1")
        if self.partition not in ("uniform", "graph", "file"):
            raise ConfigError(f"unknown partition kind {self.partition!r}")
        if self.partition == "uniform" and math.isqrt(self.subdomains) ** 2 != self.subdomains:
            raise ConfigError(f"uniform partition needs a square subdomain count, got {self.subdomains}")
        if self.partition == "file" and not self.partition_file:
            raise ConfigError("partition=file needs partition_file")
        if self.overlap < 0:
            raise ConfigError("overlap must be >= 0")
        if self.overlap_mode not in ("element", "dof"):
            raise ConfigError(f"overlap_mode must be element or dof, got {self.overlap_mode!r}")
        if self.side not in ("right", "left"):
            raise ConfigError(f"side must be right or left, got {self.side!r}")
        try:
            self.medium_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def medium_spec(self) -> MediumSpec:
        kind = MediumKind(self.medium)
        if kind is MediumKind.HOMOGENEOUS:
            return MediumSpec.homogeneous(self.k)
        return MediumSpec(kind, omega=self.omega, rho=self.rho)

    @property
    def frequency(self) -> float:
        return self.k if self.medium == "homogeneous" else self.omega

    @classmethod
    def from_mapping(cls, values: dict[str, Any], base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        base = cls() if base is None else base
        types = {f.name: f.type for f in fields(cls)}
        updates = {}
        for key, raw in values.items():
            name = key.strip().replace("-", "_")
            if name not in types:
                raise ConfigError(f"unknown config key {key!r}")
            updates[name] = _coerce(name, types[name], raw)
        return replace(base, **updates)

    @classmethod
    def from_file(cls, path: str | Path, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        """Read a flat ``key = value`` file (``#`` starts a comment)."""
        values = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, val = line.split("=", 1)
                values[key.strip()] = val.strip()
        return cls.from_mapping(values, base)


def _coerce(name: str, typ: str, raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    if raw.lower() in ("none", ""):
        return None
    try:
        if "bool" in typ:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "int" in typ:
            return int(raw)
        if "float" in typ:
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {name}") from None
    return raw


@dataclass
class RunRecord:
    config: ExperimentConfig
    iterations: int = 0
    coarse_dim: int = 0
    eigen_counts: list[int] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    converged: bool = False
    true_residual: float = float("nan")
    error: str | None = None

    @property
    def seconds(self) -> float:
        return float(sum(self.timings.values()))

    @property
    def N(self) -> int:
        return self.config.subdomains

    def csv_row(self) -> dict[str, Any]:
        c = self.config
        return {
            "n_glob": c.n_glob,
            "k_or_omega": c.frequency,
            "rho": "" if c.rho is None else c.rho,
            "variant": c.medium,
            "N": self.N,
            "alpha": c.alpha,
            "iters": self.iterations,
            "coarse_dim": self.coarse_dim,
            "converged": int(self.converged),
            "seconds": round(self.seconds, 6),
        }


def run(config: ExperimentConfig, diagnostics: list | None = None) -> RunRecord:
    """Mesh, assemble, decompose, build the coarse space and solve with GMRES.

    Numerical failures propagate as :class:`NumericalError`; GMRES running
    out of iterations is reported through ``converged`` only.
    """
    config.validate()
    timings: dict[str, float] = {}
    t = time.perf_counter()

    def tick(name: str):
        nonlocal t
        now = time.perf_counter()
        timings[name] = now - t
        t = now

    mesh = build_unit_square_mesh(config.n_glob)
    medium = config.medium_spec()
    data = element_data(mesh, medium)
    A, dofmap = assemble_system(mesh, medium, data)
    f = assemble_point_source(mesh, dofmap, (0.5, 0.5))
    tick("assembly")

    if config.partition == "uniform":
        dec = uniform_partition(
            mesh, dofmap, math.isqrt(config.subdomains), config.overlap, mode=config.overlap_mode
        )
    else:
        dec = graph_partition(
            mesh, dofmap, config.subdomains, config.overlap,
            partition_file=config.partition_file if config.partition == "file" else None,
            mode=config.overlap_mode,
        )
    tick("partition")

    locals_ = build_local_problems(A, mesh, medium, dec, dofmap, data)
    ras = RAS(locals_)
    tick("local_factorization")

    counts: list[int] = []
    coarse_dim = 0
    precond = ras
    if not config.one_level:
        coarse, reports = dtn_coarse_space(A, locals_, config.alpha)
        counts = coarse.counts
        coarse_dim = int(sum(counts))
        if coarse.dropped:
            logger.warning("%d coarse columns dropped for rank deficiency", len(coarse.dropped))
        if diagnostics is not None:
            diagnostics.extend(reports)
        precond = TwoLevel(ras, coarse, A)
    tick("coarse_space")

    result = gmres(lambda v: A @ v, precond, f, rtol=config.rtol, max_it=config.max_it, side=config.side)
    tick("gmres")
    if not result.converged:
        logger.warning("GMRES did not converge in %d iterations", result.iterations)
    return RunRecord(
        config=config,
        iterations=result.iterations,
        coarse_dim=coarse_dim,
        eigen_counts=list(counts),
        residuals=result.residuals,
        timings=timings,
        converged=result.converged,
        true_residual=result.true_residual,
    )


SWEEP_AXES = ("alpha", "N", "n_glob_k", "rho")


def sweep_configs(axis: str, values: Sequence, base: ExperimentConfig) -> list[ExperimentConfig]:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    if len(values) == 0:
        raise ConfigError("sweep needs at least one value")
    out = []
    for v in values:
        if axis == "alpha":
            out.append(replace(base, alpha=float(v)))
        elif axis == "N":
            out.append(replace(base, subdomains=int(v)))
        elif axis == "rho":
            out.append(replace(base, rho=float(v)))
        else:
            n_glob, freq = v
            if base.medium == "homogeneous":
                out.append(replace(base, n_glob=int(n_glob), k=float(freq)))
            else:
                out.append(replace(base, n_glob=int(n_glob), omega=float(freq)))
    return out


def sweep(axis: str, values: Sequence, base: ExperimentConfig, workers: int | None = None) -> list[RunRecord]:
    """One record per value, in input order.

    Runs that raise are logged and returned with ``error`` set.
    """
    configs = sweep_configs(axis, values, base)

    def guarded(cfg: ExperimentConfig) -> RunRecord:
        try:
            return run(cfg)
        except (NumericalError, ValueError) as exc:
            logger.error("run %s failed: %s", cfg, exc)
            return RunRecord(config=cfg, error=str(exc))

    return parallel_map(guarded, configs, workers)


def emit_csv(records: Iterable[RunRecord], path: str | Path) -> None:
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in records:
            w.writerow(r.csv_row())


def read_csv(path: str | Path) -> list[dict[str, Any]]:
    """Parse a CSV written by :func:`emit_csv` back into typed rows."""
    ints = {"n_glob", "N", "iters", "coarse_dim", "converged"}
    floats = {"k_or_omega", "alpha", "seconds"}
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row: dict[str, Any] = {}
            for key, val in raw.items():
                if key in ints:
                    row[key] = int(val)
                elif key in floats:
                    row[key] = float(val)
                elif key == "rho":
                    row[key] = float(val) if val else None
                else:
                    row[key] = val
            rows.append(row)
    return rows


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


_AXIS_GETTERS = {
    "N": lambda r: r.N,
    "k": lambda r: r.config.frequency,
    "n_glob": lambda r: r.config.n_glob,
    "alpha": lambda r: r.config.alpha,
    "rho": lambda r: r.config.rho,
    "iters": lambda r: r.iterations,
    "coarse_dim": lambda r: r.coarse_dim,
    "seconds": lambda r: r.seconds,
}


def emit_svg_plot(
    records: Iterable[RunRecord],
    path: str | Path,
    x: str = "N",
    y: str = "coarse_dim",
    logx: bool = False,
    logy: bool = False,
) -> None:
    """Static scatter/line plot of one record field against another."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    records = [r for r in records if r.error is None]
    if not records:
        raise ValueError("no records to plot")
    if x not in _AXIS_GETTERS or y not in _AXIS_GETTERS:
        raise ValueError(f"axes must be among {sorted(_AXIS_GETTERS)}")
    xs = np.array([_AXIS_GETTERS[x](r) for r in records], float)
    ys = np.array([_AXIS_GETTERS[y](r) for r in records], float)
    order = np.argsort(xs, kind="stable")
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(xs[order], ys[order], "o-")
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    if logx and logy and len(xs) > 1:
        ax.set_title(f"log-log slope {loglog_slope(xs, ys):.2f}")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def record_summary(record: RunRecord) -> dict[str, Any]:
    out = record.csv_row()
    out["true_residual"] = record.true_residual
    out["eigen_counts"] = record.eigen_counts
    out["timings"] = record.timings
    out["config"] = asdict(record.config)
    return out
