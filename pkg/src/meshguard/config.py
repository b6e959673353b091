"""Run configuration (a single JSON document) and deformation-field files.

Config keys mirror the :class:`RunConfig` fields; nested objects hold the
threshold policy, the elasticity parameters and the functional terms::

    {
      "mesh_path": "disk.msh",
      "fixed_boundary_groups": [],
      "threshold": {"kind": "global", "alpha_thr": 0.4363},
      "epsilon": 0.01,
      "elasticity": {"mu_elas": 1.0, "delta_elas": 1.0},
      "functional": [{"type": "perimeter", "weight": 0.01}],
      "method": "gd",
      "n_max": 100,
      "output_dir": "out"
    }

Angles are in radians. Relative paths are resolved against the directory
of the config file.
"""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path
from typing import Any

import numpy as np

from meshguard.elasticity import ElasticityParams
from meshguard.functionals import FunctionalSpec, spec_from_list
from meshguard.mesh import SimplicialMesh, atomic_write_text
from meshguard.optimizer import OptimizerOptions
from meshguard.quality import ThresholdPolicy


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclasses.dataclass
class RunConfig:
    mesh_path: str
    functional: list[dict]
    fixed_boundary_groups: list[str] = dataclasses.field(default_factory=list)
    threshold: dict = dataclasses.field(default_factory=lambda: {"kind": "global", "alpha_thr": 0.436})
    epsilon: float = 1e-2
    elasticity: dict = dataclasses.field(default_factory=dict)
    method: str = "gd"
    lbfgs_memory: int = 5
    t0: float = 1.0
    sigma: float = 1e-4
    omega: float = 0.5
    tau_stop: float = 1e-3
    n_max: int = 100
    kkt_tol: float = 1e-8
    output_dir: str = "output"
    constraints_enabled: bool = True

    # -- construction ---------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: str | os.PathLike | None = None) -> RunConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        missing = [n for n in ("mesh_path", "functional") if n not in data]
        if missing:
            raise ConfigError(f"missing config field(s): {', '.join(missing)}")
        cfg = cls(**data)
        if base_dir is not None:
            base = Path(base_dir)
            if not Path(cfg.mesh_path).is_absolute():
                cfg.mesh_path = str(base / cfg.mesh_path)
            if not Path(cfg.output_dir).is_absolute():
                cfg.output_dir = str(base / cfg.output_dir)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike) -> RunConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        return cls.from_dict(data, base_dir=path.parent)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    # -- derived objects --------------------------------------------------

    def policy(self) -> ThresholdPolicy:
        return ThresholdPolicy(**self.threshold)

    def elasticity_params(self) -> ElasticityParams:
        return ElasticityParams(**self.elasticity)

    def functional_spec(self) -> FunctionalSpec:
        return spec_from_list(self.functional)

    def options(self) -> OptimizerOptions:
        return OptimizerOptions(
            method=self.method,
            lbfgs_memory=self.lbfgs_memory,
            t0=self.t0,
            sigma=self.sigma,
            omega=self.omega,
            tau=self.tau_stop,
            n_max=self.n_max,
            epsilon=self.epsilon,
            kkt_tol=self.kkt_tol,
        )

    def validate(self) -> None:
        """Check every field against the owning module's invariants."""
        try:
            self.policy()
            self.elasticity_params()
            self.functional_spec()
            self.options()
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        if not self.kkt_tol > 0:
            raise ConfigError("kkt_tol must be positive")
        if not isinstance(self.fixed_boundary_groups, list):
            raise ConfigError("fixed_boundary_groups must be a list of group names")

    def validate_for_mesh(self, mesh: SimplicialMesh) -> None:
        missing = [g for g in self.fixed_boundary_groups if g not in mesh.boundary]
        if missing:
            raise ConfigError(
                f"boundary group(s) {', '.join(missing)} not in mesh "
                f"(available: {', '.join(sorted(mesh.boundary)) or 'none'})"
            )
        try:
            self.policy().check_dimension(mesh.dim)
            self.elasticity_params().validate(mesh.dim, bool(self.fixed_boundary_groups))
        except ValueError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


def read_field(path: str | os.PathLike, mesh: SimplicialMesh) -> np.ndarray:
    """Read a deformation field (one line per node, ``d`` numbers) as a flat vector."""
    try:
        data = np.loadtxt(path, dtype=float, ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read field file {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"malformed field file {path}: {exc}") from exc
    if data.shape != (mesh.node_count, mesh.dim):
        raise ConfigError(
            f"field file {path} has shape {data.shape}, mesh needs ({mesh.node_count}, {mesh.dim})"
        )
    return data.reshape(-1)


def format_field(values: np.ndarray, dim: int) -> str:
    rows = np.asarray(values, dtype=float).reshape(-1, dim)
    return "".join(" ".join(f"{v:.17g}" for v in row) + "\n" for row in rows)


def write_field(path: str | os.PathLike, values: np.ndarray, dim: int) -> None:
    atomic_write_text(path, format_field(values, dim))
