"""Write example meshes and run configurations for the ``meshguard`` CLI.

    python scripts/make_examples.py [--dir examples_run]

Creates ``disk.msh`` (1944 triangles), ``ball.msh`` (4374 tetrahedra),
``disk_star.json`` and ``ball_squeeze.json``. The configs mirror the
desk experiments, so ``meshguard optimize --config DIR/disk_star.json``
reproduces the constrained disk run.
"""

import argparse
import dataclasses
import json
import math
from pathlib import Path

from meshguard.experiments import BallSqueezeConfig, DiskStarConfig
from meshguard.mesh import save_mesh
from meshguard.meshgen import ball, disk


def disk_config(cfg: DiskStarConfig) -> dict:
    return {
        "mesh_path": "disk.msh",
        "functional": [
            {"type": "target_distance", "reference": {"kind": "star", "radius": 1.0, "amplitude": cfg.star_amplitude, "lobes": cfg.lobes}},
            {"type": "perimeter", "weight": cfg.perimeter_weight},
        ],
        "threshold": {"kind": "global", "alpha_thr": math.radians(cfg.alpha_thr_deg)},
        "epsilon": cfg.epsilon,
        "elasticity": {"delta_elas": cfg.delta_elas},
        "n_max": cfg.n_max,
        "tau_stop": cfg.tau,
        "output_dir": "out_disk_star",
    }


def ball_config(cfg: BallSqueezeConfig) -> dict:
    return {
        "mesh_path": "ball.msh",
        "functional": [
            {"type": "target_distance", "reference": {"kind": "squeeze", "amplitude": cfg.squeeze_amplitude, "axis": cfg.axis}},
        ],
        "threshold": {"kind": "relative", "nu": cfg.nu},
        "epsilon": cfg.epsilon,
        "elasticity": {"delta_elas": cfg.delta_elas},
        "n_max": cfg.n_max,
        "tau_stop": cfg.tau,
        "output_dir": "out_ball_squeeze",
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dir", type=Path, default=Path("examples_run"))
    args = parser.parse_args()
    args.dir.mkdir(parents=True, exist_ok=True)
    d, b = DiskStarConfig(), BallSqueezeConfig()
    save_mesh(disk(d.n_rings), args.dir / "disk.msh")
    save_mesh(ball(b.n), args.dir / "ball.msh")
    for name, data in (("disk_star.json", disk_config(d)), ("ball_squeeze.json", ball_config(b))):
        (args.dir / name).write_text(json.dumps(data, indent=2) + "\n")
    print(f"wrote disk.msh, ball.msh, disk_star.json, ball_squeeze.json to {args.dir}")


if __name__ == "__main__":
    main()
