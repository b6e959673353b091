"""Helpers shared by the experiment scripts."""

import argparse
import dataclasses
import json
import math
from pathlib import Path


def parse_config(cls, description: str, extra=None):
    """Build an argument parser with one ``--field-name`` flag per dataclass field.

    Returns ``(config, args)``; ``extra(parser)`` may add script-specific flags.
    """
    parser = argparse.ArgumentParser(description=description)
    for f in dataclasses.fields(cls):
        default = f.default
        parser.add_argument(f"--{f.name.replace('_', '-')}", type=type(default), default=default, help=f"(default {default})")
    parser.add_argument("--out", type=Path, help="directory for per-iteration CSV and summary JSON")
    if extra is not None:
        extra(parser)
    args = parser.parse_args()
    cfg = cls(**{f.name: getattr(args, f.name) for f in dataclasses.fields(cls)})
    return cfg, args


def write_history(out: Path, name: str, run, angle_column: str, angles) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"n,J,grad_norm_rel,t,q_active,{angle_column}"]
    for rec, a in zip(run.result.records, angles):
        t = "" if rec["t"] is None else repr(rec["t"])
        lines.append(f"{rec['n']},{rec['J']!r},{rec['grad_norm_rel']!r},{t},{rec['q_active']},{a!r}")
    (out / f"{name}.csv").write_text("\n".join(lines) + "\n")


def write_summary(out: Path, summary: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def deg(x: float) -> float:
    return math.degrees(x)
