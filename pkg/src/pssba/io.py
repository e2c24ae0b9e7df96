"""ASCII file formats: trajectories, point clouds, pipeline configs, run summaries.

Trajectory   ``timestamp tx ty tz qx qy qz qw`` per line, ``#`` comments.
Cloud        header line ``x y z frame`` (or ``x y z``), then one row per point.
Config       ``key = value`` lines; keys are :class:`~pssba.pipeline.PipelineConfig` fields.
Summary      ``key: value`` lines.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from .cloud import Frame
from .geometry import Pose, matrix_to_quat, quat_to_matrix
from .pipeline import PipelineConfig, PipelineReport
from .surface_fitting import SURFACE_HEADER


class DataError(ValueError):
    """Malformed or inconsistent input file."""


def _fmt(v: float) -> str:
    return repr(float(v))


def _data_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def read_trajectory(path) -> tuple[np.ndarray, list[Pose]]:
    stamps, poses = [], []
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 8:
            raise DataError(f"{path}:{lineno}: expected 8 values, got {len(parts)}")
        try:
            vals = [float(v) for v in parts]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value") from None
        if not np.all(np.isfinite(vals)):
            raise DataError(f"{path}:{lineno}: non-finite value")
        q = np.array(vals[4:8])
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise DataError(f"{path}:{lineno}: quaternion norm {np.linalg.norm(q):.9f} is not 1")
        if stamps and vals[0] <= stamps[-1]:
            raise DataError(f"{path}:{lineno}: timestamps must be strictly increasing")
        stamps.append(vals[0])
        poses.append(Pose(quat_to_matrix(q), vals[1:4]))
    if not poses:
        raise DataError(f"{path}: no poses")
    return np.array(stamps), poses


def write_trajectory(path, stamps, poses: list[Pose]) -> None:
    if len(stamps) != len(poses):
        raise ValueError("one timestamp per pose required")
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for s, p in zip(stamps, poses):
        vals = [s, *p.t, *matrix_to_quat(p.R)]
        lines.append(" ".join(_fmt(v) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_cloud(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Returns (points, frame indices or None)."""
    header = None
    rows = []
    for lineno, line in _data_lines(path):
        parts = line.split()
        if header is None:
            if parts not in (["x", "y", "z"], ["x", "y", "z", "frame"]):
                raise DataError(f"{path}:{lineno}: header must be 'x y z' or 'x y z frame'")
            header = parts
            continue
        if len(parts) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} values, got {len(parts)}")
        try:
            vals = [float(v) for v in parts[:3]]
            if len(header) == 4:
                vals.append(int(parts[3]))
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed row") from None
        if not np.all(np.isfinite(vals[:3])):
            raise DataError(f"{path}:{lineno}: non-finite coordinate")
        rows.append(vals)
    if header is None:
        raise DataError(f"{path}: missing header line")
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    frames = arr[:, 3].astype(np.int64) if len(header) == 4 else None
    return arr[:, :3], frames


def write_cloud(path, points, frames=None) -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    lines = ["x y z frame" if frames is not None else "x y z"]
    if frames is None:
        lines += [" ".join(_fmt(v) for v in p) for p in pts]
    else:
        lines += [" ".join(_fmt(v) for v in p) + f" {int(f)}" for p, f in zip(pts, frames)]
    Path(path).write_text("\n".join(lines) + "\n")


def frames_from_cloud(points, owner, stamps=None) -> list[Frame]:
    """Split a sensor-frame cloud file into frames 0..N-1."""
    if owner is None:
        raise DataError("frames file needs a 'frame' column")
    if len(owner) and owner.min() < 0:
        raise DataError("frame indices must be non-negative")
    n = int(owner.max()) + 1 if len(owner) else 0
    if stamps is not None:
        if n > len(stamps):
            raise DataError(f"frames file has {n} frames but the trajectory only {len(stamps)}")
        n = len(stamps)
    return [Frame(k, float(stamps[k]) if stamps is not None else float(k),
                  points[owner == k]) for k in range(n)]


def write_frames(path, frames: list[Frame]) -> None:
    pts = np.concatenate([f.points for f in frames]) if frames else np.zeros((0, 3))
    owner = np.concatenate([np.full(len(f), k) for k, f in enumerate(frames)]) if frames \
        else np.zeros(0, dtype=int)
    write_cloud(path, pts, owner)


def _parse_value(kind, text: str):
    if kind in (bool, "bool"):
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    return text


def read_config(path) -> PipelineConfig:
    types = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    values = {}
    for lineno, line in _data_lines(path):
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise DataError(f"{path}:{lineno}: unknown key '{key}'")
        if key in values:
            raise DataError(f"{path}:{lineno}: duplicate key '{key}'")
        try:
            values[key] = _parse_value(types[key], val)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad value for '{key}': {exc}") from None
    cfg = PipelineConfig(**values)
    try:
        cfg.validate()
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    return cfg


def write_config(path, config: PipelineConfig) -> None:
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_surfaces(path, records: np.ndarray) -> None:
    lines = ["# " + SURFACE_HEADER]
    lines += [" ".join(_fmt(v) for v in row) for row in np.asarray(records).reshape(-1, 18)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_surfaces(path) -> np.ndarray:
    rows = []
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 18:
            raise DataError(f"{path}:{lineno}: expected 18 values, got {len(parts)}")
        rows.append([float(v) for v in parts])
    return np.array(rows).reshape(-1, 18)


def report_log_lines(report: PipelineReport) -> list[str]:
    lines = ["# iter gamma_m kernels factors rms_before_m rms_after_m max_update wall_s"]
    for r in report.iterations:
        lines.append(f"{r.iteration} {r.gamma:.6f} {r.kernels} {r.factors} {r.rms_before:.6e} "
                     f"{r.rms_after:.6e} {r.max_update:.6e} {r.wall_time:.3f}")
    return lines


def write_summary(path, items: dict) -> None:
    lines = [f"{k}: {v}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_summary(path) -> dict:
    out = {}
    for lineno, line in _data_lines(path):
        if ":" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key: value'")
        k, v = line.split(":", 1)
        out[k.strip()] = v.strip()
    return out
