"""Analytic surface patches with closed-form ray intersection.

Scene file grammar (one patch per line, ``#`` starts a comment; rotations are
rotation vectors in radians, lengths in metres)::

    plane      tx ty tz rx ry rz  xmin xmax ymin ymax
    paraboloid tx ty tz rx ry rz  a b  xmin xmax ymin ymax      # z = a x^2 + b y^2
    cylinder   tx ty tz rx ry rz  radius xmin xmax              # axis = local x
    sphere     cx cy cz radius
    sine       tx ty tz rx ry rz  amp wx wy  xmin xmax ymin ymax  # z = amp (sin 2pi x/wx + sin 2pi y/wy)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose, exp_map, log_map

EPS_HIT = 1e-6


def _smallest_valid_root(A, B, C, ok_fn):
    """Smallest positive root of A s^2 + B s + C = 0 whose local point passes ``ok_fn``."""
    n = len(C)
    s_out = np.full(n, np.inf)
    disc = B * B - 4 * A * C
    real = disc >= 0
    sq = np.sqrt(np.where(real, disc, 0.0))
    lin = np.abs(A) < 1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        # numerically stable pair of roots
        q = -0.5 * (B + np.copysign(sq, B))
        r1 = np.where(lin, -C / B, q / A)
        r2 = np.where(lin, np.inf, C / q)
    lo = np.minimum(r1, r2)
    hi = np.maximum(r1, r2)
    for s in (lo, hi):
        cand = real & np.isfinite(s) & (s > EPS_HIT) & ~np.isfinite(s_out)
        if np.any(cand):
            good = ok_fn(np.where(cand, s, 0.0)) & cand
            s_out[good] = s[good]
    return s_out


@dataclass
class Patch:
    pose: Pose = field(default_factory=Pose)

    kind = "patch"

    def to_local(self, p):
        return (np.asarray(p, dtype=float) - self.pose.t) @ self.pose.R

    def _local_ray(self, o, d):
        return self.to_local(o), np.asarray(d, dtype=float) @ self.pose.R

    def intersect(self, origins, dirs) -> np.ndarray:
        """Ray parameter of the first hit (inf on miss); ``dirs`` must be unit length."""
        o, d = self._local_ray(np.broadcast_to(origins, dirs.shape), dirs)
        return self._intersect_local(o, d)

    def implicit(self, p_world) -> np.ndarray:
        """Zero on the surface (used as the ground-truth membership oracle)."""
        return self._implicit_local(self.to_local(p_world))

    def _pose_params(self):
        return [*self.pose.t, *log_map(self.pose.R)]

    def params(self) -> list[float]:
        raise NotImplementedError


def _in_range(v, lo, hi):
    return (v >= lo) & (v <= hi)


@dataclass
class Plane(Patch):
    xr: tuple = (-10.0, 10.0)
    yr: tuple = (-10.0, 10.0)
    kind = "plane"

    def _intersect_local(self, o, d):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -o[:, 2] / d[:, 2]
        p = o + s[:, None] * d
        ok = (np.isfinite(s) & (s > EPS_HIT) & _in_range(p[:, 0], *self.xr)
              & _in_range(p[:, 1], *self.yr))
        return np.where(ok, s, np.inf)

    def _implicit_local(self, p):
        return p[..., 2]

    def params(self):
        return self._pose_params() + [*self.xr, *self.yr]


@dataclass
class Paraboloid(Patch):
    a: float = 0.05
    b: float = 0.05
    xr: tuple = (-10.0, 10.0)
    yr: tuple = (-10.0, 10.0)
    kind = "paraboloid"

    def _intersect_local(self, o, d):
        A = self.a * d[:, 0] ** 2 + self.b * d[:, 1] ** 2
        B = 2 * (self.a * o[:, 0] * d[:, 0] + self.b * o[:, 1] * d[:, 1]) - d[:, 2]
        C = self.a * o[:, 0] ** 2 + self.b * o[:, 1] ** 2 - o[:, 2]

        def ok(s):
            p = o + s[:, None] * d
            return _in_range(p[:, 0], *self.xr) & _in_range(p[:, 1], *self.yr)
        return _smallest_valid_root(A, B, C, ok)

    def _implicit_local(self, p):
        return self.a * p[..., 0] ** 2 + self.b * p[..., 1] ** 2 - p[..., 2]

    def params(self):
        return self._pose_params() + [self.a, self.b, *self.xr, *self.yr]


@dataclass
class Cylinder(Patch):
    radius: float = 5.0
    xr: tuple = (-20.0, 20.0)
    kind = "cylinder"

    def _intersect_local(self, o, d):
        A = d[:, 1] ** 2 + d[:, 2] ** 2
        B = 2 * (o[:, 1] * d[:, 1] + o[:, 2] * d[:, 2])
        C = o[:, 1] ** 2 + o[:, 2] ** 2 - self.radius ** 2

        def ok(s):
            return _in_range(o[:, 0] + s * d[:, 0], *self.xr)
        return _smallest_valid_root(A, B, C, ok)

    def _implicit_local(self, p):
        return np.sqrt(p[..., 1] ** 2 + p[..., 2] ** 2) - self.radius

    def params(self):
        return self._pose_params() + [self.radius, *self.xr]


@dataclass
class Sphere(Patch):
    radius: float = 1.0
    kind = "sphere"

    def _intersect_local(self, o, d):
        A = np.ones(len(o))
        B = 2 * np.einsum("ij,ij->i", o, d)
        C = np.einsum("ij,ij->i", o, o) - self.radius ** 2
        return _smallest_valid_root(A, B, C, lambda s: np.ones(len(s), dtype=bool))

    def _implicit_local(self, p):
        return np.linalg.norm(p, axis=-1) - self.radius

    @property
    def center(self):
        return self.pose.t

    def params(self):
        return [*self.pose.t, self.radius]


@dataclass
class Sine(Patch):
    amp: float = 1.0
    wx: float = 10.0
    wy: float = 10.0
    xr: tuple = (-20.0, 20.0)
    yr: tuple = (-20.0, 20.0)
    max_range: float = 60.0
    step: float = 0.05
    kind = "sine"

    def _height(self, x, y):
        return self.amp * (np.sin(2 * np.pi * x / self.wx) + np.sin(2 * np.pi * y / self.wy))

    def _h(self, o, d, s):
        p = o + s[..., None] * d
        return p[..., 2] - self._height(p[..., 0], p[..., 1])

    def _intersect_local(self, o, d):
        n = len(o)
        s_grid = np.arange(EPS_HIT, self.max_range + self.step, self.step)
        out = np.full(n, np.inf)
        for start in range(0, n, 512):
            sl = slice(start, min(start + 512, n))
            oo, dd = o[sl], d[sl]
            p = oo[:, None, :] + s_grid[None, :, None] * dd[:, None, :]
            h = p[..., 2] - self._height(p[..., 0], p[..., 1])
            inside = _in_range(p[..., 0], *self.xr) & _in_range(p[..., 1], *self.yr)
            change = (np.sign(h[:, :-1]) != np.sign(h[:, 1:])) & inside[:, :-1] & inside[:, 1:]
            has = change.any(axis=1)
            if not np.any(has):
                continue
            first = np.argmax(change, axis=1)
            rows = np.flatnonzero(has)
            lo = s_grid[first[rows]]
            hi = s_grid[first[rows] + 1]
            o2, d2 = oo[rows], dd[rows]
            h_lo = self._h(o2, d2, lo)
            for _ in range(64):
                mid = 0.5 * (lo + hi)
                h_mid = self._h(o2, d2, mid)
                same = np.sign(h_mid) == np.sign(h_lo)
                lo = np.where(same, mid, lo)
                h_lo = np.where(same, h_mid, h_lo)
                hi = np.where(same, hi, mid)
            out[np.arange(sl.start, sl.stop)[rows]] = 0.5 * (lo + hi)
        return out

    def _implicit_local(self, p):
        return p[..., 2] - self._height(p[..., 0], p[..., 1])

    def params(self):
        return self._pose_params() + [self.amp, self.wx, self.wy, *self.xr, *self.yr]


@dataclass
class Scene:
    patches: list

    def intersect(self, origin, dirs) -> np.ndarray:
        """Nearest hit distance over all patches (inf on miss)."""
        best = np.full(len(dirs), np.inf)
        for patch in self.patches:
            best = np.minimum(best, patch.intersect(origin, dirs))
        return best

    def distance_to_surface(self, p_world) -> np.ndarray:
        """min over patches of |implicit|; exact metric distance for planes, spheres, cylinders."""
        vals = np.stack([np.abs(patch.implicit(p_world)) for patch in self.patches])
        return vals.min(axis=0)


_ARITY = {"plane": 10, "paraboloid": 12, "cylinder": 9, "sphere": 4, "sine": 13}


def _pose_from(vals):
    return Pose(exp_map(vals[3:6]), vals[0:3])


def make_patch(kind: str, vals: list[float]) -> Patch:
    if kind not in _ARITY:
        raise ValueError(f"unknown patch type '{kind}'")
    if len(vals) != _ARITY[kind]:
        raise ValueError(f"{kind} takes {_ARITY[kind]} numbers, got {len(vals)}")
    if kind == "plane":
        return Plane(_pose_from(vals), tuple(vals[6:8]), tuple(vals[8:10]))
    if kind == "paraboloid":
        return Paraboloid(_pose_from(vals), vals[6], vals[7], tuple(vals[8:10]), tuple(vals[10:12]))
    if kind == "cylinder":
        if vals[6] <= 0:
            raise ValueError("cylinder radius must be positive")
        return Cylinder(_pose_from(vals), vals[6], tuple(vals[7:9]))
    if kind == "sphere":
        if vals[3] <= 0:
            raise ValueError("sphere radius must be positive")
        return Sphere(Pose(np.eye(3), vals[0:3]), vals[3])
    return Sine(_pose_from(vals), vals[6], vals[7], vals[8], tuple(vals[9:11]), tuple(vals[11:13]))


def parse_scene(text: str, source: str = "<scene>") -> Scene:
    patches = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *rest = line.split()
        try:
            vals = [float(v) for v in rest]
            patches.append(make_patch(kind.lower(), vals))
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    if not patches:
        raise ValueError(f"{source}: scene has no patches")
    return Scene(patches)


def format_scene(scene: Scene) -> str:
    lines = ["# patch parameters (see pssba.simbench.scene for the grammar)"]
    for p in scene.patches:
        lines.append(" ".join([p.kind] + [repr(float(v)) for v in p.params()]))
    return "\n".join(lines) + "\n"
