"""Synthetic planetary terrain: heightmaps, class maps and slip ground truth.

A problem instance is a 96x96 world made of a diamond-square heightmap and a
Perlin-noise terrain-class map.  Each class carries a hidden slip curve
``f(phi) = s0 + amp * tanh(steep * phi)``; noisy slip measurements are
``f(phi) + eps`` with a class- and dataset-dependent noise level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from scipy import ndimage

from . import rng as rngmod
from .errors import DataError, GraphError, ParameterError

KINDS = ("std", "es", "aa")
SPLITS = ("train", "valid", "test")
FULL_INSTANCES_PER_GROUP = {"train": 100, "valid": 50, "test": 10}
GROUPS_PER_SPLIT = 10
STD_GROUP_SIZE = 4

# (row, col) offsets of the 8-connected neighbourhood, in a fixed order
NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
_DIRECTION = {d: k for k, d in enumerate(NEIGHBORS)}

INSTANCE_FORMAT = "terra-risk-instance/1"
DATASET_FORMAT = "terra-risk-dataset/1"


def normalize_kind(kind):
    k = str(kind).lower()
    if k not in KINDS:
        raise ParameterError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    return k


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class HeightMap:
    elevation: np.ndarray
    resolution: float = 1.0

    def __post_init__(self):
        if self.elevation.ndim != 2:
            raise ParameterError("elevation must be a 2-D array")
        if not np.all(np.isfinite(self.elevation)):
            raise ParameterError("elevation contains non-finite values")
        if self.resolution <= 0:
            raise ParameterError("resolution must be positive")

    @property
    def height(self):
        return self.elevation.shape[0]

    @property
    def width(self):
        return self.elevation.shape[1]

    def position(self, cell):
        """3-D position (x, y, z) in metres of a (row, col) cell."""
        r, c = cell
        return np.array([c * self.resolution, r * self.resolution, float(self.elevation[r, c])])


@dataclass(frozen=True)
class ClassMap:
    class_id: np.ndarray

    @property
    def height(self):
        return self.class_id.shape[0]

    @property
    def width(self):
        return self.class_id.shape[1]


@dataclass(frozen=True)
class SlipGroundTruth:
    """Hidden slip model of one terrain class."""

    class_id: int
    s0: float
    amp: float
    steep: float
    noise_sigma: float = 0.05
    noise_scales_with_gradient: bool = False
    gradient_gain: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be non-negative")
        if self.amp < 0 or self.steep < 0:
            raise ParameterError("amp and steep must be non-negative (monotone slip curve)")

    @property
    def params(self):
        return (self.s0, self.amp, self.steep)

    def mean(self, phi):
        return self.s0 + self.amp * np.tanh(self.steep * np.asarray(phi, dtype=float))

    def gradient(self, phi):
        t = np.tanh(self.steep * np.asarray(phi, dtype=float))
        return self.amp * self.steep * (1.0 - t * t)

    def sigma(self, phi):
        phi = np.asarray(phi, dtype=float)
        if not self.noise_scales_with_gradient:
            return np.full(phi.shape, self.noise_sigma) if phi.ndim else float(self.noise_sigma)
        peak = self.amp * self.steep
        rel = self.gradient(phi) / peak if peak > 0 else np.zeros_like(phi)
        return self.noise_sigma * (1.0 + self.gradient_gain * rel)

    def to_dict(self):
        return {
            "class_id": self.class_id,
            "s0": self.s0,
            "amp": self.amp,
            "steep": self.steep,
            "noise_sigma": self.noise_sigma,
            "noise_scales_with_gradient": self.noise_scales_with_gradient,
            "gradient_gain": self.gradient_gain,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            class_id=int(d["class_id"]),
            s0=float(d["s0"]),
            amp=float(d["amp"]),
            steep=float(d["steep"]),
            noise_sigma=float(d["noise_sigma"]),
            noise_scales_with_gradient=bool(d["noise_scales_with_gradient"]),
            gradient_gain=float(d["gradient_gain"]),
        )


@dataclass(frozen=True)
class EnvironmentGroup:
    members: tuple
    occupancy: tuple

    def __post_init__(self):
        members = tuple(int(m) for m in self.members)
        occupancy = tuple(float(o) for o in self.occupancy)
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "occupancy", occupancy)
        if not members or len(members) != len(occupancy):
            raise ParameterError("members and occupancy must be non-empty and equally long")
        if len(set(members)) != len(members):
            raise ParameterError("environment group members must be distinct")
        if any(o <= 0 for o in occupancy):
            raise ParameterError("occupancy ratios must be positive")
        if abs(sum(occupancy) - 1.0) > 1e-9:
            raise ParameterError("occupancy ratios must sum to 1")
        if len(members) > 1 and any(o >= 1.0 for o in occupancy):
            raise ParameterError("degenerate occupancy for a multi-class group")


@dataclass(frozen=True)
class ProblemInstance:
    kind: str
    split: str
    index: int
    seed: int
    heightmap: HeightMap
    classmap: ClassMap
    group: EnvironmentGroup
    slip_models: tuple
    appearance_key: tuple = field(default=())

    @property
    def num_classes(self):
        return len(self.slip_models)

    @property
    def name(self):
        return f"{self.kind}-{self.split}-{self.index:04d}"


# ---------------------------------------------------------------------------
# class tables


@lru_cache(maxsize=None)
def _class_table():
    text = resources.files("terra_risk").joinpath("data/slip_classes.yaml").read_text()
    return yaml.safe_load(text)


def slip_models_for(kind, sigma_base=None, gradient_gain=None):
    """Ground-truth slip models of every class used by a dataset kind."""
    kind = normalize_kind(kind)
    table = _class_table()
    sigma = table["noise"]["sigma_base"] if sigma_base is None else float(sigma_base)
    gain = table["noise"]["gradient_gain"] if gradient_gain is None else float(gradient_gain)
    rows = table["ambiguous" if kind == "aa" else "standard"]
    scaled = kind in ("es", "aa")
    return tuple(
        SlipGroundTruth(
            class_id=i,
            s0=float(r["s0"]),
            amp=float(r["amp"]),
            steep=float(r["steep"]),
            noise_sigma=sigma,
            noise_scales_with_gradient=scaled,
            gradient_gain=gain if scaled else 0.0,
        )
        for i, r in enumerate(rows)
    )


def appearance_keys_for(kind):
    """Colour index of every class; AA classes 2k and 2k+1 share colour k."""
    kind = normalize_kind(kind)
    n = len(_class_table()["ambiguous" if kind == "aa" else "standard"])
    return tuple(c // 2 for c in range(n)) if kind == "aa" else tuple(range(n))


# ---------------------------------------------------------------------------
# heightmaps


def _diamond_square(levels, roughness, rng):
    n = 2**levels + 1
    z = np.zeros((n, n))
    z[:: n - 1, :: n - 1] = rng.uniform(-1.0, 1.0, (2, 2))
    step, scale = n - 1, 1.0
    while step > 1:
        half = step // 2
        # diamond step: square centres
        centres = (z[:-1:step, :-1:step] + z[:-1:step, step::step] + z[step::step, :-1:step] + z[step::step, step::step]) / 4.0
        z[half::step, half::step] = centres + rng.uniform(-scale, scale, centres.shape)
        # square step: edge midpoints, averaged over the neighbours that exist
        p = np.pad(z, half, constant_values=np.nan)
        for r0, c0 in ((0, half), (half, 0)):
            rows = np.arange(r0, n, step)[:, None] + half
            cols = np.arange(c0, n, step)[None, :] + half
            nb = np.stack([p[rows - half, cols], p[rows + half, cols], p[rows, cols - half], p[rows, cols + half]])
            avg = np.nanmean(nb, axis=0)
            z[r0::step, c0::step] = avg + rng.uniform(-scale, scale, avg.shape)
        scale *= roughness
        step = half
    return z


def max_edge_slope(elevation, resolution=1.0):
    """Largest |rise / run| over all 8-neighbour edges."""
    g = 0.0
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        run = resolution * math.hypot(dr, dc)
        a = elevation[max(dr, 0):, max(dc, 0): elevation.shape[1] + min(dc, 0)]
        b = elevation[: elevation.shape[0] - dr, max(-dc, 0): elevation.shape[1] - max(dc, 0)]
        g = max(g, float(np.max(np.abs(a - b))) / run)
    return g


def generate_heightmap(seed, width=96, height=96, roughness=0.5, *, max_pitch_deg=45.0, resolution=1.0):
    """Diamond-square fractal surface, rescaled so no edge pitch exceeds ``max_pitch_deg``.

    The lattice is generated at the smallest ``2**k + 1`` size covering the
    request and bilinearly resampled to ``height x width``.  Elevations are
    rounded to float32 so on-disk rasters reproduce the in-memory map.
    """
    if width < 2 or height < 2:
        raise ParameterError("width and height must be at least 2")
    if not (0.0 < roughness <= 1.0):
        raise ParameterError(f"roughness must lie in (0, 1], got {roughness}")
    if not (0.0 < max_pitch_deg <= 45.0):
        raise ParameterError("max_pitch_deg must lie in (0, 45]")
    levels = max(1, math.ceil(math.log2(max(width, height) - 1)))
    z = _diamond_square(levels, roughness, rngmod.stream(seed, rngmod.HEIGHTMAP))
    n = z.shape[0]
    if (height, width) != (n, n):
        rr, cc = np.meshgrid(np.linspace(0, n - 1, height), np.linspace(0, n - 1, width), indexing="ij")
        z = ndimage.map_coordinates(z, [rr, cc], order=1)
    slope = max_edge_slope(z, resolution)
    if slope > 0:
        # shave a little off so float32 rounding cannot push an edge over the cap
        z = z * (math.tan(math.radians(max_pitch_deg)) * (1 - 1e-4) / slope)
    z = (z - z.min()).astype(np.float32)
    return HeightMap(elevation=z, resolution=float(resolution))


def _neighbor_index(v, w):
    d = (w[0] - v[0], w[1] - v[1])
    if d not in _DIRECTION:
        raise GraphError(f"cells {tuple(v)} and {tuple(w)} are not 8-neighbours")
    return _DIRECTION[d]


def pitch_at_edge(heightmap, v, w):
    """Pitch angle in radians of the move v -> w; positive when ascending."""
    d = _neighbor_index(v, w)
    dr, dc = NEIGHBORS[d]
    for r, c in (v, w):
        if not (0 <= r < heightmap.height and 0 <= c < heightmap.width):
            raise GraphError(f"cell {(r, c)} outside the map")
    rise = float(heightmap.elevation[w]) - float(heightmap.elevation[v])
    run = heightmap.resolution * math.hypot(dr, dc)
    return math.atan2(rise, run)


# ---------------------------------------------------------------------------
# class maps


def perlin_noise(shape, feature_scale, rng, octaves=2, persistence=0.5):
    """Gradient (Perlin) noise on a ``shape`` grid; wavelength ``feature_scale`` cells."""
    h, w = shape
    out = np.zeros(shape)
    amp, scale = 1.0, float(feature_scale)
    for _ in range(octaves):
        gy, gx = int(h / scale) + 2, int(w / scale) + 2
        ang = rng.uniform(0.0, 2 * np.pi, (gy, gx))
        gvx, gvy = np.cos(ang), np.sin(ang)
        y = (np.arange(h) + 0.5) / scale
        x = (np.arange(w) + 0.5) / scale
        y0, x0 = np.floor(y).astype(int), np.floor(x).astype(int)
        fy, fx = (y - y0)[:, None], (x - x0)[None, :]
        Y0, X0 = y0[:, None], x0[None, :]

        def corner(dy, dx):
            return gvx[Y0 + dy, X0 + dx] * (fx - dx) + gvy[Y0 + dy, X0 + dx] * (fy - dy)

        sy = fy * fy * fy * (fy * (fy * 6 - 15) + 10)
        sx = fx * fx * fx * (fx * (fx * 6 - 15) + 10)
        top = corner(0, 0) + sx * (corner(0, 1) - corner(0, 0))
        bot = corner(1, 0) + sx * (corner(1, 1) - corner(1, 0))
        out += amp * (top + sy * (bot - top))
        amp *= persistence
        scale /= 2.0
    return out


def generate_classmap(seed, group, width=96, height=96, feature_scale=24.0):
    """Perlin noise clustered by rank into the group's occupancy quantiles."""
    if feature_scale <= 0:
        raise ParameterError("feature_scale must be positive")
    if not isinstance(group, EnvironmentGroup):
        group = EnvironmentGroup(*group)
    n = width * height
    if len(group.members) == 1:
        return ClassMap(np.full((height, width), group.members[0], dtype=np.uint16))
    noise = perlin_noise((height, width), feature_scale, rngmod.stream(seed, rngmod.CLASSMAP))
    order = np.argsort(noise.ravel(), kind="stable")
    bounds = np.rint(np.cumsum(group.occupancy) * n).astype(int)
    bounds[-1] = n
    labels = np.empty(n, dtype=np.uint16)
    start = 0
    for member, stop in zip(group.members, bounds):
        labels[order[start:stop]] = member
        start = stop
    return ClassMap(labels.reshape(height, width))


# ---------------------------------------------------------------------------
# datasets


def _random_occupancy(rng, k):
    while True:
        occ = rng.dirichlet(np.full(k, 2.0))
        if occ.min() >= 0.05:
            occ = np.round(occ, 6)
            occ[-1] = 1.0 - occ[:-1].sum()
            return tuple(float(o) for o in occ)


def environment_groups(kind, split, seed, n_groups=GROUPS_PER_SPLIT):
    """Distinct random environment groups for one dataset split."""
    kind = normalize_kind(kind)
    rng = rngmod.stream(seed, rngmod.DATASET, KINDS.index(kind), SPLITS.index(split))
    n_classes = len(appearance_keys_for(kind))
    groups, seen = [], set()
    while len(groups) < n_groups:
        if kind == "aa":
            picks = [2 * k + int(rng.integers(2)) for k in range(n_classes // 2)]
            members = [picks[i] for i in rng.permutation(len(picks))]
        else:
            members = [int(c) for c in rng.choice(n_classes, STD_GROUP_SIZE, replace=False)]
        key = frozenset(members)
        if key in seen:
            continue
        seen.add(key)
        groups.append(EnvironmentGroup(tuple(members), _random_occupancy(rng, len(members))))
    return groups


def make_instance(kind, split, index, seed, group, *, size=96, roughness=0.5, max_pitch_deg=45.0,
                  feature_scale=24.0, sigma_base=None, gradient_gain=None):
    kind = normalize_kind(kind)
    hm = generate_heightmap(seed, size, size, roughness, max_pitch_deg=max_pitch_deg)
    cm = generate_classmap(seed, group, size, size, feature_scale)
    return ProblemInstance(
        kind=kind,
        split=split,
        index=index,
        seed=seed,
        heightmap=hm,
        classmap=cm,
        group=group,
        slip_models=slip_models_for(kind, sigma_base, gradient_gain),
        appearance_key=appearance_keys_for(kind),
    )


def make_dataset(kind, split, seed, n_instances=None, *, n_groups=GROUPS_PER_SPLIT, **instance_kw):
    """Generate one split of the Std, ES or AA dataset.

    Instances are assigned to the split's environment groups round-robin;
    the default count is the full-scale 100/50/10 instances per group.
    """
    kind = normalize_kind(kind)
    if split not in SPLITS:
        raise ParameterError(f"unknown split {split!r}")
    if n_instances is None:
        n_instances = FULL_INSTANCES_PER_GROUP[split] * n_groups
    if n_instances < 0:
        raise ParameterError("n_instances must be non-negative")
    groups = environment_groups(kind, split, seed, n_groups)
    out = []
    for i in range(n_instances):
        inst_seed = rngmod.derive_seed(seed, rngmod.DATASET, KINDS.index(kind), SPLITS.index(split), i)
        out.append(make_instance(kind, split, i, inst_seed, groups[i % n_groups], **instance_kw))
    return out


# ---------------------------------------------------------------------------
# slip measurements


def sample_slip(instance, edge, rng):
    """Noisy slip on ``edge = (v, w)``; the class is read at the source cell."""
    v, w = (tuple(int(a) for a in cell) for cell in edge)
    phi = pitch_at_edge(instance.heightmap, v, w)
    model = instance.slip_models[int(instance.classmap.class_id[v])]
    return float(model.mean(phi) + model.sigma(phi) * rng.standard_normal())


def simulate_measurements(model, n, rng, max_pitch_deg=30.0):
    """Training pairs (pitch, slip) drawn uniformly over +-max_pitch_deg."""
    lim = math.radians(max_pitch_deg)
    phi = rng.uniform(-lim, lim, n)
    slip = model.mean(phi) + model.sigma(phi) * rng.standard_normal(n)
    return phi, slip


# ---------------------------------------------------------------------------
# on-disk container


def save_instance(instance, directory):
    """Write rasters, then ``manifest.json`` last as the completion marker."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    instance.heightmap.elevation.astype("<f4").tofile(d / "height.f32")
    instance.classmap.class_id.astype("<u2").tofile(d / "class.u16")
    manifest = {
        "format": INSTANCE_FORMAT,
        "kind": instance.kind,
        "split": instance.split,
        "index": instance.index,
        "seed": instance.seed,
        "width": instance.heightmap.width,
        "height": instance.heightmap.height,
        "resolution": instance.heightmap.resolution,
        "num_classes": instance.num_classes,
        "group": {"members": list(instance.group.members), "occupancy": list(instance.group.occupancy)},
        "slip_models": [m.to_dict() for m in instance.slip_models],
        "appearance_keys": list(instance.appearance_key),
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(directory):
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise DataError(f"no manifest.json in {directory}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt manifest {path}: {exc}") from exc


def _read_raster(path, dtype, shape):
    if not path.exists():
        raise DataError(f"missing raster {path}")
    data = np.fromfile(path, dtype=dtype)
    if data.size != shape[0] * shape[1]:
        raise DataError(f"{path} holds {data.size} values, expected {shape[0] * shape[1]}")
    return data.reshape(shape)


def load_instance(directory):
    d = Path(directory)
    m = read_manifest(d)
    if m.get("format") != INSTANCE_FORMAT:
        raise DataError(f"{d}: unsupported instance format {m.get('format')!r}")
    shape = (int(m["height"]), int(m["width"]))
    elev = _read_raster(d / "height.f32", "<f4", shape).astype(np.float32)
    cls = _read_raster(d / "class.u16", "<u2", shape).astype(np.uint16)
    group = EnvironmentGroup(tuple(m["group"]["members"]), tuple(m["group"]["occupancy"]))
    return ProblemInstance(
        kind=m["kind"],
        split=m["split"],
        index=int(m["index"]),
        seed=int(m["seed"]),
        heightmap=HeightMap(elev, float(m["resolution"])),
        classmap=ClassMap(cls),
        group=group,
        slip_models=tuple(SlipGroundTruth.from_dict(s) for s in m["slip_models"]),
        appearance_key=tuple(int(a) for a in m["appearance_keys"]),
    )
