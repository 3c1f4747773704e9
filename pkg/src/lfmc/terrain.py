"""1D heightfield terrains: flat ground, Perlin rough ground, stairs and bricks.

Heights are sampled on a uniform grid and queried by piecewise-linear
interpolation, with constant extension past either end of the grid.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from lfmc.seeding import rng_for

KINDS = ("flat", "perlin", "stairs", "bricks")

DEFAULT_PARAMS = {
    "x_min": -12.0,
    "x_max": 20.0,
    "spacing": 0.02,
    # perlin
    "max_extrusion": 0.15,
    "base_wavelength": 1.5,
    "octaves": 3,
    "persistence": 0.5,
    # stairs
    "stair_start": 1.0,
    "stair_rise": 0.08,
    "stair_run": 0.3,
    "stair_count": 5,
    # bricks
    "brick_start": 0.8,
    "brick_height_min": 0.02,
    "brick_height_max": 0.10,
    "brick_width_min": 0.2,
    "brick_width_max": 0.5,
}


class TerrainError(ValueError):
    pass


@dataclass(eq=False)
class Terrain:
    kind: str
    heights: np.ndarray
    x0: float = DEFAULT_PARAMS["x_min"]
    spacing: float = DEFAULT_PARAMS["spacing"]
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TerrainError(f"unknown terrain kind {self.kind!r}")
        if not self.spacing > 0:
            raise TerrainError("terrain sample spacing must be positive")
        self.heights = np.asarray(self.heights, dtype=float)

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.spacing * np.arange(len(self.heights))

    def height(self, x):
        return terrain_height(self, x)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["x", "height"])
            for x, h in zip(self.xs, self.heights):
                w.writerow([repr(float(x)), repr(float(h))])

    @classmethod
    def from_csv(cls, path, kind="flat", seed=0):
        xs, hs = [], []
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = next(r)
            if [c.strip() for c in header] != ["x", "height"]:
                raise TerrainError(f"{path}: expected header 'x,height', got {header}")
            for row in r:
                xs.append(float(row[0]))
                hs.append(float(row[1]))
        if len(xs) < 2:
            raise TerrainError(f"{path}: need at least two samples")
        steps = np.diff(xs)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise TerrainError(f"{path}: samples must be uniformly spaced")
        return cls(kind=kind, heights=np.array(hs), x0=xs[0], spacing=float(steps[0]), seed=seed)


def terrain_height(terrain: Terrain, x):
    """Height of ``terrain`` at horizontal position(s) ``x``."""
    return np.interp(x, terrain.xs, terrain.heights)


def _perlin_1d(xs, rng, octaves, persistence, base_wavelength):
    total = np.zeros_like(xs)
    amp, wavelength = 1.0, base_wavelength
    for _ in range(octaves):
        u = (xs - xs[0]) / wavelength
        cell = np.floor(u).astype(int)
        t = u - cell
        grads = rng.uniform(-1.0, 1.0, size=cell.max() + 2)
        g0, g1 = grads[cell], grads[cell + 1]
        fade = t * t * t * (t * (t * 6 - 15) + 10)
        total += amp * ((1 - fade) * g0 * t + fade * g1 * (t - 1))
        amp *= persistence
        wavelength /= 2
    return total


def generate_terrain(kind: str, seed: int = 0, params: dict | None = None) -> Terrain:
    """Build a terrain. Pure function of ``(kind, seed, params)``."""
    if kind not in KINDS:
        raise TerrainError(f"unknown terrain kind {kind!r}; expected one of {KINDS}")
    p = dict(DEFAULT_PARAMS)
    for key, value in (params or {}).items():
        if key not in DEFAULT_PARAMS:
            raise TerrainError(f"unknown terrain parameter {key!r}")
        p[key] = value
    if not p["spacing"] > 0:
        raise TerrainError("spacing must be positive")
    if not p["x_max"] > p["x_min"]:
        raise TerrainError("x_max must exceed x_min")
    n = int(round((p["x_max"] - p["x_min"]) / p["spacing"])) + 1
    xs = p["x_min"] + p["spacing"] * np.arange(n)
    rng = rng_for(seed, "terrain-" + kind)

    if kind == "flat":
        heights = np.zeros(n)
    elif kind == "perlin":
        if not p["max_extrusion"] > 0:
            raise TerrainError("perlin terrain needs max_extrusion > 0")
        if int(p["octaves"]) < 1 or not p["base_wavelength"] > 0:
            raise TerrainError("perlin terrain needs octaves >= 1 and base_wavelength > 0")
        raw = _perlin_1d(xs, rng, int(p["octaves"]), p["persistence"], p["base_wavelength"])
        lo, hi = raw.min(), raw.max()
        heights = p["max_extrusion"] * (raw - lo) / (hi - lo)
        # flatten the spawn area so every rollout starts from the same footing
        heights = np.where(np.abs(xs) < 0.5, heights[np.argmin(np.abs(xs))], heights)
    elif kind == "stairs":
        if not (p["stair_rise"] > 0 and p["stair_run"] > 0 and int(p["stair_count"]) >= 1):
            raise TerrainError("stairs need positive rise, run and count")
        k = int(p["stair_count"])
        s = np.floor((xs - p["stair_start"]) / p["stair_run"]) + 1
        up = np.clip(s, 0, k)
        down_start = p["stair_start"] + (k + 2) * p["stair_run"]
        down = np.clip(np.floor((xs - down_start) / p["stair_run"]) + 1, 0, k)
        heights = p["stair_rise"] * (up - down)
    else:
        hmin, hmax = p["brick_height_min"], p["brick_height_max"]
        wmin, wmax = p["brick_width_min"], p["brick_width_max"]
        if not (0 <= hmin <= hmax and 0 < wmin <= wmax):
            raise TerrainError("bricks need 0 <= height_min <= height_max and 0 < width_min <= width_max")
        heights = np.zeros(n)
        edge = p["brick_start"]
        while edge < p["x_max"]:
            w = rng.uniform(wmin, wmax)
            heights[(xs >= edge) & (xs < edge + w)] = rng.uniform(hmin, hmax)
            edge += w
        # mirror for backward walking
        edge = -p["brick_start"]
        while edge > p["x_min"]:
            w = rng.uniform(wmin, wmax)
            heights[(xs < edge) & (xs >= edge - w)] = rng.uniform(hmin, hmax)
            edge -= w
    return Terrain(kind=kind, heights=heights, x0=p["x_min"], spacing=p["spacing"], seed=seed, params=p)


class TerrainBatch:
    """Stack of same-grid terrains for vectorized height queries, one per env."""

    def __init__(self, terrains):
        terrains = list(terrains)
        first = terrains[0]
        for t in terrains[1:]:
            if t.x0 != first.x0 or t.spacing != first.spacing or len(t.heights) != len(first.heights):
                raise TerrainError("batched terrains must share one sampling grid")
        self.terrains = terrains
        self.x0 = first.x0
        self.spacing = first.spacing
        self.heights = np.stack([t.heights for t in terrains])
        self._rows = np.arange(len(terrains))
        self.flat = not np.any(self.heights)

    def __len__(self):
        return len(self.terrains)

    def height(self, x, rows=None):
        """Heights at ``x``; ``x`` has shape (B,) or (B, k)."""
        x = np.asarray(x, dtype=float)
        if self.flat:
            return np.zeros_like(x)
        rows = self._rows if rows is None else rows
        n = self.heights.shape[1]
        u = np.clip((x - self.x0) / self.spacing, 0.0, n - 1.0)
        i = np.minimum(u.astype(int), n - 2)
        f = u - i
        r = rows if x.ndim == 1 else rows[:, None]
        return self.heights[r, i] * (1.0 - f) + self.heights[r, i + 1] * f

    def subset(self, rows):
        return TerrainBatch([self.terrains[i] for i in rows])
