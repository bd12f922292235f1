"""Procedural multi-task scenes with analytically consistent labels.

A scene is a flat background plane with a few filled primitives painted on top
in order. Circles are spherical dents (depth grows toward the centre) and
rectangles are tilted planes. Depth is closed-form; normals come from central
differences of that closed-form depth, so labels agree with each other.

Image coordinates are measured in depth units: one depth unit spans
``min(H, W) / 4`` pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

BACKGROUND_DEPTH = 6.0
_NORMAL_STEP = 0.25  # pixels
_KEYPOINT_SIGMA = 1.5  # pixels


@dataclass
class Primitive:
    kind: str  # "circle" or "rect"
    label: int
    cx: float
    cy: float
    base_depth: float
    radius: float = 0.0  # circle radius, pixels
    sphere_radius: float = 0.0  # sphere radius, pixels
    half_w: float = 0.0
    half_h: float = 0.0
    slope_x: float = 0.0  # depth units per depth unit
    slope_y: float = 0.0

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.kind == "circle":
            return (x - self.cx) ** 2 + (y - self.cy) ** 2 <= self.radius**2
        return (np.abs(x - self.cx) <= self.half_w) & (np.abs(y - self.cy) <= self.half_h)

    def depth(self, x: np.ndarray, y: np.ndarray, unit: float) -> np.ndarray:
        if self.kind == "circle":
            big = self.sphere_radius / unit
            rho2 = ((x - self.cx) ** 2 + (y - self.cy) ** 2) / unit**2
            rim = np.sqrt(big**2 - (self.radius / unit) ** 2)
            return self.base_depth + np.sqrt(np.maximum(big**2 - rho2, 0.0)) - rim
        return self.base_depth + (self.slope_x * (x - self.cx) + self.slope_y * (y - self.cy)) / unit

    def keypoints(self) -> List[tuple]:
        if self.kind == "circle":
            return [(self.cx, self.cy)]
        return [
            (self.cx + sx * self.half_w, self.cy + sy * self.half_h)
            for sx in (-1, 1)
            for sy in (-1, 1)
        ]


@dataclass
class Geometry:
    height: int
    width: int
    primitives: List[Primitive] = field(default_factory=list)
    background_depth: float = BACKGROUND_DEPTH

    @property
    def unit(self) -> float:
        return min(self.height, self.width) / 4.0

    def label_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Index of the top-most primitive covering each point (-1 for background)."""
        owner = np.full(np.broadcast(x, y).shape, -1, dtype=np.int64)
        for i, prim in enumerate(self.primitives):
            owner[prim.contains(x, y)] = i
        return owner

    def depth_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        owner = self.label_at(x, y)
        depth = np.full(owner.shape, self.background_depth)
        for i, prim in enumerate(self.primitives):
            hit = owner == i
            if hit.any():
                depth[hit] = prim.depth(x[hit], y[hit], self.unit)
        return depth

    def grid(self) -> tuple:
        return np.meshgrid(np.arange(self.width, dtype=float), np.arange(self.height, dtype=float))


@dataclass
class Scene:
    image: np.ndarray  # 3×H×W in [0, 1]
    seg: np.ndarray  # H×W int
    depth: np.ndarray  # 1×H×W
    normals: np.ndarray  # 3×H×W unit vectors
    edges: np.ndarray  # 1×H×W in {0, 1}
    keypoints: np.ndarray  # 1×H×W in [0, 1]
    seed: int
    geometry: Geometry

    @property
    def dominant_class(self) -> int:
        counts = np.bincount(self.seg.ravel())
        counts[0] = 0
        return int(counts.argmax()) if counts.sum() else 0


def class_color(label: int) -> np.ndarray:
    if label == 0:
        return np.array([0.45, 0.45, 0.45])
    return np.random.default_rng(1000 + label).uniform(0.05, 0.95, size=3)


def random_geometry(rng: np.random.Generator, height: int, width: int, num_classes: int) -> Geometry:
    geo = Geometry(height, width)
    short = min(height, width)
    for _ in range(int(rng.integers(1, num_classes))):
        label = int(rng.integers(1, num_classes))
        base = float(rng.uniform(2.0, 4.0))
        if rng.random() < 0.5:
            r = float(rng.uniform(0.15, 0.3) * short)
            geo.primitives.append(
                Primitive(
                    "circle",
                    label,
                    cx=float(rng.uniform(r, width - 1 - r)),
                    cy=float(rng.uniform(r, height - 1 - r)),
                    base_depth=base,
                    radius=r,
                    sphere_radius=r * float(rng.uniform(1.3, 2.0)),
                )
            )
        else:
            hw = float(rng.uniform(0.12, 0.3) * short)
            hh = float(rng.uniform(0.12, 0.3) * short)
            geo.primitives.append(
                Primitive(
                    "rect",
                    label,
                    cx=float(rng.uniform(hw, width - 1 - hw)),
                    cy=float(rng.uniform(hh, height - 1 - hh)),
                    base_depth=base,
                    half_w=hw,
                    half_h=hh,
                    slope_x=float(rng.uniform(-0.5, 0.5)),
                    slope_y=float(rng.uniform(-0.5, 0.5)),
                )
            )
    return geo


def seg_boundary(seg: np.ndarray) -> np.ndarray:
    """Pixels with at least one 4-neighbour of a different class."""
    edge = np.zeros(seg.shape, dtype=bool)
    diff_v = seg[1:, :] != seg[:-1, :]
    diff_h = seg[:, 1:] != seg[:, :-1]
    edge[1:, :] |= diff_v
    edge[:-1, :] |= diff_v
    edge[:, 1:] |= diff_h
    edge[:, :-1] |= diff_h
    return edge


def derive_labels(geo: Geometry) -> Dict[str, np.ndarray]:
    """Depth, normals, segmentation, edges and keypoint heat map for a geometry."""
    x, y = geo.grid()
    owner = geo.label_at(x, y)
    labels = np.array([0] + [p.label for p in geo.primitives])
    seg = labels[owner + 1]
    depth = geo.depth_at(x, y)
    h = _NORMAL_STEP
    ddx = (geo.depth_at(x + h, y) - geo.depth_at(x - h, y)) / (2 * h / geo.unit)
    ddy = (geo.depth_at(x, y + h) - geo.depth_at(x, y - h)) / (2 * h / geo.unit)
    normals = np.stack([-ddx, -ddy, np.ones_like(depth)])
    normals /= np.linalg.norm(normals, axis=0, keepdims=True)
    heat = np.zeros(depth.shape)
    for prim in geo.primitives:
        for kx, ky in prim.keypoints():
            bump = np.exp(-((x - kx) ** 2 + (y - ky) ** 2) / (2 * _KEYPOINT_SIGMA**2))
            heat = np.maximum(heat, bump)
    return {
        "seg": seg,
        "depth": depth[None],
        "normals": normals,
        "edges": seg_boundary(seg).astype(np.float64)[None],
        "keypoints": heat[None],
    }


def render_image(geo: Geometry, seg: np.ndarray, depth: np.ndarray, rng: np.random.Generator, noise: float = 0.03) -> np.ndarray:
    palette = np.stack([class_color(c) for c in range(int(seg.max()) + 1)])
    img = palette[seg].transpose(2, 0, 1)
    shade = 1.0 - 0.08 * (depth[0] - 2.0)
    img = img * shade[None]
    img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_scene(seed: int, height: int = 32, width: int = 32, num_classes: int = 4) -> Scene:
    if height < 16 or width < 16:
        raise ValueError("scenes must be at least 16×16")
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    rng = np.random.default_rng(seed)
    geo = random_geometry(rng, height, width, num_classes)
    lab = derive_labels(geo)
    image = render_image(geo, lab["seg"], lab["depth"], rng)
    return Scene(
        image=image,
        seg=lab["seg"],
        depth=lab["depth"],
        normals=lab["normals"],
        edges=lab["edges"],
        keypoints=lab["keypoints"],
        seed=seed,
        geometry=geo,
    )


TARGET_KEYS = {
    "segmentation": "seg",
    "depth": "depth",
    "surface_normal": "normals",
    "edge": "edges",
    "keypoint": "keypoints",
}


def scene_seed(base_seed: int, split: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, split, index]).generate_state(1)[0])


def make_dataset(
    n: int,
    seed: int = 0,
    height: int = 32,
    width: int = 32,
    num_classes: int = 4,
    split: int = 0,
    kinds: Optional[List[str]] = None,
) -> tuple:
    """Stack ``n`` scenes into ``(images, targets)``.

    ``targets`` maps task kind to a batched label array. ``split`` separates
    disjoint seed streams (0 train, 1 validation, ...).
    """
    scenes = [generate_scene(scene_seed(seed, split, i), height, width, num_classes) for i in range(n)]
    images = np.stack([s.image for s in scenes])
    kinds = kinds or list(TARGET_KEYS) + ["classification"]
    targets = {}
    for kind in kinds:
        if kind == "classification":
            targets[kind] = np.array([s.dominant_class for s in scenes])
        else:
            targets[kind] = np.stack([getattr(s, TARGET_KEYS[kind]) for s in scenes])
    return images, targets
