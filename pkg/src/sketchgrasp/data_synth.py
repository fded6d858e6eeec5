"""Deterministic synthetic scenes, sketches, and dataset files.

Six object categories render as flat-colored parametric silhouettes with
hand-placed grasp rectangles; paired sketch queries come from per-category
canonical outlines under smooth jitter. Everything is a pure function of
(seed, config): scene seeds derive from a master seed by splitmix64, images
quantize to 8-bit at render time so PNG round-trips are exact, and sketch
banks write to QuickDraw-style NDJSON.

Rotationally symmetric categories (the apple) carry grasps at 60-degree
spacing so every orientation is within the 30-degree correctness window of
some ground truth; elongated categories read their orientation off the
silhouette.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .geometry import OrientedRect, normalize_angle, rotated_nms
from .sketch_graph import RawDrawing, drawing_to_ndjson, parse_ndjson

CATEGORIES = ("apple", "banana", "cup", "hammer", "knife", "mouse")

SKETCH_SPLITS = ("train", "testA", "testB")

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, index: int) -> int:
    """splitmix64 stream: independent per-item seeds from one master seed."""
    z = (master + 0x9E3779B97F4A7C15 * (index + 1)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


# ---------------------------------------------------------------------------
# shape library (unit frame, roughly [-1, 1]^2)


def _arc(radius: float, start_deg: float, end_deg: float, n: int) -> np.ndarray:
    a = np.radians(np.linspace(start_deg, end_deg, n))
    return np.column_stack([radius * np.cos(a), radius * np.sin(a)])


def _ellipse(rx: float, ry: float, n: int = 20) -> np.ndarray:
    a = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([rx * np.cos(a), ry * np.sin(a)])


@dataclass(frozen=True)
class ShapeSpec:
    outline: np.ndarray  # (k, 2) closedable polygon, unit frame
    grasps: tuple[tuple[float, float, float, float, float], ...]  # cx, cy, w, h, theta
    color: tuple[int, int, int]
    sketch_strokes: tuple[np.ndarray, ...]  # canonical drawing, unit frame


def _build_shapes() -> dict[str, ShapeSpec]:
    shapes: dict[str, ShapeSpec] = {}

    apple_body = _ellipse(0.85, 0.85, 18)
    apple_stem = np.array([[0.0, -0.75], [0.08, -1.0]])
    shapes["apple"] = ShapeSpec(
        outline=apple_body,
        grasps=((0, 0, 1.9, 0.85, 60.0), (0, 0, 1.9, 0.85, 120.0), (0, 0, 1.9, 0.85, 180.0)),
        color=(212, 48, 38),
        sketch_strokes=(np.vstack([apple_body, apple_body[:1]]), apple_stem),
    )

    outer = _arc(1.0, 200, 340, 14)
    inner = _arc(0.55, 340, 200, 10)
    banana_outline = np.vstack([outer, inner])
    banana_grasps = []
    for a in (230.0, 270.0, 310.0):
        r = 0.78
        cx, cy = r * np.cos(np.radians(a)), r * np.sin(np.radians(a))
        banana_grasps.append((cx, cy, 0.78, 0.5, normalize_angle(a)))
    shapes["banana"] = ShapeSpec(
        outline=banana_outline,
        grasps=tuple(banana_grasps),
        color=(233, 200, 44),
        sketch_strokes=(np.vstack([banana_outline, banana_outline[:1]]),),
    )

    cup_outline = np.array(
        [
            [-0.55, -0.7], [0.55, -0.7], [0.58, -0.25], [0.95, -0.25], [0.95, 0.25],
            [0.60, 0.25], [0.62, 0.7], [-0.62, 0.7],
        ]
    )
    cup_body_sketch = np.array([[-0.55, -0.7], [-0.62, 0.7], [0.62, 0.7], [0.55, -0.7], [-0.55, -0.7]])
    cup_handle_sketch = np.vstack([np.array([[0.58, -0.25]]), _arc(0.37, -45, 45, 7) + np.array([0.6, 0.0]), np.array([[0.60, 0.25]])])
    shapes["cup"] = ShapeSpec(
        outline=cup_outline,
        grasps=((0, 0, 1.35, 0.55, 180.0), (0, 0, 1.5, 0.6, 90.0), (0.78, 0, 0.66, 0.5, 90.0)),
        color=(45, 92, 214),
        sketch_strokes=(cup_body_sketch, cup_handle_sketch),
    )

    hammer_outline = np.array(
        [
            [-0.11, -1.0], [0.11, -1.0], [0.11, 0.5], [0.6, 0.5], [0.6, 0.92],
            [-0.6, 0.92], [-0.6, 0.5], [-0.11, 0.5],
        ]
    )
    shapes["hammer"] = ShapeSpec(
        outline=hammer_outline,
        grasps=((0, -0.2, 0.62, 0.48, 180.0), (0, -0.7, 0.62, 0.48, 180.0), (0, 0.71, 0.72, 0.58, 90.0)),
        color=(140, 86, 42),
        sketch_strokes=(np.vstack([hammer_outline, hammer_outline[:1]]),),
    )

    knife_outline = np.array(
        [
            [-1.05, 0.0], [-0.2, -0.12], [-0.2, -0.17], [0.95, -0.17], [0.95, 0.17],
            [-0.2, 0.17], [-0.2, 0.12],
        ]
    )
    knife_guard_sketch = np.array([[-0.2, -0.3], [-0.2, 0.3]])
    shapes["knife"] = ShapeSpec(
        outline=knife_outline,
        grasps=((0.38, 0, 0.64, 0.52, 90.0), (0.62, 0, 0.64, 0.52, 90.0), (0.86, 0, 0.64, 0.52, 90.0)),
        color=(142, 146, 156),
        sketch_strokes=(np.vstack([knife_outline, knife_outline[:1]]), knife_guard_sketch),
    )

    mouse_body = _ellipse(0.55, 0.85, 18)
    mouse_tail = np.array([[0.0, -0.88], [0.18, -1.02], [-0.12, -1.18], [0.1, -1.3]])
    shapes["mouse"] = ShapeSpec(
        outline=mouse_body,
        grasps=((0, -0.15, 1.3, 0.5, 180.0), (0, 0.25, 1.3, 0.5, 180.0)),
        color=(58, 172, 84),
        sketch_strokes=(np.vstack([mouse_body, mouse_body[:1]]), mouse_tail),
    )
    return shapes


SHAPES = _build_shapes()


# ---------------------------------------------------------------------------
# scene synthesis


@dataclass
class SceneObject:
    category: str
    outline: np.ndarray  # (k, 2) float32, image pixels
    grasps: list[OrientedRect]


@dataclass
class SceneSample:
    scene_id: str
    image: np.ndarray  # (h, w, 3) float32 in [0, 1], 8-bit quantized
    objects: list[SceneObject]

    @property
    def size(self) -> tuple[int, int]:
        return self.image.shape[1], self.image.shape[0]

    def categories(self) -> list[str]:
        return [o.category for o in self.objects]


def _rotation(deg: float) -> np.ndarray:
    r = np.radians(deg)
    c, s = np.cos(r), np.sin(r)
    return np.array([[c, -s], [s, c]])


def _placed_outline(spec: ShapeSpec, scale: float, angle: float, center: np.ndarray) -> np.ndarray:
    return (spec.outline * scale) @ _rotation(angle).T + center


def _bbox(points: np.ndarray) -> np.ndarray:
    return np.array([points[:, 0].min(), points[:, 1].min(), points[:, 0].max(), points[:, 1].max()])


def _bbox_overlap_ratio(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection area over the smaller box area (pairwise clutter measure)."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / max(min(area_a, area_b), 1e-9)


def synth_scene(
    seed: int,
    categories=CATEGORIES,
    n_objects_range: tuple[int, int] = (2, 4),
    image_size: int = 128,
    max_overlap: float = 0.2,
    scene_id: str | None = None,
) -> SceneSample:
    """Render one cluttered scene; a pure function of its arguments.

    Each object is a flat-colored silhouette at a random pose. Placement
    rejects poses whose bounding boxes overlap an earlier object by more
    than `max_overlap` (intersection over smaller box); after 100 failed
    attempts per object placement gives up with an error.
    """
    if not categories:
        raise ValueError("need at least one category")
    unknown = [c for c in categories if c not in SHAPES]
    if unknown:
        raise ValueError(f"unknown categories: {unknown}")
    rng = np.random.Generator(np.random.PCG64(seed))
    lo, hi = n_objects_range
    n = int(rng.integers(lo, hi + 1))
    replace = n > len(categories)
    cats = [str(c) for c in rng.choice(categories, size=n, replace=replace)]

    bg = tuple(int(v) for v in np.clip(rng.integers(224, 241, size=3), 0, 255))
    img = Image.new("RGB", (image_size, image_size), bg)
    draw = ImageDraw.Draw(img)

    placed: list[tuple[str, np.ndarray, float, float, np.ndarray]] = []
    bboxes: list[np.ndarray] = []
    for cat in cats:
        spec = SHAPES[cat]
        radius = float(np.linalg.norm(spec.outline, axis=1).max())
        for attempt in range(100):
            scale = image_size * rng.uniform(0.16, 0.22)
            angle = float(rng.uniform(0, 360))
            margin = scale * radius * 1.02 + 2
            if 2 * margin >= image_size:
                continue
            center = rng.uniform(margin, image_size - margin, size=2)
            outline = _placed_outline(spec, scale, angle, center)
            box = _bbox(outline)
            if all(_bbox_overlap_ratio(box, other) <= max_overlap for other in bboxes):
                placed.append((cat, outline, scale, angle, center))
                bboxes.append(box)
                break
        else:
            raise ValueError(f"could not place {cat!r} after 100 attempts (seed {seed})")

    objects = []
    for cat, outline, scale, angle, center in placed:
        spec = SHAPES[cat]
        color = np.array(spec.color) + rng.integers(-12, 13, size=3)
        color = tuple(int(v) for v in np.clip(color, 0, 255))
        draw.polygon([tuple(p) for p in outline], fill=color)
        rot = _rotation(angle)
        grasps = []
        for cx, cy, w, h, theta in spec.grasps:
            gx, gy = rot @ (scale * np.array([cx, cy])) + center
            grasps.append(
                OrientedRect(x=float(gx), y=float(gy), w=float(w * scale), h=float(h * scale), theta=normalize_angle(theta + angle))
            )
        objects.append(SceneObject(category=cat, outline=outline.astype(np.float32), grasps=grasps))

    image = np.asarray(img, dtype=np.float32) / 255.0
    return SceneSample(scene_id=scene_id or f"scene-{seed:016x}", image=image, objects=objects)


def point_in_polygon(point: np.ndarray, polygon: np.ndarray) -> bool:
    """Even-odd ray casting; boundary points count as inside."""
    x, y = point
    inside = False
    n = len(polygon)
    for i in range(n):
        x0, y0 = polygon[i]
        x1, y1 = polygon[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            t = (y - y0) / (y1 - y0)
            xi = x0 + t * (x1 - x0)
            if xi >= x:
                inside = not inside
    return inside


# ---------------------------------------------------------------------------
# sketch synthesis


def _resample_closed(points: np.ndarray, n: int) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    arc = np.concatenate([[0], np.cumsum(seg)])
    if arc[-1] == 0:
        return np.tile(points[:1], (n, 1))
    t = np.linspace(0, arc[-1], n)
    return np.column_stack([np.interp(t, arc, points[:, 0]), np.interp(t, arc, points[:, 1])])


def synth_sketch(category: str, seed: int, jitter: float = 1.0) -> RawDrawing:
    """Perturbed canonical outline for a category.

    jitter scales all perturbation: smooth low-frequency displacement,
    rotation up to 15 degrees, and random splitting into 1-3 strokes.
    jitter=0 returns the canonical strokes untouched.
    """
    if category not in SHAPES:
        raise ValueError(f"unknown category {category!r}")
    canonical = SHAPES[category].sketch_strokes
    if jitter == 0:
        return RawDrawing(strokes=[s.astype(np.float64).copy() for s in canonical], category=category)

    rng = np.random.Generator(np.random.PCG64(seed))
    rot = _rotation(float(rng.uniform(-15, 15) * min(jitter, 1.0)))
    strokes: list[np.ndarray] = []
    for stroke in canonical:
        pts = _resample_closed(stroke, max(len(stroke) * 3, 24)) if len(stroke) > 4 else stroke.astype(np.float64)
        t = np.linspace(0, 2 * np.pi, len(pts))
        wobble = np.zeros_like(pts)
        for freq in (1, 2, 3):
            phase = rng.uniform(0, 2 * np.pi, size=2)
            amp = rng.normal(0, 0.035 * jitter, size=2)
            wobble += np.column_stack([amp[0] * np.sin(freq * t + phase[0]), amp[1] * np.sin(freq * t + phase[1])])
        pts = (pts + wobble) @ rot.T
        # split long strokes to mimic pen lifts
        n_parts = int(rng.integers(1, 4)) if len(pts) >= 12 else 1
        if n_parts == 1:
            strokes.append(pts)
        else:
            cuts = np.sort(rng.choice(np.arange(4, len(pts) - 4), size=n_parts - 1, replace=False))
            start = 0
            for c in list(cuts) + [len(pts)]:
                if c - start >= 2:
                    strokes.append(pts[start:c])
                start = c
    return RawDrawing(strokes=strokes, category=category)


# ---------------------------------------------------------------------------
# sketch bank


@dataclass
class SketchBank:
    """Per-split, per-category drawing pools; splits never share drawings."""

    drawings: dict[str, dict[str, list[RawDrawing]]]  # split -> category -> list

    @classmethod
    def generate(cls, categories, counts: dict[str, int], seed: int) -> "SketchBank":
        bank: dict[str, dict[str, list[RawDrawing]]] = {}
        for si, split in enumerate(SKETCH_SPLITS):
            per_cat: dict[str, list[RawDrawing]] = {}
            for ci, cat in enumerate(categories):
                n = counts.get(split, 0)
                per_cat[cat] = [
                    synth_sketch(cat, derive_seed(seed, si * 1_000_000 + ci * 10_000 + i)) for i in range(n)
                ]
            bank[split] = per_cat
        return cls(drawings=bank)

    def split(self, name: str) -> dict[str, list[RawDrawing]]:
        if name not in self.drawings:
            raise KeyError(f"unknown sketch split {name!r}; have {sorted(self.drawings)}")
        return self.drawings[name]

    def sample(self, split: str, category: str, rng: np.random.Generator) -> RawDrawing:
        pool = self.split(split).get(category)
        if not pool:
            raise ValueError(f"no {split!r} sketches for category {category!r}")
        return pool[int(rng.integers(len(pool)))]

    def save(self, out_dir: Path) -> dict[str, str]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        names = {}
        for split, per_cat in self.drawings.items():
            name = f"sketches_{split}.ndjson"
            with open(out_dir / name, "w") as fh:
                for cat in sorted(per_cat):
                    for d in per_cat[cat]:
                        fh.write(drawing_to_ndjson(d) + "\n")
            names[split] = name
        return names

    @classmethod
    def load(cls, paths: dict[str, Path]) -> "SketchBank":
        bank: dict[str, dict[str, list[RawDrawing]]] = {}
        for split, path in paths.items():
            per_cat: dict[str, list[RawDrawing]] = {}
            with open(path) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    d = parse_ndjson(line)
                    per_cat.setdefault(d.category or "unknown", []).append(d)
            bank[split] = per_cat
        return cls(drawings=bank)


def few_shot_subset(bank: SketchBank, shots: int, seed: int) -> SketchBank:
    """Shrink the train split to `shots` drawings per category; tests untouched."""
    train = bank.split("train")
    for cat, pool in train.items():
        if shots > len(pool):
            raise ValueError(f"requested {shots} shots but category {cat!r} has only {len(pool)} train sketches")
    rng = np.random.Generator(np.random.PCG64(seed))
    new_train = {}
    for cat in sorted(train):
        pool = train[cat]
        idx = rng.choice(len(pool), size=shots, replace=False) if shots < len(pool) else np.arange(len(pool))
        new_train[cat] = [pool[i] for i in sorted(idx)]
    drawings = dict(bank.drawings)
    drawings["train"] = new_train
    return SketchBank(drawings=drawings)


# ---------------------------------------------------------------------------
# dataset files


def save_scene(sample: SceneSample, images_dir: Path, annotations_dir: Path) -> tuple[str, str]:
    images_dir = Path(images_dir)
    annotations_dir = Path(annotations_dir)
    images_dir.mkdir(parents=True, exist_ok=True)
    annotations_dir.mkdir(parents=True, exist_ok=True)
    img_name = f"{sample.scene_id}.png"
    ann_name = f"{sample.scene_id}.json"
    arr = np.clip(np.rint(sample.image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(images_dir / img_name)
    doc = {
        "objects": [
            {
                "category": o.category,
                "grasps": [[g.x, g.y, g.w, g.h, g.theta] for g in o.grasps],
                "outline": [[float(x), float(y)] for x, y in o.outline],
            }
            for o in sample.objects
        ]
    }
    with open(annotations_dir / ann_name, "w") as fh:
        json.dump(doc, fh)
    return img_name, ann_name


def _dedupe_grasps(grasps: list[OrientedRect]) -> list[OrientedRect]:
    if len(grasps) < 2:
        return grasps
    keep = rotated_nms(grasps, np.ones(len(grasps)), threshold=0.7)
    return [grasps[i] for i in sorted(keep)]


def load_annotation(path: Path) -> list[SceneObject]:
    """Parse one annotation file; near-duplicate grasps are NMS-filtered at 0.7."""
    with open(path) as fh:
        doc = json.load(fh)
    if "objects" not in doc:
        raise ValueError(f"{path}: missing 'objects' field")
    objects = []
    for i, entry in enumerate(doc["objects"]):
        for key in ("category", "grasps"):
            if key not in entry:
                raise ValueError(f"{path}: object {i} missing {key!r}")
        grasps = [OrientedRect(x=g[0], y=g[1], w=g[2], h=g[3], theta=g[4]) for g in entry["grasps"]]
        outline = np.asarray(entry.get("outline", []), dtype=np.float32).reshape(-1, 2)
        objects.append(SceneObject(category=entry["category"], outline=outline, grasps=_dedupe_grasps(grasps)))
    return objects


def load_scene(image_path: Path, annotation_path: Path, scene_id: str) -> SceneSample:
    image = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.float32) / 255.0
    return SceneSample(scene_id=scene_id, image=image, objects=load_annotation(annotation_path))


@dataclass
class Dataset:
    root: Path
    categories: list[str]
    image_size: int
    samples: list[dict]  # id, image, annotations, split
    sketch_paths: dict[str, Path]

    def __len__(self) -> int:
        return len(self.samples)

    def split_indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.samples) if s["split"] == split]

    def load(self, index: int) -> SceneSample:
        s = self.samples[index]
        return load_scene(self.root / s["image"], self.root / s["annotations"], s["id"])

    def load_sketch_bank(self) -> SketchBank:
        return SketchBank.load(self.sketch_paths)


def load_manifest(path: Path) -> Dataset:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    root = path.parent
    for key in ("categories", "image_size", "samples", "sketches"):
        if key not in doc:
            raise ValueError(f"{path}: missing {key!r} field")
    if not doc["samples"]:
        raise ValueError(f"{path}: no samples")
    seen_ids = set()
    for i, s in enumerate(doc["samples"]):
        for key in ("id", "image", "annotations", "split"):
            if key not in s:
                raise ValueError(f"{path}: sample {i} missing {key!r}")
        if s["id"] in seen_ids:
            raise ValueError(f"{path}: sample id {s['id']!r} appears in more than one split")
        seen_ids.add(s["id"])
        for key in ("image", "annotations"):
            if not (root / s[key]).exists():
                raise FileNotFoundError(f"{path}: sample {s['id']!r} field {key!r}: missing file {root / s[key]}")
    sketch_paths = {}
    for split, name in doc["sketches"].items():
        p = root / name
        if not p.exists():
            raise FileNotFoundError(f"{path}: sketches[{split!r}]: missing file {p}")
        sketch_paths[split] = p
    return Dataset(
        root=root,
        categories=list(doc["categories"]),
        image_size=int(doc["image_size"]),
        samples=list(doc["samples"]),
        sketch_paths=sketch_paths,
    )


def generate_dataset(
    out_dir: Path,
    n_train: int = 400,
    n_test: int = 100,
    categories=CATEGORIES,
    sketch_counts: dict[str, int] | None = None,
    seed: int = 0,
    image_size: int = 128,
    n_objects_range: tuple[int, int] = (2, 4),
    max_overlap: float = 0.2,
) -> Path:
    """Write a complete dataset (scenes, annotations, sketch bank, manifest)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sketch_counts = sketch_counts or {"train": 120, "testA": 15, "testB": 15}
    samples = []
    for split, count, base in (("train", n_train, 0), ("test", n_test, 1 << 40)):
        for i in range(count):
            scene_seed = derive_seed(seed, base + i)
            sample = synth_scene(
                scene_seed,
                categories=categories,
                n_objects_range=n_objects_range,
                image_size=image_size,
                max_overlap=max_overlap,
                scene_id=f"{split}-{i:05d}",
            )
            img_name, ann_name = save_scene(sample, out_dir / "images", out_dir / "annotations")
            samples.append(
                {"id": sample.scene_id, "image": f"images/{img_name}", "annotations": f"annotations/{ann_name}", "split": split}
            )
    bank = SketchBank.generate(categories, sketch_counts, derive_seed(seed, 7))
    sketch_names = bank.save(out_dir)
    manifest = {
        "categories": list(categories),
        "image_size": image_size,
        "samples": samples,
        "sketches": sketch_names,
    }
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest_path


# ---------------------------------------------------------------------------
# training-time augmentation


def flip_scene(sample: SceneSample) -> SceneSample:
    """Horizontal mirror; grasp angles reflect as 180 - theta."""
    w = sample.image.shape[1]
    objects = []
    for o in sample.objects:
        outline = o.outline.copy()
        if len(outline):
            outline[:, 0] = w - outline[:, 0]
        grasps = [
            OrientedRect(x=w - g.x, y=g.y, w=g.w, h=g.h, theta=normalize_angle(180.0 - g.theta)) for g in o.grasps
        ]
        objects.append(SceneObject(category=o.category, outline=outline, grasps=grasps))
    return SceneSample(scene_id=sample.scene_id, image=np.ascontiguousarray(sample.image[:, ::-1]), objects=objects)


def jitter_brightness(sample: SceneSample, rng: np.random.Generator, lo: float = 0.85, hi: float = 1.15) -> SceneSample:
    factor = rng.uniform(lo, hi)
    return SceneSample(
        scene_id=sample.scene_id,
        image=np.clip(sample.image * factor, 0.0, 1.0).astype(np.float32),
        objects=sample.objects,
    )
