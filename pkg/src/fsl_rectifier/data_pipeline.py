"""Datasets, preprocessing and episodic sampling.

Directory layout is ``<root>/<dataset>/<split>/<class_id>/<image files>``;
the class directory name is the class id. Images are decoded lazily, resized
to 128x128 and kept as float32 RGB in [0, 1]. A procedural toy generator
provides a desk-scale stand-in whose class identity is carried by either a
geometric glyph ("shape") or a colour palette ("style"), with the other
factor acting as nuisance variation.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .config import IMAGE_SIZE
from .errors import ConfigError, DataIntegrityError, SamplingError
from .seeding import rng_for

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}

# Overlapping traffic classes kept only under their tt100k ids.
OVERLAP_DROP = ("gstrb00015", "gstrb00038")
OVERLAP_KEEP = ("tt100kpb", "tt100ki5")


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass
class ImageSample:
    """One image with its class label and split provenance.

    ``pixels`` decodes lazily on first access so that episode sampling and
    invariant checks stay cheap; decode failures raise instead of skipping.
    """

    class_id: str
    split: str
    source_id: str
    _pixels: np.ndarray | None = field(default=None, repr=False)
    _path: Path | None = field(default=None, repr=False)
    _preprocess: dict | None = field(default=None, repr=False)

    @property
    def pixels(self) -> np.ndarray:
        if self._pixels is None:
            if self._path is None:
                raise DataIntegrityError(f"sample {self.source_id} has no pixel source")
            self._pixels = load_image(self._path, self._preprocess or {})
        return self._pixels

    @classmethod
    def from_array(cls, pixels, class_id="", split="test", source_id="mem"):
        pixels = np.asarray(pixels, dtype=np.float32)
        check_image(pixels)
        return cls(class_id=class_id, split=split, source_id=source_id, _pixels=pixels)


@dataclass
class DatasetHandle:
    """Immutable index of one dataset split; safe for concurrent reads."""

    name: str
    split: str
    root: Path
    classes: list[str]
    index: dict[str, list[str]]
    preprocessing: dict

    _cache: dict[str, ImageSample] = field(default_factory=dict, repr=False)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def class_label(self, class_id: str) -> int:
        """Stable integer label for classifier heads (position in sorted classes)."""
        return self.classes.index(class_id)

    def get_sample(self, class_id: str, source_id: str) -> ImageSample:
        key = source_id
        if key not in self._cache:
            self._cache[key] = ImageSample(
                class_id=class_id,
                split=self.split,
                source_id=source_id,
                _path=self.root / source_id,
                _preprocess=self.preprocessing,
            )
        return self._cache[key]

    def samples_of(self, class_id: str) -> list[ImageSample]:
        return [self.get_sample(class_id, sid) for sid in self.index[class_id]]

    def all_samples(self) -> list[ImageSample]:
        out = []
        for class_id in self.classes:
            out.extend(self.samples_of(class_id))
        return out


@dataclass
class Episode:
    """One n-way-k-shot task: support set plus queries."""

    n_way: int
    k_shot: int
    n_query: int
    support: list[ImageSample]
    queries: list[ImageSample]
    episode_seed: int

    @property
    def support_classes(self) -> list[str]:
        return [self.support[i * self.k_shot].class_id for i in range(self.n_way)]

    def query_labels(self) -> list[int]:
        """Index of each query's class within the support class list."""
        classes = self.support_classes
        return [classes.index(q.class_id) for q in self.queries]

    def validate(self) -> None:
        classes = self.support_classes
        if len(set(classes)) != self.n_way:
            raise AssertionError("support does not cover n_way distinct classes")
        if len(self.support) != self.n_way * self.k_shot:
            raise AssertionError("support size mismatch")
        for i, s in enumerate(self.support):
            if s.class_id != classes[i // self.k_shot]:
                raise AssertionError("support not grouped by class")
        support_ids = {s.source_id for s in self.support}
        for q in self.queries:
            if q.class_id not in classes:
                raise AssertionError("query class not among support classes")
            if q.source_id in support_ids:
                raise AssertionError("sample appears as both support and query")
        if len({q.source_id for q in self.queries}) != len(self.queries):
            raise AssertionError("duplicate query sample")


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")


def resize_image(img: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Resize to size x size; identity if already at the target size."""
    if img.shape[0] == size and img.shape[1] == size:
        return img
    return cv2.resize(img, (size, size), interpolation=cv2.INTER_AREA)


def apply_clahe(img: np.ndarray, clip_limit: float = 2.0, tile_grid: int = 8) -> np.ndarray:
    """Contrast-equalize via tile-based limited histogram equalization.

    Operates on the lightness channel in LAB space; used while training on
    dark datasets, never on test-phase inputs.
    """
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"CLAHE expects a 3-channel image, got shape {img.shape}")
    u8 = np.clip(np.asarray(img, dtype=np.float32) * 255.0, 0, 255).astype(np.uint8)
    lab = cv2.cvtColor(u8, cv2.COLOR_RGB2LAB)
    clahe = cv2.createCLAHE(clipLimit=clip_limit, tileGridSize=(tile_grid, tile_grid))
    lab[:, :, 0] = clahe.apply(lab[:, :, 0])
    out = cv2.cvtColor(lab, cv2.COLOR_LAB2RGB)
    return out.astype(np.float32) / 255.0


def load_image(path: Path, preprocess: dict | None = None) -> np.ndarray:
    """Decode, resize and optionally contrast-equalize one image file."""
    preprocess = preprocess or {}
    raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if raw is None:
        raise DataIntegrityError(f"cannot decode image: {path}")
    img = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
    img = resize_image(img, int(preprocess.get("resize", IMAGE_SIZE)))
    if preprocess.get("clahe", False):
        img = apply_clahe(
            img,
            clip_limit=float(preprocess.get("clahe_clip_limit", 2.0)),
            tile_grid=int(preprocess.get("clahe_tile_grid", 8)),
        )
    return np.clip(img, 0.0, 1.0)


def dedup_overlap(classes: list[str]) -> list[str]:
    """Drop the gtsrb ids of the two classes that tt100k also carries."""
    return [c for c in classes if c not in OVERLAP_DROP]


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def load_dataset(
    name: str,
    split: str,
    root: str | Path,
    clahe: bool = False,
    clahe_clip_limit: float = 2.0,
    clahe_tile_grid: int = 8,
) -> DatasetHandle:
    """Index one split of an on-disk dataset.

    Traffic-style datasets get their overlapping classes dropped. ``clahe``
    is a training-phase switch; callers evaluating a model leave it off.
    """
    root = Path(root)
    split_dir = root / name / split
    if not split_dir.is_dir():
        raise ConfigError(f"dataset directory not found: {split_dir}")

    class_ids = sorted(p.name for p in split_dir.iterdir() if p.is_dir())
    if name == "traffic":
        class_ids = dedup_overlap(class_ids)
    if not class_ids:
        raise DataIntegrityError(f"no class directories under {split_dir}")

    index: dict[str, list[str]] = {}
    for class_id in class_ids:
        files = sorted(
            f.name
            for f in (split_dir / class_id).iterdir()
            if f.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not files:
            raise DataIntegrityError(f"class directory is empty: {class_id}")
        index[class_id] = [f"{class_id}/{f}" for f in files]

    return DatasetHandle(
        name=name,
        split=split,
        root=split_dir,
        classes=class_ids,
        index=index,
        preprocessing={
            "clahe": clahe,
            "clahe_clip_limit": clahe_clip_limit,
            "clahe_tile_grid": clahe_tile_grid,
            "resize": IMAGE_SIZE,
        },
    )


# ---------------------------------------------------------------------------
# toy dataset synthesis
# ---------------------------------------------------------------------------

_SUPER = 2  # draw at 2x then downscale for cheap antialiasing


def _glyph_mask(glyph_id: int, rotation: float, scale: float, shift: tuple[float, float]) -> np.ndarray:
    """Rasterize one deterministic glyph family member as a float mask.

    Families cycle with ``glyph_id`` so nearby ids stay visually distinct:
    filled polygons, stars, thick rings, star-bursts, concentric circles and
    blob rings, each with a size level derived from the id.
    """
    side = IMAGE_SIZE * _SUPER
    canvas = np.zeros((side, side), dtype=np.uint8)
    cx = side / 2 + shift[0] * _SUPER
    cy = side / 2 + shift[1] * _SUPER
    radius = 0.36 * side * scale
    family = glyph_id % 6
    level = glyph_id // 6

    def ring_points(n, r, phase=0.0):
        angles = rotation + phase + np.arange(n) * 2 * np.pi / n
        return np.stack([cx + r * np.cos(angles), cy + r * np.sin(angles)], axis=1)

    if family == 0:  # filled regular polygon, 3..N vertices
        pts = ring_points(3 + level, radius)
        cv2.fillPoly(canvas, [pts.astype(np.int32)], 255)
    elif family == 1:  # star
        n = 4 + level
        outer = ring_points(n, radius)
        inner = ring_points(n, 0.42 * radius, phase=np.pi / n)
        pts = np.empty((2 * n, 2))
        pts[0::2] = outer
        pts[1::2] = inner
        cv2.fillPoly(canvas, [pts.astype(np.int32)], 255)
    elif family == 2:  # thick polygonal ring
        n = 3 + level
        pts = ring_points(n, radius)
        cv2.polylines(
            canvas, [pts.astype(np.int32)], isClosed=True,
            color=255, thickness=max(2, int(0.16 * radius)),
        )
    elif family == 3:  # star-burst of thick spokes
        n = 2 + level
        for p in ring_points(2 * n, radius):
            cv2.line(
                canvas, (int(cx), int(cy)), (int(p[0]), int(p[1])),
                color=255, thickness=max(2, int(0.14 * radius)),
            )
    elif family == 4:  # concentric circles
        n = 1 + level
        for i in range(n):
            r = radius * (1.0 - i / (n + 0.5))
            cv2.circle(
                canvas, (int(cx), int(cy)), int(r),
                color=255, thickness=max(2, int(0.10 * radius)),
            )
    else:  # ring of filled blobs
        n = 2 + level
        for p in ring_points(n, 0.75 * radius):
            cv2.circle(canvas, (int(p[0]), int(p[1])), int(0.30 * radius), 255, -1)

    mask = cv2.resize(canvas, (IMAGE_SIZE, IMAGE_SIZE), interpolation=cv2.INTER_AREA)
    return mask.astype(np.float32) / 255.0


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    hsv = np.array([[[h * 179.0, s * 255.0, v * 255.0]]], dtype=np.uint8)
    rgb = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)[0, 0]
    return rgb.astype(np.float32) / 255.0


def _render_toy_image(glyph_id: int, style: dict, rng: np.random.Generator) -> np.ndarray:
    rotation = float(rng.uniform(-0.35, 0.35))          # ~±20 degrees pose jitter
    scale = float(rng.uniform(0.85, 1.15))
    shift = (float(rng.uniform(-6, 6)), float(rng.uniform(-6, 6)))
    mask = _glyph_mask(glyph_id, rotation, scale, shift)[..., None]

    fg = _hsv_to_rgb(style["fg_h"], style["fg_s"], style["fg_v"])
    bg = _hsv_to_rgb(style["bg_h"], style["bg_s"], style["bg_v"])
    img = bg[None, None, :] * (1.0 - mask) + fg[None, None, :] * mask
    noise = rng.normal(0.0, style["noise"], size=img.shape).astype(np.float32)
    return np.clip(img + noise, 0.0, 1.0)


def _sample_style(rng: np.random.Generator, degraded: bool) -> dict:
    if degraded:
        return {
            "fg_h": float(rng.uniform()), "fg_s": float(rng.uniform(0.1, 0.5)),
            "fg_v": float(rng.uniform(0.06, 0.18)),
            "bg_h": float(rng.uniform()), "bg_s": float(rng.uniform(0.0, 0.4)),
            "bg_v": float(rng.uniform(0.02, 0.10)),
            "noise": float(rng.uniform(0.04, 0.08)),
        }
    return {
        "fg_h": float(rng.uniform()), "fg_s": float(rng.uniform(0.55, 1.0)),
        "fg_v": float(rng.uniform(0.60, 1.0)),
        "bg_h": float(rng.uniform()), "bg_s": float(rng.uniform(0.35, 0.9)),
        "bg_v": float(rng.uniform(0.10, 0.45)),
        "noise": float(rng.uniform(0.0, 0.03)),
    }


def _class_style(rng: np.random.Generator, hue_slot: float, degraded: bool) -> dict:
    """Palette-defined class: hue is pinned near the class slot, rest jitters."""
    style = _sample_style(rng, degraded)
    jitter = float(rng.uniform(-0.008, 0.008))
    style["fg_h"] = (hue_slot + jitter) % 1.0
    style["bg_h"] = (hue_slot + 0.5 + jitter) % 1.0
    return style


def make_toy_dataset(
    n_train_classes: int,
    n_test_classes: int,
    per_class: int,
    seed: int,
    out: str | Path,
    class_factor: str = "shape",
    degraded_fraction: float = 0.25,
) -> tuple[DatasetHandle, DatasetHandle]:
    """Generate the procedural toy dataset and return its two handles.

    Class identity is carried by ``class_factor`` (geometric glyph or colour
    palette); the other factor plus pose jitter is nuisance. A fraction of
    train-split images is rendered dark and noisy so that neighbour quality
    genuinely varies. Deterministic under ``seed``.
    """
    if n_train_classes < 5 or n_test_classes < 5:
        raise ValueError("need at least 5 train and 5 test classes")
    if per_class < 20:
        raise ValueError("need at least 20 images per class")
    if class_factor not in ("shape", "style"):
        raise ValueError(f"unknown class_factor: {class_factor}")

    out = Path(out)
    n_total = n_train_classes + n_test_classes
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"toy dataset output path not writable: {out}") from exc

    shared_glyphs = list(range(10))  # nuisance pool when palettes carry class
    for split, n_classes, offset in (
        ("train", n_train_classes, 0),
        ("test", n_test_classes, n_train_classes),
    ):
        for local in range(n_classes):
            global_id = offset + local
            class_id = f"toy{split}{local:03d}"
            class_dir = out / "toy" / split / class_id
            class_dir.mkdir(parents=True, exist_ok=True)
            for i in range(per_class):
                rng = rng_for(seed, split, class_id, i)
                degraded = split == "train" and rng.uniform() < degraded_fraction
                if class_factor == "shape":
                    glyph = global_id
                    style = _sample_style(rng, degraded)
                else:
                    glyph = shared_glyphs[int(rng.integers(len(shared_glyphs)))]
                    style = _class_style(rng, hue_slot=global_id / n_total, degraded=degraded)
                img = _render_toy_image(glyph, style, rng)
                u8 = np.clip(img * 255.0, 0, 255).astype(np.uint8)
                cv2.imwrite(str(class_dir / f"img{i:04d}.png"), cv2.cvtColor(u8, cv2.COLOR_RGB2BGR))

    meta = {
        "n_train_classes": n_train_classes,
        "n_test_classes": n_test_classes,
        "per_class": per_class,
        "seed": seed,
        "class_factor": class_factor,
        "degraded_fraction": degraded_fraction,
    }
    with open(out / "toy" / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)

    train = load_dataset("toy", "train", out)
    test = load_dataset("toy", "test", out)
    return train, test


# ---------------------------------------------------------------------------
# episodic sampling
# ---------------------------------------------------------------------------

def sample_episode(
    dataset: DatasetHandle,
    n_way: int,
    k_shot: int,
    n_query: int,
    seed: int,
) -> Episode:
    """Sample one episode: uniform classes, then uniform samples, no replacement.

    Pure in (dataset, seed); queries are drawn from the support classes only
    and never reuse a support sample.
    """
    if n_way > dataset.n_classes:
        raise SamplingError(
            f"n_way={n_way} exceeds the {dataset.n_classes} classes of "
            f"{dataset.name}/{dataset.split}"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = [dataset.classes[i] for i in rng.choice(dataset.n_classes, size=n_way, replace=False)]

    query_classes = [chosen[int(rng.integers(n_way))] for _ in range(n_query)]
    need = {c: k_shot + query_classes.count(c) for c in chosen}
    picks: dict[str, list[str]] = {}
    for c in chosen:
        pool = dataset.index[c]
        if len(pool) < need[c]:
            raise SamplingError(
                f"class {c} has {len(pool)} samples, episode needs {need[c]}"
            )
        idx = rng.choice(len(pool), size=need[c], replace=False)
        picks[c] = [pool[i] for i in idx]

    support = [
        dataset.get_sample(c, picks[c][j]) for c in chosen for j in range(k_shot)
    ]
    cursor = {c: k_shot for c in chosen}
    queries = []
    for c in query_classes:
        queries.append(dataset.get_sample(c, picks[c][cursor[c]]))
        cursor[c] += 1

    return Episode(
        n_way=n_way, k_shot=k_shot, n_query=n_query,
        support=support, queries=queries, episode_seed=seed,
    )
