"""Non-deep baseline augmentations behind the same interface as the rectifier.

Every augmenter maps one base image to copies that are averaged with the
rectifier's weighting, so the evaluation harness treats pixel-level baselines
and translator-based rectification interchangeably. All stochastic
augmenters are deterministic under a fixed seed. Baselines run on
reconstructed samples by default to keep the generated-image distribution
consistent; a flag restores raw inputs.
"""

from dataclasses import dataclass, field

import cv2
import numpy as np

from .data_pipeline import DatasetHandle, Episode, ImageSample
from .errors import ConfigError
from .rectifier import (
    RectifierConfig,
    RectifiedRepresentation,
    _embed,
    _translate_pairs,
    assemble_representation,
    mixture_weights,
    pick_neighbours,
)
from .seeding import derive_seed, rng_for

KINDS = ("one_shot", "mixup", "crop_rotate", "affine", "color_jitter", "rectifier")

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass(frozen=True)
class AugmenterSpec:
    """One augmentation policy: kind, copy count, weighting and parameters."""

    kind: str = "one_shot"
    copies: int = 1
    weighting: str = "simple_average"
    beta: float | None = None
    seed: int = 0
    use_reconstruction: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown augmenter kind: {self.kind}")
        if self.copies < 0:
            raise ConfigError("copies must be non-negative")
        mixture_weights(self.effective_copies, self.weighting, self.beta)
        if self.kind == "rectifier":
            self.rectifier_config()  # validates parameters eagerly

    @property
    def effective_copies(self) -> int:
        return 0 if self.kind == "one_shot" else self.copies

    def rectifier_config(self) -> RectifierConfig:
        return RectifierConfig(
            mode=self.params.get("mode", "style_from_train"),
            k=self.copies,
            weighting=self.weighting,
            beta=self.beta,
            pool_size=int(self.params.get("pool_size", 20)),
            selector_mode=self.params.get("selector_mode", "best") if self.copies else "none",
        )

    @classmethod
    def from_dict(cls, d: dict) -> "AugmenterSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown augmenter spec fields: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# pixel-level transforms
# ---------------------------------------------------------------------------

def _as_pixels(x) -> np.ndarray:
    arr = x.pixels if isinstance(x, ImageSample) else np.asarray(x, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {arr.shape}")
    return arr.astype(np.float32)


def mixup(a, b) -> np.ndarray:
    """Pixel-level midpoint of the two images."""
    pa = _as_pixels(a)
    pb = _as_pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"mixup shape mismatch: {pa.shape} vs {pb.shape}")
    return 0.5 * (pa + pb)


def crop_rotate(x, seed: int) -> np.ndarray:
    """Rotate by an angle from [0, 180] on an expanded replicate-padded canvas,
    then take a random crop at the native size."""
    img = _as_pixels(x)
    h, w = img.shape[:2]
    rng = rng_for(seed, "crop_rotate")
    angle = float(rng.uniform(0.0, 180.0))
    rad = np.deg2rad(angle)
    nw = int(np.ceil(abs(w * np.cos(rad)) + abs(h * np.sin(rad))))
    nh = int(np.ceil(abs(w * np.sin(rad)) + abs(h * np.cos(rad))))
    m = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), angle, 1.0)
    m[0, 2] += (nw - w) / 2.0
    m[1, 2] += (nh - h) / 2.0
    rotated = cv2.warpAffine(
        img, m, (nw, nh),
        flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE,
    )
    top = int(rng.integers(0, nh - h + 1))
    left = int(rng.integers(0, nw - w + 1))
    return np.clip(rotated[top:top + h, left:left + w], 0.0, 1.0)


def affine(x, seed: int) -> np.ndarray:
    """Rotation from [30, 70], per-axis translation from [0.1, 0.3] of the side
    (random sign), scale from [0.5, 0.75]; replicate-padded, size preserved."""
    img = _as_pixels(x)
    h, w = img.shape[:2]
    rng = rng_for(seed, "affine")
    angle = float(rng.uniform(30.0, 70.0))
    tx = float(rng.uniform(0.1, 0.3)) * w * (1 if rng.uniform() < 0.5 else -1)
    ty = float(rng.uniform(0.1, 0.3)) * h * (1 if rng.uniform() < 0.5 else -1)
    scale = float(rng.uniform(0.5, 0.75))
    m = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), angle, scale)
    m[0, 2] += tx
    m[1, 2] += ty
    out = cv2.warpAffine(
        img, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE
    )
    return np.clip(out, 0.0, 1.0)


def color_jitter(
    x,
    seed: int,
    brightness: float = 0.2,
    contrast: float = 0.2,
    saturation: float = 0.2,
    hue: float = 0.1,
) -> np.ndarray:
    """Multiplicative brightness/contrast/saturation jitter plus a hue shift.

    Factors are drawn from [1 - f, 1 + f]; hue shifts by a fraction of the
    full circle from [-hue, hue]. Zero parameters leave the image untouched.
    """
    img = _as_pixels(x)
    rng = rng_for(seed, "color_jitter")
    if brightness > 0:
        img = img * float(rng.uniform(1.0 - brightness, 1.0 + brightness))
        img = np.clip(img, 0.0, 1.0)
    if contrast > 0:
        f = float(rng.uniform(1.0 - contrast, 1.0 + contrast))
        mean = float((img @ _LUMA).mean())
        img = np.clip(f * img + (1.0 - f) * mean, 0.0, 1.0)
    if saturation > 0:
        f = float(rng.uniform(1.0 - saturation, 1.0 + saturation))
        gray = (img @ _LUMA)[..., None]
        img = np.clip(f * img + (1.0 - f) * gray, 0.0, 1.0)
    if hue > 0:
        shift = float(rng.uniform(-hue, hue))
        hsv = cv2.cvtColor(img, cv2.COLOR_RGB2HSV)
        hsv[..., 0] = np.mod(hsv[..., 0] + shift * 360.0, 360.0)
        img = np.clip(cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB), 0.0, 1.0)
    return img.astype(np.float32)


_TRANSFORMS = {
    "crop_rotate": crop_rotate,
    "affine": affine,
    "color_jitter": color_jitter,
}


# ---------------------------------------------------------------------------
# episode-level application
# ---------------------------------------------------------------------------

@dataclass
class EpisodeRepresentation:
    """Rectifier-weighted embeddings for every sample of one episode."""

    support: list[RectifiedRepresentation]
    queries: list[RectifiedRepresentation]


def _base_image(z, spec, translator, image_cache):
    """Reconstruction of z (cached) unless the spec asks for raw inputs."""
    if not spec.use_reconstruction:
        return _as_pixels(z)
    if image_cache is not None and z.source_id in image_cache:
        return image_cache[z.source_id]
    img = _translate_pairs(translator, [z], [z])[0]
    if image_cache is not None:
        image_cache[z.source_id] = img
    return img


def _augment_rectifier(samples, spec, episode_seed, model, translator, selector, train_handle, caches):
    """Translator-based copies, optionally crop-rotating the original term."""
    config = spec.rectifier_config()
    compose = bool(spec.params.get("compose_crop_rotate", False))
    # a plain reconstruction embedding is episode-independent and cacheable
    base_emb_cache = None if compose or caches is None else caches.get("base_emb")

    def base_key(z):
        return (z.source_id, True)

    all_neighbours = [
        pick_neighbours(
            z, config.k, config.pool_size, config.selector_mode,
            selector, train_handle, episode_seed,
        )
        for z in samples
    ]
    shapes, styles, recon_cached = [], [], []
    for z, neighbours in zip(samples, all_neighbours):
        if config.mode == "style_from_train":
            shapes += [z] * len(neighbours)
            styles += list(neighbours)
        else:
            shapes += list(neighbours)
            styles += [z] * len(neighbours)
        cached = base_emb_cache is not None and base_key(z) in base_emb_cache
        recon_cached.append(cached)
        if not cached:
            shapes.append(z)
            styles.append(z)
    generated = _translate_pairs(translator, shapes, styles)

    to_embed, plan = [], []
    cursor = 0
    for z, neighbours, cached in zip(samples, all_neighbours, recon_cached):
        k = len(neighbours)
        copies = generated[cursor:cursor + k]
        cursor += k
        original = None
        if not cached:
            original = generated[cursor]
            cursor += 1
            if compose:
                original = crop_rotate(
                    original, derive_seed(spec.seed, episode_seed, z.source_id, "compose")
                )
        descriptors = [f"copy:{config.mode}:{v.source_id}" for v in neighbours]
        descriptors.append("reconstruction+crop_rotate" if compose else "reconstruction")
        plan.append((z, descriptors, len(to_embed), k, cached))
        to_embed += copies if cached else copies + [original]

    emb = _embed(to_embed, model)
    reps = []
    for z, descriptors, start, k, cached in plan:
        components = [emb[start + j] for j in range(k)]
        if cached:
            components.append(base_emb_cache[base_key(z)])
        else:
            components.append(emb[start + k])
            if base_emb_cache is not None:
                base_emb_cache[base_key(z)] = emb[start + k]
        reps.append(
            assemble_representation(
                z.source_id, descriptors,
                mixture_weights(k, spec.weighting, spec.beta),
                components,
            )
        )
    return reps


def _augment_baseline(samples, spec, episode_seed, model, translator, selector, train_handle, caches):
    """Pixel-level copies of the base image under the rectifier weighting."""
    image_cache = caches.get("recon_img") if caches is not None else None
    base_emb_cache = caches.get("base_emb") if caches is not None else None

    def base_key(z):
        return (z.source_id, spec.use_reconstruction)

    to_embed, plan = [], []
    for z in samples:
        base_cached = base_emb_cache is not None and base_key(z) in base_emb_cache
        base = None
        if spec.kind != "one_shot" or not base_cached:
            base = _base_image(z, spec, translator, image_cache)
        if spec.kind == "one_shot":
            copies, descriptors = [], []
        elif spec.kind == "mixup":
            neighbours = pick_neighbours(
                z, spec.copies, int(spec.params.get("pool_size", 20)),
                spec.params.get("selector_mode", "best"),
                selector, train_handle, episode_seed,
            )
            copies = [mixup(base, v) for v in neighbours]
            descriptors = [f"copy:mixup:{v.source_id}" for v in neighbours]
        else:
            fn = _TRANSFORMS[spec.kind]
            kwargs = dict(spec.params.get("factors", {})) if spec.kind == "color_jitter" else {}
            copies = [
                fn(base, derive_seed(spec.seed, episode_seed, z.source_id, i), **kwargs)
                for i in range(spec.copies)
            ]
            descriptors = [f"copy:{spec.kind}#{i}" for i in range(spec.copies)]
        descriptors = descriptors + [
            "reconstruction" if spec.use_reconstruction else "original"
        ]
        plan.append((z, descriptors, len(to_embed), len(copies), base_cached))
        to_embed += copies if base_cached else copies + [base]

    emb = _embed(to_embed, model)
    reps = []
    for z, descriptors, start, n_copies, base_cached in plan:
        components = [emb[start + j] for j in range(n_copies)]
        if base_cached:
            components.append(base_emb_cache[base_key(z)])
        else:
            components.append(emb[start + n_copies])
            if base_emb_cache is not None:
                base_emb_cache[base_key(z)] = emb[start + n_copies]
        reps.append(
            assemble_representation(
                z.source_id, descriptors,
                mixture_weights(n_copies, spec.weighting, spec.beta),
                components,
            )
        )
    return reps


def _augment_samples(samples, spec, episode_seed, model, translator, selector, train_handle, caches):
    if spec.kind == "rectifier":
        return _augment_rectifier(
            samples, spec, episode_seed, model, translator, selector, train_handle, caches
        )
    return _augment_baseline(
        samples, spec, episode_seed, model, translator, selector, train_handle, caches
    )


def augment_episode(
    episode: Episode,
    spec: AugmenterSpec,
    model,
    translator,
    selector,
    train_handle: DatasetHandle,
    query_spec: AugmenterSpec | None = None,
    caches: dict | None = None,
) -> EpisodeRepresentation:
    """Apply one augmentation policy to an episode's supports (and queries).

    Queries default to the untouched one-shot path with the same
    reconstruction convention. Embedding averages use exactly the rectifier's
    weighting with the augmenter's copies substituted for translations.
    """
    if query_spec is None:
        query_spec = AugmenterSpec(
            kind="one_shot", copies=0,
            use_reconstruction=spec.use_reconstruction, seed=spec.seed,
        )
    caches = caches if caches is not None else {"recon_img": {}, "base_emb": {}}
    support = _augment_samples(
        episode.support, spec, episode.episode_seed,
        model, translator, selector, train_handle, caches,
    )
    queries = _augment_samples(
        episode.queries, query_spec, episode.episode_seed,
        model, translator, selector, train_handle, caches,
    )
    return EpisodeRepresentation(support=support, queries=queries)
