"""Test-input rectification: replace one embedding with a weighted average.

Each test image z is expanded into k translated copies plus its
reconstruction G(z, z); the rectified representation is
``(1 - beta) / k * sum(phi(copy_i)) + beta * phi(G(z, z))``. Copies either
keep z's shape and take a train neighbour's style, or keep z's style and
take a neighbour's shape, depending on which factor carries class identity
in the dataset. Neighbours come from a per-image pool filtered by the
selector.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import fsl_backbones
from .data_pipeline import DatasetHandle, Episode, ImageSample
from .errors import ConfigError
from .seeding import derive_seed, rng_for
from .selector import sample_pool, select_neighbours

logger = logging.getLogger(__name__)

MODES = ("style_from_train", "shape_from_train")
SELECTOR_MODES = ("best", "worst", "random", "none")
WEIGHTINGS = ("simple_average", "explicit_beta")


def double_weight_beta(k: int) -> float:
    """Reconstruction weight giving the original twice each copy's weight."""
    return 2.0 / (k + 2.0)


def mixture_weights(k: int, weighting: str = "simple_average", beta: float | None = None) -> list[float]:
    """k copy weights of (1 - beta) / k followed by the reconstruction weight.

    k=0 degenerates to the reconstruction alone. ``simple_average`` puts the
    same weight on every term (beta = 1 / (k + 1)).
    """
    if k == 0:
        return [1.0]
    if weighting == "simple_average":
        beta = 1.0 / (k + 1.0)
    elif weighting == "explicit_beta":
        if beta is None or not (0.0 <= beta <= 1.0):
            raise ConfigError("explicit_beta requires beta in [0, 1]")
    else:
        raise ConfigError(f"unknown weighting: {weighting}")
    return [(1.0 - beta) / k] * k + [float(beta)]


@dataclass(frozen=True)
class RectifierConfig:
    """How one test image is expanded and re-averaged."""

    mode: str = "style_from_train"
    k: int = 1
    weighting: str = "simple_average"
    beta: float | None = None
    pool_size: int = 20
    selector_mode: str = "best"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown rectifier mode: {self.mode}")
        if self.selector_mode not in SELECTOR_MODES:
            raise ConfigError(f"unknown selector mode: {self.selector_mode}")
        if self.k < 0:
            raise ConfigError("k must be non-negative")
        if self.selector_mode == "none" and self.k > 0:
            raise ConfigError("selector_mode=none only makes sense with k=0")
        if self.k > 0 and self.pool_size < self.k:
            raise ConfigError("pool_size must be at least k")
        mixture_weights(self.k, self.weighting, self.beta)  # validates beta

    @property
    def effective_beta(self) -> float:
        """Weight on the reconstruction term; k=0 forces 1."""
        return mixture_weights(self.k, self.weighting, self.beta)[-1]

    def weights(self) -> list[float]:
        return mixture_weights(self.k, self.weighting, self.beta)

    @classmethod
    def from_dict(cls, d: dict) -> "RectifierConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown rectifier config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RectifiedRepresentation:
    """Averaged embedding with its audit trail."""

    embedding: np.ndarray
    provenance: list[tuple[str, float]]
    original_sample_id: str
    component_embeddings: np.ndarray = field(default=None, repr=False)

    def weight_sum(self) -> float:
        return float(sum(w for _, w in self.provenance))

    def recomputed_embedding(self) -> np.ndarray:
        weights = np.array([w for _, w in self.provenance], dtype=np.float64)
        return (weights[:, None] * self.component_embeddings).sum(axis=0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "original_sample_id": self.original_sample_id,
                "provenance": [{"source": s, "weight": w} for s, w in self.provenance],
            }
        )


def assemble_representation(sample_id, descriptors, weights, components) -> RectifiedRepresentation:
    """Weighted mean of component embeddings plus its provenance record."""
    if len(descriptors) != len(weights) or len(weights) != len(components):
        raise ValueError("descriptors, weights and components must align")
    comp = np.asarray(components, dtype=np.float64)
    embedding = (np.asarray(weights, dtype=np.float64)[:, None] * comp).sum(axis=0)
    return RectifiedRepresentation(
        embedding=embedding,
        provenance=list(zip(descriptors, [float(w) for w in weights])),
        original_sample_id=sample_id,
        component_embeddings=comp,
    )


# ---------------------------------------------------------------------------
# copy generation
# ---------------------------------------------------------------------------

def _translate_pairs(translator, shape_images, style_images):
    if hasattr(translator, "translate_batch"):
        return translator.translate_batch(shape_images, style_images)
    return [translator.translate(x, y) for x, y in zip(shape_images, style_images)]


def generate_copies(z: ImageSample, neighbours: list[ImageSample], mode: str, translator):
    """Translated copies of z in neighbour order, reconstruction last.

    ``style_from_train`` keeps z's shape and takes each neighbour's style;
    ``shape_from_train`` keeps z's style on each neighbour's shape. With no
    neighbours only the reconstruction is returned.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown rectifier mode: {mode}")
    if mode == "style_from_train":
        shapes = [z] * len(neighbours) + [z]
        styles = list(neighbours) + [z]
    else:
        shapes = list(neighbours) + [z]
        styles = [z] * len(neighbours) + [z]
    return _translate_pairs(translator, shapes, styles)


def _embed(images, model) -> np.ndarray:
    if hasattr(model, "embed_batch"):
        return np.asarray(model.embed_batch(images))
    return fsl_backbones.embed(images, model)


def pick_neighbours(
    z,
    k: int,
    pool_size: int,
    selector_mode: str,
    selector,
    train_handle: DatasetHandle,
    seed: int,
) -> list[ImageSample]:
    """Neighbour choice for one test image; the pool is seeded per image.

    A selector failure falls back to random candidates with a warning rather
    than aborting the evaluation.
    """
    if k == 0 or selector_mode == "none":
        return []
    pool = sample_pool(train_handle, pool_size, derive_seed(seed, z.source_id, "pool"))

    def random_pick():
        rng = rng_for(seed, z.source_id, "random-neighbours")
        idx = rng.choice(pool.pool_size, size=k, replace=False)
        return [pool.candidates[i] for i in idx]

    if selector_mode == "random":
        return random_pick()
    try:
        return select_neighbours(pool, z, k, selector, mode=selector_mode)
    except Exception:
        logger.warning(
            "neighbour selection failed for %s; falling back to random candidates",
            z.source_id, exc_info=True,
        )
        return random_pick()


def _descriptors(mode: str, neighbours) -> list[str]:
    return [f"copy:{mode}:{v.source_id}" for v in neighbours] + ["reconstruction"]


def rectify(
    z: ImageSample,
    config: RectifierConfig,
    model,
    selector,
    translator,
    train_handle: DatasetHandle,
    seed: int = 0,
) -> RectifiedRepresentation:
    """Rectified representation of one test image."""
    neighbours = pick_neighbours(
        z, config.k, config.pool_size, config.selector_mode,
        selector, train_handle, seed,
    )
    images = generate_copies(z, neighbours, config.mode, translator)
    emb = _embed(images, model)
    return assemble_representation(
        z.source_id, _descriptors(config.mode, neighbours), config.weights(), emb
    )


def rectify_many(
    samples: list[ImageSample],
    config: RectifierConfig,
    model,
    selector,
    translator,
    train_handle: DatasetHandle,
    seed: int = 0,
    recon_cache: dict | None = None,
) -> list[RectifiedRepresentation]:
    """Batched rectification: one generator pass over all needed copies.

    ``recon_cache`` maps source ids to reconstruction embeddings and may be
    shared across calls operating on the same frozen components.
    """
    all_neighbours = [
        pick_neighbours(
            z, config.k, config.pool_size, config.selector_mode,
            selector, train_handle, seed,
        )
        for z in samples
    ]
    shapes, styles = [], []
    for z, neighbours in zip(samples, all_neighbours):
        if config.mode == "style_from_train":
            shapes += [z] * len(neighbours)
            styles += list(neighbours)
        else:
            shapes += list(neighbours)
            styles += [z] * len(neighbours)
        if recon_cache is None or z.source_id not in recon_cache:
            shapes.append(z)
            styles.append(z)

    generated = _translate_pairs(translator, shapes, styles)
    emb = _embed(generated, model) if len(generated) else np.zeros((0, 1))

    out = []
    cursor = 0
    for z, neighbours in zip(samples, all_neighbours):
        k = len(neighbours)
        copy_emb = [emb[cursor + j] for j in range(k)]
        cursor += k
        if recon_cache is not None and z.source_id in recon_cache:
            recon_emb = recon_cache[z.source_id]
        else:
            recon_emb = emb[cursor]
            cursor += 1
            if recon_cache is not None:
                recon_cache[z.source_id] = recon_emb
        out.append(
            assemble_representation(
                z.source_id,
                _descriptors(config.mode, neighbours),
                config.weights(),
                copy_emb + [recon_emb],
            )
        )
    return out


def predict(
    episode: Episode,
    config_query: RectifierConfig,
    config_support: RectifierConfig,
    model,
    selector,
    translator,
    train_handle: DatasetHandle,
    recon_cache: dict | None = None,
) -> list[str]:
    """Rectified nearest-prototype prediction: one class id per query."""
    seed = episode.episode_seed
    support_reps = rectify_many(
        episode.support, config_support, model, selector, translator,
        train_handle, seed=seed, recon_cache=recon_cache,
    )
    query_reps = rectify_many(
        episode.queries, config_query, model, selector, translator,
        train_handle, seed=seed, recon_cache=recon_cache,
    )
    return predict_from_representations(episode, support_reps, query_reps, model)


def predict_from_representations(
    episode: Episode,
    support_reps: list[RectifiedRepresentation],
    query_reps: list[RectifiedRepresentation],
    model,
) -> list[str]:
    """Nearest-prototype predictions from already-rectified embeddings."""
    support_emb = np.stack([r.embedding for r in support_reps])
    protos = fsl_backbones.prototypes_from_support(support_emb, episode.n_way, episode.k_shot)
    classes = episode.support_classes
    predictions = []
    for rep in query_reps:
        logits = fsl_backbones.protonet_logits(
            rep.embedding, protos, model.metric, model.temperature
        )
        predictions.append(classes[int(np.argmax(logits))])
    return predictions
