"""Neighbour selection without running the generator.

A clone of the trained shape encoder is fine-tuned so that the dot product
of its pooled features over a (neighbour, test image) pair regresses the
divergence between the translator's class prediction for the generated pair
and for the neighbour itself. Low scores then flag pairs that translate
cleanly, so the best k candidates of a pool can be picked with two encoder
passes instead of k generator passes.
"""

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data_pipeline import DatasetHandle, ImageSample
from .errors import StateError, TrainingDivergedError
from .seeding import rng_for
from .translator import ShapeEncoder, TranslatorBundle, images_to_tensor

logger = logging.getLogger(__name__)


@dataclass
class NeighbourPool:
    """Train-split candidates a selection draws from."""

    candidates: list[ImageSample]
    pool_size: int

    def __post_init__(self):
        if len(self.candidates) != self.pool_size:
            raise ValueError("pool_size must match the candidate count")
        bad = [c.source_id for c in self.candidates if c.split != "train"]
        if bad:
            raise ValueError(f"pool candidates must come from the train split: {bad[:3]}")


def sample_pool(handle: DatasetHandle, size: int, seed: int) -> NeighbourPool:
    """Uniform candidates over the whole train split, deterministic under seed."""
    if handle.split != "train":
        raise ValueError("neighbour pools are drawn from the train split")
    flat = [(c, sid) for c in handle.classes for sid in handle.index[c]]
    if size > len(flat):
        raise ValueError(f"pool size {size} exceeds {len(flat)} train samples")
    rng = rng_for(seed, "neighbour-pool")
    idx = rng.choice(len(flat), size=size, replace=False)
    return NeighbourPool(
        candidates=[handle.get_sample(*flat[i]) for i in idx], pool_size=size
    )


# ---------------------------------------------------------------------------
# divergence oracle
# ---------------------------------------------------------------------------

def kl_from_logits(p_logits, q_logits) -> float:
    """KL(softmax(p) || softmax(q)); non-negative, zero iff equal distributions."""
    p_logits = torch.as_tensor(np.asarray(p_logits), dtype=torch.float64)
    q_logits = torch.as_tensor(np.asarray(q_logits), dtype=torch.float64)
    log_p = F.log_softmax(p_logits, dim=-1)
    log_q = F.log_softmax(q_logits, dim=-1)
    return float((log_p.exp() * (log_p - log_q)).sum(dim=-1).clamp_min(0.0))


def kl_oracle(x: ImageSample, y: ImageSample, bundle: TranslatorBundle) -> float:
    """Generation-quality target for the pair (x, y).

    Divergence of the class prediction for the translation G(x, y) against
    the prediction for x itself, under the frozen discriminator head.
    """
    return kl_oracle_batch([x], [y], bundle)[0]


@torch.no_grad()
def kl_oracle_batch(xs, ys, bundle: TranslatorBundle) -> list[float]:
    bundle._require_loaded()
    if len(xs) != len(ys):
        raise ValueError("pair batches must align")
    if not xs:
        return []
    x_t = images_to_tensor(xs)
    y_t = images_to_tensor(ys)
    gen_t = bundle.generator_forward(x_t, y_t)
    gen_logits = bundle.discriminator.logits(gen_t).double()
    x_logits = bundle.discriminator.logits(x_t).double()
    log_p = F.log_softmax(gen_logits, dim=-1)
    log_q = F.log_softmax(x_logits, dim=-1)
    kl = (log_p.exp() * (log_p - log_q)).sum(dim=-1).clamp_min(0.0)
    return [float(v) for v in kl]


# ---------------------------------------------------------------------------
# selector model
# ---------------------------------------------------------------------------

class SelectorModel:
    """Pooled clone of the shape encoder whose pairwise dot products score pairs."""

    def __init__(self, encoder: ShapeEncoder, trained: bool = False):
        self.encoder = encoder
        self.trained = trained
        self.encoder.eval()
        self._feature_cache: dict[str, np.ndarray] = {}

    @classmethod
    def from_translator(cls, bundle: TranslatorBundle) -> "SelectorModel":
        return cls(copy.deepcopy(bundle.shape_encoder), trained=False)

    @property
    def feature_dim(self) -> int:
        return self.encoder.out_channels

    def _forward(self, t: torch.Tensor) -> torch.Tensor:
        grid = self.encoder(t)
        return F.adaptive_avg_pool2d(grid, 1).flatten(1)

    @staticmethod
    def _cache_key(image) -> str | None:
        if isinstance(image, ImageSample) and image.source_id != "mem":
            return image.source_id
        return None

    @torch.no_grad()
    def feature(self, image) -> np.ndarray:
        key = self._cache_key(image)
        if key is not None and key in self._feature_cache:
            return self._feature_cache[key]
        vec = self._forward(images_to_tensor([image]))[0].cpu().numpy()
        if key is not None:
            self._feature_cache[key] = vec
        return vec

    @torch.no_grad()
    def features(self, images) -> np.ndarray:
        """Feature matrix over a batch, with per-sample caching by source id."""
        if not images:
            return np.zeros((0, self.feature_dim), dtype=np.float32)
        out: list = [None] * len(images)
        to_run, run_idx = [], []
        for i, img in enumerate(images):
            key = self._cache_key(img)
            if key is not None and key in self._feature_cache:
                out[i] = self._feature_cache[key]
            else:
                to_run.append(img)
                run_idx.append(i)
        if to_run:
            vecs = self._forward(images_to_tensor(to_run)).cpu().numpy()
            for j, i in enumerate(run_idx):
                out[i] = vecs[j]
                key = self._cache_key(images[i])
                if key is not None:
                    self._feature_cache[key] = vecs[j]
        return np.stack(out)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {"encoder": self.encoder.state_dict(), "trained": self.trained},
            path,
        )
        return path

    @classmethod
    def load(cls, path: str | Path, bundle: TranslatorBundle) -> "SelectorModel":
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
        model = cls.from_translator(bundle)
        model.encoder.load_state_dict(payload["encoder"])
        model.trained = bool(payload["trained"])
        return model


def quality_score(x, y, model) -> float:
    """Dot product of the selector features of the two images; symmetric."""
    fx = np.asarray(model.feature(x), dtype=np.float64)
    fy = np.asarray(model.feature(y), dtype=np.float64)
    return float(fx @ fy)


def select_neighbours(
    pool: NeighbourPool,
    y,
    k: int,
    model,
    mode: str = "best",
) -> list[ImageSample]:
    """Pick k pool candidates by predicted generation quality.

    ``best`` returns the k lowest-scoring candidates in ascending score order;
    ``worst`` (the inverse selector) the k highest in descending order. Ties
    break lexicographically on source id.
    """
    if k > pool.pool_size:
        raise ValueError(f"k={k} exceeds pool size {pool.pool_size}")
    if mode not in ("best", "worst"):
        raise ValueError(f"unknown selection mode: {mode}")
    if hasattr(model, "features"):
        feats = np.asarray(model.features(pool.candidates), dtype=np.float64)
        fy = np.asarray(model.feature(y), dtype=np.float64)
        scores = feats @ fy
    else:
        scores = np.array([quality_score(c, y, model) for c in pool.candidates])
    keyed = sorted(
        zip(scores, (c.source_id for c in pool.candidates), pool.candidates),
        key=lambda item: (item[0], item[1]) if mode == "best" else (-item[0], item[1]),
    )
    return [c for _, _, c in keyed[:k]]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _uniform_samples(handle: DatasetHandle, rng, n: int) -> list[ImageSample]:
    flat = [(c, sid) for c in handle.classes for sid in handle.index[c]]
    idx = rng.integers(len(flat), size=n)
    return [handle.get_sample(*flat[i]) for i in idx]


def train_selector(
    translator: TranslatorBundle,
    train_data: DatasetHandle,
    test_data: DatasetHandle,
    config: dict,
    out_path: str | Path | None = None,
) -> SelectorModel:
    """Fit the selector against the frozen translator's divergence targets.

    Pairs one uniform train image with one uniform test image per example (no
    label information) and minimizes the absolute error between the feature
    dot product and the divergence target. The translator is never mutated.
    """
    sel = config["selector"]
    torch.manual_seed(int(sel["seed"]))
    model = SelectorModel.from_translator(translator)
    model.encoder.train()
    opt = torch.optim.Adam(model.encoder.parameters(), lr=float(sel["lr"]))
    rng = rng_for(int(sel["seed"]), "selector-pairs")
    batch_size = int(sel["batch_size"])

    for it in range(int(sel["max_iter"])):
        xs = _uniform_samples(train_data, rng, batch_size)
        ys = _uniform_samples(test_data, rng, batch_size)
        targets = torch.tensor(kl_oracle_batch(xs, ys, translator), dtype=torch.float32)
        fx = model._forward(images_to_tensor(xs))
        fy = model._forward(images_to_tensor(ys))
        scores = (fx * fy).sum(dim=1)
        loss = (scores - targets).abs().mean()
        if not torch.isfinite(loss):
            raise TrainingDivergedError(
                f"selector loss non-finite at iteration {it}; "
                f"batch {[s.source_id for s in xs[:4]]}..."
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        if (it + 1) % 50 == 0:
            logger.info("selector iter %d loss=%.4f", it + 1, float(loss))

    model.encoder.eval()
    model.trained = True
    model._feature_cache.clear()
    if out_path is not None:
        model.save(out_path)
    return model


def regression_error(
    model,
    translator: TranslatorBundle,
    xs: list[ImageSample],
    ys: list[ImageSample],
) -> float:
    """Mean |score - divergence target| over held-out pairs."""
    targets = kl_oracle_batch(xs, ys, translator)
    scores = [quality_score(x, y, model) for x, y in zip(xs, ys)]
    return float(np.mean([abs(s - t) for s, t in zip(scores, targets)]))
