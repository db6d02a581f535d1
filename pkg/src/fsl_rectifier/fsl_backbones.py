"""Few-shot image encoders and their episodic training.

Conv4 stacks four conv-norm-relu-pool blocks; Res12 stacks four residual
stages. Both pool to a fixed-size embedding. Classification inside an
episode is nearest-prototype under a cosine or euclidean metric. Models are
first pretrained with a plain supervised head over the train classes, then
fine-tuned episodically; the pretraining head is dropped at test time.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data_pipeline import DatasetHandle, sample_episode
from .errors import TrainingDivergedError
from .seeding import derive_seed, rng_for
from .translator import images_to_tensor

logger = logging.getLogger(__name__)

COSINE_EPS = 1e-8


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------

def _conv_block(in_ch, out_ch):
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
        nn.MaxPool2d(2),
    )

class Conv4(nn.Module):
    """Four conv blocks, pooled to a 5x5 grid and flattened."""

    def __init__(self, channels=64):
        super().__init__()
        self.encoder = nn.Sequential(
            _conv_block(3, channels),
            _conv_block(channels, channels),
            _conv_block(channels, channels),
            _conv_block(channels, channels),
        )
        self.out_dim = channels * 25

    def forward(self, x):
        h = self.encoder(x)
        h = F.adaptive_avg_pool2d(h, 5)
        return h.flatten(1)


class _ResStage(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1), nn.BatchNorm2d(out_ch), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1), nn.BatchNorm2d(out_ch), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1), nn.BatchNorm2d(out_ch),
        )
        self.skip = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1), nn.BatchNorm2d(out_ch))
        self.pool = nn.MaxPool2d(2)

    def forward(self, x):
        return self.pool(F.leaky_relu(self.convs(x) + self.skip(x), 0.1))


class Res12(nn.Module):
    """Four residual stages with stage-wise pooling; global average at the end."""

    def __init__(self, channels=(64, 160, 320, 640)):
        super().__init__()
        stages = []
        in_ch = 3
        for ch in channels:
            stages.append(_ResStage(in_ch, ch))
            in_ch = ch
        self.stages = nn.Sequential(*stages)
        self.out_dim = in_ch

    def forward(self, x):
        h = self.stages(x)
        return F.adaptive_avg_pool2d(h, 1).flatten(1)


def build_encoder(name: str, config: dict) -> nn.Module:
    fsl = config["fsl"]
    if name == "conv4":
        return Conv4(int(fsl["conv4_channels"]))
    if name == "res12":
        return Res12(tuple(fsl["res12_channels"]))
    raise ValueError(f"unknown encoder: {name}")


# ---------------------------------------------------------------------------
# model wrapper
# ---------------------------------------------------------------------------

@dataclass
class FSLModel:
    """Frozen few-shot model: encoder plus metric head metadata."""

    encoder: nn.Module
    metric: str                  # cos|euc
    temperature: float
    encoder_name: str
    dataset: str
    config: dict
    pretrain_head: nn.Module | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.metric not in ("cos", "euc"):
            raise ValueError(f"metric must be cos or euc, got {self.metric}")
        self.encoder.eval()

    @property
    def embed_dim(self) -> int:
        return self.encoder.out_dim

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "encoder": self.encoder.state_dict(),
                "metric": self.metric,
                "temperature": self.temperature,
                "encoder_name": self.encoder_name,
                "dataset": self.dataset,
                "config": self.config,
            },
            path,
        )
        return path

    @classmethod
    def load(cls, path: str | Path) -> "FSLModel":
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
        encoder = build_encoder(payload["encoder_name"], payload["config"])
        encoder.load_state_dict(payload["encoder"])
        return cls(
            encoder=encoder,
            metric=payload["metric"],
            temperature=float(payload["temperature"]),
            encoder_name=payload["encoder_name"],
            dataset=payload["dataset"],
            config=payload["config"],
        )


@torch.no_grad()
def embed(images, model: FSLModel) -> np.ndarray:
    """Order-preserving embeddings for a batch of images or samples."""
    model.encoder.eval()
    if len(images) == 0:
        return np.zeros((0, model.embed_dim), dtype=np.float32)
    return model.encoder(images_to_tensor(images)).cpu().numpy()


# ---------------------------------------------------------------------------
# nearest-prototype head
# ---------------------------------------------------------------------------

def protonet_logits(query_emb, prototypes, metric: str, temperature: float):
    """Logits of one query against class prototypes.

    Euclidean: ``-||q - p_c||^2 / T``. Cosine: ``cos(q, p_c) / T``. The
    predicted class is the argmax.
    """
    q = np.asarray(query_emb, dtype=np.float64)
    protos = np.asarray(prototypes, dtype=np.float64)
    if protos.ndim != 2 or protos.shape[0] == 0:
        raise ValueError("prototypes must be a non-empty 2-D array")
    if metric == "euc":
        d2 = ((protos - q[None, :]) ** 2).sum(axis=1)
        return -d2 / temperature
    if metric == "cos":
        qn = max(float(np.linalg.norm(q)), COSINE_EPS)
        pn = np.maximum(np.linalg.norm(protos, axis=1), COSINE_EPS)
        return (protos @ q) / (pn * qn) / temperature
    raise ValueError(f"unknown metric: {metric}")


def prototypes_from_support(support_emb: np.ndarray, n_way: int, k_shot: int) -> np.ndarray:
    """Per-class mean of support embeddings; for 1-shot, the embedding itself."""
    emb = np.asarray(support_emb)
    if emb.shape[0] != n_way * k_shot:
        raise ValueError("support embedding count mismatch")
    return emb.reshape(n_way, k_shot, -1).mean(axis=1)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _load_batch_tensor(samples):
    return images_to_tensor(samples)


def pretrain_encoder(
    dataset: DatasetHandle,
    config: dict,
    out_path: str | Path,
    encoder_name: str | None = None,
) -> Path:
    """Supervised classification pretraining over the train classes.

    Saves the encoder with its classifier head and a small validation
    accuracy log (one line per epoch).
    """
    fsl = config["fsl"]
    encoder_name = encoder_name or fsl["encoder"]
    torch.manual_seed(int(fsl["seed"]))
    encoder = build_encoder(encoder_name, config)
    head = nn.Linear(encoder.out_dim, dataset.n_classes)
    opt = torch.optim.Adam(
        list(encoder.parameters()) + list(head.parameters()), lr=float(fsl["pretrain_lr"])
    )

    all_items = [
        (c, sid) for c in dataset.classes for sid in dataset.index[c]
    ]
    rng = rng_for(int(fsl["seed"]), "pretrain-split")
    order = rng.permutation(len(all_items))
    n_val = max(1, int(len(all_items) * float(fsl["val_fraction"])))
    val_items = [all_items[i] for i in order[:n_val]]
    train_items = [all_items[i] for i in order[n_val:]]

    batch_size = int(fsl["pretrain_batch_size"])
    epochs = int(fsl["pretrain_epochs"])
    val_log = []

    def eval_val():
        encoder.eval()
        head.eval()
        correct = 0
        with torch.no_grad():
            for start in range(0, len(val_items), batch_size):
                chunk = val_items[start:start + batch_size]
                x = _load_batch_tensor([dataset.get_sample(c, s) for c, s in chunk])
                y = torch.tensor([dataset.class_label(c) for c, _ in chunk])
                correct += int((head(encoder(x)).argmax(dim=1) == y).sum())
        return correct / len(val_items)

    for epoch in range(epochs):
        encoder.train()
        head.train()
        epoch_rng = rng_for(int(fsl["seed"]), "pretrain-epoch", epoch)
        order = epoch_rng.permutation(len(train_items))
        for start in range(0, len(order), batch_size):
            chunk = [train_items[i] for i in order[start:start + batch_size]]
            if len(chunk) < 2:
                continue  # batchnorm needs more than one sample
            x = _load_batch_tensor([dataset.get_sample(c, s) for c, s in chunk])
            y = torch.tensor([dataset.class_label(c) for c, _ in chunk])
            loss = F.cross_entropy(head(encoder(x)), y)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"pretraining loss non-finite; batch {[s for _, s in chunk]}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
        acc = eval_val()
        val_log.append(acc)
        logger.info("pretrain epoch %d val_acc=%.4f", epoch, acc)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "encoder": encoder.state_dict(),
            "head": head.state_dict(),
            "encoder_name": encoder_name,
            "n_classes": dataset.n_classes,
            "val_acc": val_log,
            "config": config,
        },
        out_path,
    )
    return out_path


def train_fsl(
    encoder_ckpt: str | Path,
    dataset: DatasetHandle,
    config: dict,
    out_path: str | Path,
    n_way: int | None = None,
    k_shot: int | None = None,
) -> Path:
    """Episodic nearest-prototype training on train-split episodes.

    Minimizes cross-entropy of the metric logits over sampled episodes and
    saves a frozen-able model. Sampled class ids are written next to the
    checkpoint as an audit log.
    """
    fsl = config["fsl"]
    n_way = n_way or int(fsl["n_way"])
    k_shot = k_shot or int(fsl["k_shot"])
    n_query = int(fsl["n_query"])
    metric = fsl["metric"]
    temperature = float(
        fsl["temperature_cos"] if metric == "cos" else fsl["temperature_euc"]
    )

    payload = torch.load(Path(encoder_ckpt), map_location="cpu", weights_only=False)
    encoder = build_encoder(payload["encoder_name"], config)
    encoder.load_state_dict(payload["encoder"])
    torch.manual_seed(derive_seed(int(fsl["seed"]), "episodic"))
    opt = torch.optim.Adam(encoder.parameters(), lr=float(fsl["episode_lr"]))

    episodes = int(fsl["episodes"])
    sampled_class_audit: list[list[str]] = []
    encoder.train()
    for i in range(episodes):
        seed = derive_seed(int(fsl["seed"]), "fsl-episode", i)
        episode = sample_episode(dataset, n_way, k_shot, n_query, seed)
        sampled_class_audit.append(episode.support_classes)
        x = _load_batch_tensor(episode.support + episode.queries)
        emb = encoder(x)
        support_emb = emb[: n_way * k_shot]
        query_emb = emb[n_way * k_shot:]
        protos = support_emb.reshape(n_way, k_shot, -1).mean(dim=1)
        if metric == "euc":
            logits = -torch.cdist(query_emb, protos).pow(2) / temperature
        else:
            qn = F.normalize(query_emb, dim=1, eps=COSINE_EPS)
            pn = F.normalize(protos, dim=1, eps=COSINE_EPS)
            logits = qn @ pn.t() / temperature
        labels = torch.tensor(episode.query_labels(), dtype=torch.long)
        loss = F.cross_entropy(logits, labels)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(f"episodic loss non-finite at episode {i}")
        opt.zero_grad()
        loss.backward()
        opt.step()

    encoder.eval()
    model = FSLModel(
        encoder=encoder,
        metric=metric,
        temperature=temperature,
        encoder_name=payload["encoder_name"],
        dataset=dataset.name,
        config=config,
    )
    out_path = Path(out_path)
    model.save(out_path)
    audit_path = out_path.with_suffix(".classes.log")
    with open(audit_path, "w") as fh:
        for classes in sampled_class_audit:
            fh.write(",".join(classes) + "\n")
    return out_path
