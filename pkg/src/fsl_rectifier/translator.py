"""Shape/style-disentangling image translator and its adversarial training.

The generator combines a spatial shape code from one image with a pooled
style vector from another and decodes them through adaptive instance
normalization, so translations keep the first image's layout and take the
second image's appearance. The discriminator shares one feature extractor
between a per-class real/fake probability and an auxiliary class head; both
drive the alternating minimax updates.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import IMAGE_SIZE
from .data_pipeline import DatasetHandle, ImageSample
from .errors import NumericGuardError, StateError, TrainingDivergedError
from .seeding import rng_for

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7


# ---------------------------------------------------------------------------
# latent codes
# ---------------------------------------------------------------------------

@dataclass
class ShapeCode:
    """Spatial latent preserving pose and layout."""

    grid: np.ndarray  # C x h x w


@dataclass
class StyleCode:
    """Pooled appearance latent; averaging any number of images keeps its size."""

    vector: np.ndarray  # d


# ---------------------------------------------------------------------------
# network blocks
# ---------------------------------------------------------------------------

class ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, 1, 1)
        self.conv2 = nn.Conv2d(ch, ch, 3, 1, 1)
        self.norm1 = nn.InstanceNorm2d(ch)
        self.norm2 = nn.InstanceNorm2d(ch)

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return x + y


def adain(x, gamma, beta, eps=1e-5):
    """Normalize per instance and channel, then apply style scale and shift."""
    mean = x.mean(dim=(2, 3), keepdim=True)
    std = x.var(dim=(2, 3), keepdim=True, unbiased=False).add(eps).sqrt()
    return gamma[..., None, None] * (x - mean) / std + beta[..., None, None]


class AdainResBlock(nn.Module):
    """Residual block whose normalizations are driven by the style vector."""

    def __init__(self, ch):
        super().__init__()
        self.ch = ch
        self.conv1 = nn.Conv2d(ch, ch, 3, 1, 1)
        self.conv2 = nn.Conv2d(ch, ch, 3, 1, 1)

    @property
    def n_params(self):
        return 4 * self.ch  # gamma/beta for each of the two layers

    def forward(self, x, params):
        g1, b1, g2, b2 = params.split(self.ch, dim=1)
        y = F.relu(adain(self.conv1(x), g1, b1))
        y = adain(self.conv2(y), g2, b2)
        return x + y


class ShapeEncoder(nn.Module):
    """Convolutional layers plus residual blocks; keeps a spatial grid."""

    def __init__(self, base, downsamples, n_res, stem_stride=1):
        super().__init__()
        layers = [nn.Conv2d(3, base, 7, stem_stride, 3), nn.InstanceNorm2d(base), nn.ReLU(inplace=True)]
        ch = base
        for _ in range(downsamples):
            layers += [nn.Conv2d(ch, ch * 2, 4, 2, 1), nn.InstanceNorm2d(ch * 2), nn.ReLU(inplace=True)]
            ch *= 2
        layers += [ResBlock(ch) for _ in range(n_res)]
        self.net = nn.Sequential(*layers)
        self.out_channels = ch
        self.total_downscale = stem_stride * 2 ** downsamples

    def forward(self, x):
        return self.net(x)


class StyleEncoder(nn.Module):
    """Convolutional layers, global pooling, then a projection to the style dim."""

    def __init__(self, base, downsamples, style_dim):
        super().__init__()
        layers = [nn.Conv2d(3, base, 7, 2, 3), nn.ReLU(inplace=True)]
        ch = base
        for _ in range(downsamples):
            nxt = min(ch * 2, base * 8)
            layers += [nn.Conv2d(ch, nxt, 4, 2, 1), nn.ReLU(inplace=True)]
            ch = nxt
        self.net = nn.Sequential(*layers)
        self.project = nn.Conv2d(ch, style_dim, 1, 1, 0)
        self.style_dim = style_dim

    def forward(self, x):
        h = self.net(x)
        h = F.adaptive_avg_pool2d(h, 1)
        return self.project(h).flatten(1)


class Decoder(nn.Module):
    """AdaIN residual blocks followed by upscaling convolutions; output in [0, 1].

    With ``final_interp`` the last factor of 2 is plain bilinear interpolation
    after the RGB projection instead of a learned stage, halving the cost of
    the full-resolution ops.
    """

    def __init__(self, content_ch, upscale_factor, n_res, style_dim, final_interp=False):
        super().__init__()
        self.blocks = nn.ModuleList([AdainResBlock(content_ch) for _ in range(n_res)])
        n_params = sum(b.n_params for b in self.blocks)
        self.mlp = nn.Sequential(
            nn.Linear(style_dim, 128), nn.ReLU(inplace=True),
            nn.Linear(128, n_params),
        )
        self.final_interp = final_interp
        learned = int(np.log2(upscale_factor)) - (1 if final_interp else 0)
        if 2 ** (learned + (1 if final_interp else 0)) != upscale_factor:
            raise ValueError(f"upscale factor {upscale_factor} must be a power of 2")
        ups = []
        ch = content_ch
        for _ in range(learned):
            # GroupNorm(1) here, not InstanceNorm: per-channel renormalization
            # would strip the style statistics the AdaIN blocks injected.
            ups += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(ch, ch // 2, 3, 1, 1),
                nn.GroupNorm(1, ch // 2),
                nn.ReLU(inplace=True),
            ]
            ch //= 2
        self.up = nn.Sequential(*ups)
        self.to_rgb = nn.Conv2d(ch, 3, 5, 1, 2)

    def forward(self, content, style):
        params = self.mlp(style)
        offset = 0
        h = content
        for block in self.blocks:
            h = block(h, params[:, offset:offset + block.n_params])
            offset += block.n_params
        h = self.up(h)
        out = (torch.tanh(self.to_rgb(h)) + 1.0) / 2.0
        if self.final_interp:
            out = F.interpolate(out, scale_factor=2, mode="bilinear", align_corners=False)
        return out


class Discriminator(nn.Module):
    """Feature extractor with a class-sized linear head.

    The head doubles as a per-class real/fake score: the probability of an
    image being real for class c is the sigmoid of logit c. Removing the head
    leaves the feature extractor used by the matching loss.
    """

    GRID = 4  # pooled feature grid; keeps coarse layout so shape classes separate

    def __init__(self, base, n_classes, downsamples=4):
        super().__init__()
        layers = []
        ch_in = 3
        ch = base
        for _ in range(downsamples):
            layers += [nn.Conv2d(ch_in, ch, 4, 2, 1), nn.LeakyReLU(0.2, inplace=True)]
            ch_in = ch
            ch = min(ch * 2, base * 8)
        self.features = nn.Sequential(*layers)
        self.feature_dim = ch_in * self.GRID * self.GRID
        self.classifier = nn.Linear(self.feature_dim, n_classes)

    def extract(self, x):
        h = self.features(x)
        return F.adaptive_avg_pool2d(h, self.GRID).flatten(1)

    def logits(self, x):
        return self.classifier(self.extract(x))

    def real_probability(self, x, labels):
        logit = self.logits(x).gather(1, labels.view(-1, 1)).squeeze(1)
        return torch.sigmoid(logit)


# ---------------------------------------------------------------------------
# losses (pure, independently testable)
# ---------------------------------------------------------------------------

def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x), dtype=torch.float32)


def gan_loss(real_probs, fake_probs, eps: float = PROB_EPS):
    """Adversarial losses from per-image real/fake probabilities.

    Returns ``(d_loss, g_loss)`` where the discriminator minimizes
    ``E[-log D(x)] + E[-log(1 - D(fake))]`` and the generator minimizes the
    non-saturating ``E[-log D(fake)]``.
    """
    real = _as_tensor(real_probs)
    fake = _as_tensor(fake_probs)
    for p in (real, fake):
        if not torch.isfinite(p).all() or p.min() < 0.0 or p.max() > 1.0:
            raise NumericGuardError("discriminator probabilities left [0, 1]")
    real = real.clamp(eps, 1.0 - eps)
    fake = fake.clamp(eps, 1.0 - eps)
    d_loss = (-torch.log(real)).mean() + (-torch.log(1.0 - fake)).mean()
    g_loss = (-torch.log(fake)).mean()
    return d_loss, g_loss


def l1_reconstruction(x, x_rec):
    """Mean absolute error over pixels, averaged over the batch."""
    x = _as_tensor(x)
    x_rec = _as_tensor(x_rec)
    if x.shape != x_rec.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_rec.shape)}")
    return (x - x_rec).abs().mean()


def feature_matching_loss(fake_features, real_features):
    """Mean absolute difference between extracted feature vectors."""
    fake = _as_tensor(fake_features)
    real = _as_tensor(real_features)
    if fake.shape != real.shape:
        raise ValueError(f"shape mismatch: {tuple(fake.shape)} vs {tuple(real.shape)}")
    return (fake - real).abs().mean()


def classifier_loss(logits, labels):
    """Softmax cross-entropy of class logits against integer labels."""
    logits = _as_tensor(logits)
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    n_classes = logits.shape[-1]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return F.cross_entropy(logits, labels)


# ---------------------------------------------------------------------------
# bundle
# ---------------------------------------------------------------------------

def images_to_tensor(images) -> torch.Tensor:
    """Stack samples/arrays into a BCHW float tensor."""
    arrays = []
    for img in images:
        arr = img.pixels if isinstance(img, ImageSample) else np.asarray(img, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected HxWx3 image, got {arr.shape}")
        arrays.append(np.transpose(arr, (2, 0, 1)))
    return torch.from_numpy(np.stack(arrays).astype(np.float32))


def tensor_to_images(t: torch.Tensor) -> list[np.ndarray]:
    return [np.transpose(img, (1, 2, 0)).copy() for img in t.detach().cpu().numpy()]


class TranslatorBundle:
    """Generator and discriminator weights plus the training counter.

    Holds the five weight groups (shape encoder, style encoder, decoder,
    discriminator feature extractor, classifier head). A bundle in inference
    mode is immutable and safe for concurrent translate calls.
    """

    def __init__(self, config: dict, n_classes: int, class_ids: list[str] | None = None):
        t = config["translator"]
        base = int(t["base_channels"])
        self.config = config
        self.n_classes = n_classes
        self.class_ids = list(class_ids) if class_ids else []
        self.iteration = 0
        self.shape_encoder = ShapeEncoder(
            base, int(t["content_downsamples"]), int(t["n_res_blocks"]),
            stem_stride=int(t.get("stem_stride", 1)),
        )
        self.style_encoder = StyleEncoder(base, int(t["style_downsamples"]), int(t["style_dim"]))
        self.decoder = Decoder(
            self.shape_encoder.out_channels,
            self.shape_encoder.total_downscale,
            int(t["n_res_blocks"]),
            int(t["style_dim"]),
            final_interp=bool(t.get("final_upsample_interp", False)),
        )
        self.discriminator = Discriminator(int(t["disc_channels"]), n_classes)
        self._loaded = True
        self.eval()

    # -- mode management ----------------------------------------------------
    def modules(self):
        return [self.shape_encoder, self.style_encoder, self.decoder, self.discriminator]

    def eval(self):
        for m in self.modules():
            m.eval()
        return self

    def train_mode(self):
        for m in self.modules():
            m.train()
        return self

    def generator_parameters(self):
        for m in (self.shape_encoder, self.style_encoder, self.decoder):
            yield from m.parameters()

    def discriminator_parameters(self):
        yield from self.discriminator.parameters()

    def _require_loaded(self):
        if not getattr(self, "_loaded", False):
            raise StateError("translator bundle is not loaded")

    # -- encoding / decoding -------------------------------------------------
    @torch.no_grad()
    def encode_shape(self, x) -> ShapeCode:
        self._require_loaded()
        grid = self.shape_encoder(images_to_tensor([x]))[0]
        return ShapeCode(grid=grid.cpu().numpy())

    @torch.no_grad()
    def encode_shape_batch(self, xs) -> list[ShapeCode]:
        self._require_loaded()
        grids = self.shape_encoder(images_to_tensor(xs))
        return [ShapeCode(grid=g) for g in grids.cpu().numpy()]

    @torch.no_grad()
    def encode_style(self, images) -> StyleCode:
        """Mean of the per-image style latents; a singleton is its own latent."""
        self._require_loaded()
        if isinstance(images, (ImageSample, np.ndarray)):
            images = [images]
        if len(images) == 0:
            raise ValueError("encode_style needs at least one image")
        vecs = self.style_encoder(images_to_tensor(images))
        return StyleCode(vector=vecs.mean(dim=0).cpu().numpy())

    @torch.no_grad()
    def decode(self, shape_code: ShapeCode, style_code: StyleCode) -> np.ndarray:
        self._require_loaded()
        content = torch.as_tensor(shape_code.grid, dtype=torch.float32).unsqueeze(0)
        style = torch.as_tensor(style_code.vector, dtype=torch.float32).unsqueeze(0)
        out = self.decoder(content, style)
        return tensor_to_images(out)[0]

    def generator_forward(self, x_t: torch.Tensor, y_t: torch.Tensor) -> torch.Tensor:
        """Differentiable G(x, y): shape of x, style of y."""
        return self.decoder(self.shape_encoder(x_t), self.style_encoder(y_t))

    @torch.no_grad()
    def translate(self, x, y) -> np.ndarray:
        """G(x, y): one image with the shape of ``x`` and the style of ``y``.

        ``y`` may be a list of images; their style latents are averaged.
        """
        self._require_loaded()
        content = self.shape_encoder(images_to_tensor([x]))
        style = self.encode_style(y if isinstance(y, list) else [y])
        style_t = torch.as_tensor(style.vector, dtype=torch.float32).unsqueeze(0)
        return tensor_to_images(self.decoder(content, style_t))[0]

    @torch.no_grad()
    def translate_batch(self, shape_images, style_images) -> list[np.ndarray]:
        """Pairwise G(x_i, y_i) in one forward pass."""
        self._require_loaded()
        if len(shape_images) != len(style_images):
            raise ValueError("shape/style batches must align")
        if not shape_images:
            return []
        x_t = images_to_tensor(shape_images)
        y_t = images_to_tensor(style_images)
        return tensor_to_images(self.generator_forward(x_t, y_t))

    def reconstruct(self, x) -> np.ndarray:
        """G(x, x), the reconstruction of a sample."""
        return self.translate(x, x)

    # -- batched losses over images -----------------------------------------
    def recon_loss(self, images) -> torch.Tensor:
        """E[|x - G(x, x)|] over a batch of images."""
        self._require_loaded()
        x_t = images_to_tensor(images)
        return l1_reconstruction(x_t, self.generator_forward(x_t, x_t))

    def feature_matching(self, fake_t: torch.Tensor, style_t: torch.Tensor) -> torch.Tensor:
        return feature_matching_loss(
            self.discriminator.extract(fake_t), self.discriminator.extract(style_t)
        )

    @torch.no_grad()
    def class_logits(self, images) -> np.ndarray:
        """Classifier-head logits for a batch of images."""
        self._require_loaded()
        return self.discriminator.logits(images_to_tensor(images)).cpu().numpy()

    # -- persistence ----------------------------------------------------------
    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "weights": {
                    "shape_encoder": self.shape_encoder.state_dict(),
                    "style_encoder": self.style_encoder.state_dict(),
                    "decoder": self.decoder.state_dict(),
                    "disc_features": self.discriminator.features.state_dict(),
                    "classifier_head": self.discriminator.classifier.state_dict(),
                },
                "iteration": self.iteration,
                "n_classes": self.n_classes,
                "class_ids": self.class_ids,
                "config": self.config,
            },
            path,
        )
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TranslatorBundle":
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
        bundle = cls(payload["config"], payload["n_classes"], payload.get("class_ids"))
        w = payload["weights"]
        bundle.shape_encoder.load_state_dict(w["shape_encoder"])
        bundle.style_encoder.load_state_dict(w["style_encoder"])
        bundle.decoder.load_state_dict(w["decoder"])
        bundle.discriminator.features.load_state_dict(w["disc_features"])
        bundle.discriminator.classifier.load_state_dict(w["classifier_head"])
        bundle.iteration = int(payload["iteration"])
        return bundle.eval()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _check_finite(value: torch.Tensor, what: str, batch_ids: list[str]) -> None:
    if not torch.isfinite(value).all():
        raise TrainingDivergedError(
            f"{what} became non-finite; offending batch: {batch_ids}"
        )


def _sample_batch(handle: DatasetHandle, rng, batch_size: int):
    samples = []
    labels = []
    for _ in range(batch_size):
        c = handle.classes[int(rng.integers(handle.n_classes))]
        sid = handle.index[c][int(rng.integers(len(handle.index[c])))]
        samples.append(handle.get_sample(c, sid))
        labels.append(handle.class_label(c))
    return samples, torch.tensor(labels, dtype=torch.long)


def train_translator(
    config: dict,
    train_handle: DatasetHandle,
    out_dir: str | Path,
    resume: str | Path | None = None,
) -> Path:
    """Run the alternating minimax loop and return the final checkpoint path.

    Uses the train split only. Generated images are labeled with the class of
    whichever source carries class identity (shape source for shape-defined
    datasets, style source otherwise). Losses are logged per iteration to
    ``loss_log.csv``; checkpoints are written as ``translator_iter{N}.ckpt``.
    """
    t = config["translator"]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(int(t["seed"]))

    if resume is not None:
        bundle = TranslatorBundle.load(resume)
    else:
        bundle = TranslatorBundle(config, train_handle.n_classes, train_handle.classes)
    bundle.train_mode()

    class_source = "shape" if config["dataset"].get("class_factor", "shape") == "shape" else "style"
    k_recon = float(t["k_recon"])
    k_fm = float(t["k_feature_match"])
    k_cls = float(t["k_classifier"])
    max_iter = int(t["max_iter"])
    batch_size = int(t["batch_size"])

    opt_g = torch.optim.Adam(bundle.generator_parameters(), lr=float(t["lr"]), betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(bundle.discriminator_parameters(), lr=float(t["lr"]), betas=(0.5, 0.999))

    log_path = out_dir / "loss_log.csv"
    write_header = resume is None or not log_path.exists()
    log_file = open(log_path, "a" if resume else "w", newline="")
    log = csv.writer(log_file)
    if write_header:
        log.writerow(["iter", "d_loss", "g_gan", "recon", "fm", "cls"])

    rng = rng_for(int(t["seed"]), "translator-batches", bundle.iteration)
    disc = bundle.discriminator
    checkpoint_every = int(t.get("checkpoint_every", 5000))
    last_path = None

    try:
        while bundle.iteration < max_iter:
            bundle.iteration += 1
            x_samples, x_labels = _sample_batch(train_handle, rng, batch_size)
            y_samples, y_labels = _sample_batch(train_handle, rng, batch_size)
            batch_ids = [s.source_id for s in x_samples + y_samples]
            x_t = images_to_tensor(x_samples)
            y_t = images_to_tensor(y_samples)
            fake_labels = x_labels if class_source == "shape" else y_labels

            # discriminator step
            with torch.no_grad():
                fake_t = bundle.generator_forward(x_t, y_t)
            real_logits = disc.logits(x_t)
            p_real = torch.sigmoid(real_logits.gather(1, x_labels.view(-1, 1)).squeeze(1))
            p_fake = disc.real_probability(fake_t, fake_labels)
            d_gan, _ = gan_loss(p_real, p_fake)
            d_cls = classifier_loss(real_logits, x_labels)
            d_total = d_gan + k_cls * d_cls
            _check_finite(d_total, "discriminator loss", batch_ids)
            opt_d.zero_grad()
            d_total.backward()
            opt_d.step()

            # generator step
            fake_t = bundle.generator_forward(x_t, y_t)
            fake_logits = disc.logits(fake_t)
            p_fake = torch.sigmoid(fake_logits.gather(1, fake_labels.view(-1, 1)).squeeze(1))
            _, g_gan = gan_loss(p_fake.detach(), p_fake)
            recon = bundle.recon_loss(x_samples)
            fm = bundle.feature_matching(fake_t, y_t)
            g_cls = classifier_loss(fake_logits, fake_labels)
            g_total = g_gan + k_recon * recon + k_fm * fm + k_cls * g_cls
            _check_finite(g_total, "generator loss", batch_ids)
            opt_g.zero_grad()
            g_total.backward()
            opt_g.step()

            row = {
                "d_loss": d_total.detach().item(),
                "g_gan": g_gan.detach().item(),
                "recon": recon.detach().item(),
                "fm": fm.detach().item(),
                "cls": g_cls.detach().item(),
            }
            log.writerow([bundle.iteration] + [f"{v:.6f}" for v in row.values()])
            if bundle.iteration % 100 == 0:
                log_file.flush()
                logger.info(
                    "iter %d d=%.4f g_gan=%.4f recon=%.4f fm=%.4f cls=%.4f",
                    bundle.iteration, row["d_loss"], row["g_gan"],
                    row["recon"], row["fm"], row["cls"],
                )
            if bundle.iteration % checkpoint_every == 0 or bundle.iteration == max_iter:
                bundle.eval()
                last_path = bundle.save(out_dir / f"translator_iter{bundle.iteration}.ckpt")
                bundle.train_mode()
    finally:
        log_file.close()

    bundle.eval()
    if last_path is None:
        last_path = bundle.save(out_dir / f"translator_iter{bundle.iteration}.ckpt")
    return last_path


def moving_average_recon(log_path: str | Path, window: int = 50) -> tuple[float, float]:
    """(initial, final) moving-average reconstruction loss from a loss log."""
    values = []
    with open(log_path) as fh:
        for row in csv.DictReader(fh):
            values.append(float(row["recon"]))
    if not values:
        raise ValueError(f"empty loss log: {log_path}")
    initial = values[0]
    final = float(np.mean(values[-window:]))
    return initial, final
