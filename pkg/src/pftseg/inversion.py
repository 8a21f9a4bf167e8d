"""Image encoder and latent-code recovery for the pretrained decoder.

The "GAN prior" is produced by reconstruction-pretraining a convolutional
encoder jointly with a single-stream decoder on the synthetic images.
Afterwards `encode` maps an image to the latent code that best reconstructs
it: the encoder's amortized prediction refined by per-image optimization,
returning the best iterate seen (so the refined loss never exceeds the
amortized one).
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import TrainingError, UsageError
from .generator import DecoderConfig, SingleStreamDecoder, TwoStreamDecoder
from .ploss import PerceptualLoss


@dataclass
class PretrainConfig:
    iterations: int = 2000
    batch_size: int = 8
    step_size: float = 1e-3
    seed: int = 0


@dataclass
class InvertConfig:
    iterations: int = 300
    step_size: float = 0.05
    init: str = "encoder-output"  # or "mean-latent"


class Encoder(nn.Module):
    """Small conv net predicting all latent rows of the decoder at once."""

    def __init__(self, config: DecoderConfig, seed: int = 0):
        super().__init__()
        self.config = config
        torch.manual_seed(seed)
        layers = []
        ch_in, res = 3, config.output_resolution
        ch = 32
        while res > config.base_resolution:
            layers += [nn.Conv2d(ch_in, ch, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            ch_in, ch = ch, min(ch * 2, 64)
            res //= 2
        self.convs = nn.Sequential(*layers)
        self.head = nn.Linear(
            ch_in * res * res, config.num_latents * config.latent_dim
        )
        self.to(config.torch_dtype)

    def forward(self, images):
        """images: (B, H, W, 3) in [0,1] -> latent codes (B, N, C)."""
        x = images.permute(0, 3, 1, 2).to(self.config.torch_dtype)
        x = self.convs(x - 0.5)
        w = self.head(x.flatten(1))
        return w.view(-1, self.config.num_latents, self.config.latent_dim)


def _to_image_tensor(image, dtype):
    if torch.is_tensor(image):
        return image.to(dtype)
    return torch.from_numpy(np.ascontiguousarray(image)).to(dtype)


def _synth(decoder, w, stream):
    if isinstance(decoder, TwoStreamDecoder):
        image, _ = decoder.synthesize(w, stream)
    else:
        image, _ = decoder.synthesize(w)
    return image


def pretrain(dataset, config: PretrainConfig, decoder_config: DecoderConfig = None,
             loss_fn: PerceptualLoss = None):
    """Jointly train (encoder, single-stream decoder) to reconstruct images.

    Returns (encoder, decoder, history) where history records held-out
    reconstruction loss at start and end. Deterministic under config.seed.
    """
    if not dataset:
        raise UsageError("pretraining needs a nonempty dataset")
    decoder_config = decoder_config or DecoderConfig()
    loss_fn = loss_fn or PerceptualLoss(seed=0)
    dtype = decoder_config.torch_dtype

    images = [getattr(s, "image", s) for s in dataset]
    images = torch.stack([_to_image_tensor(im, dtype) for im in images])
    n_val = max(1, len(images) // 8)
    train, val = images[:-n_val], images[-n_val:]
    if len(train) == 0:
        train = val

    torch.manual_seed(config.seed)
    encoder = Encoder(decoder_config, seed=config.seed)
    decoder = SingleStreamDecoder(decoder_config, seed=config.seed + 1)
    opt = torch.optim.Adam(
        list(encoder.parameters()) + list(decoder.parameters()), lr=config.step_size
    )

    def val_loss():
        with torch.no_grad():
            return float(loss_fn(_synth(decoder, encoder(val), None), val))

    initial = val_loss()
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    for it in range(config.iterations):
        idx = rng.integers(0, len(train), size=min(config.batch_size, len(train)))
        batch = train[idx.tolist()]
        opt.zero_grad()
        loss = loss_fn(_synth(decoder, encoder(batch), None), batch)
        if not torch.isfinite(loss):
            raise TrainingError(f"pretraining loss became non-finite at iteration {it}")
        loss.backward()
        opt.step()
    final = val_loss()
    history = {"initial_val_loss": initial, "final_val_loss": final}
    return encoder, decoder, history


def encode_batch(images, encoder, decoder, config: InvertConfig, stream="img",
                 loss_fn: PerceptualLoss = None):
    """Invert a batch of images; returns latent codes (B, N, C).

    Refines the amortized encoder outputs by gradient descent on the
    reconstruction loss and returns each image's best iterate.
    """
    loss_fn = loss_fn or PerceptualLoss(seed=0)
    dcfg = encoder.config
    x = torch.stack([_to_image_tensor(im, dcfg.torch_dtype) for im in images])
    if x.shape[1] != dcfg.output_resolution or x.shape[2] != dcfg.output_resolution:
        raise UsageError(
            f"images must be {dcfg.output_resolution}x{dcfg.output_resolution}, "
            f"got {tuple(x.shape[1:3])}"
        )
    with torch.no_grad():
        if config.init == "mean-latent":
            w0 = torch.zeros(
                len(x), dcfg.num_latents, dcfg.latent_dim, dtype=dcfg.torch_dtype
            )
        elif config.init == "encoder-output":
            w0 = encoder(x)
        else:
            raise UsageError(f"unknown init mode {config.init!r}")

    w = w0.clone().requires_grad_(True)
    opt = torch.optim.Adam([w], lr=config.step_size)
    best_w = w0.clone()
    best_loss = torch.full((len(x),), np.inf, dtype=torch.float64)
    for it in range(config.iterations + 1):
        opt.zero_grad()
        recon = _synth(decoder, w, stream)
        losses = loss_fn(recon, x, per_image=True)
        if not torch.isfinite(losses).all():
            raise TrainingError(f"inversion loss became non-finite at iteration {it}")
        with torch.no_grad():
            improved = losses.double() < best_loss
            best_loss[improved] = losses.double()[improved]
            best_w[improved] = w.detach()[improved]
        if it == config.iterations:
            break
        losses.sum().backward()
        opt.step()
    return best_w.detach(), best_loss.numpy()


def encode(image, encoder, decoder, config: InvertConfig, stream="img",
           loss_fn: PerceptualLoss = None):
    """Invert one image to its latent code (N, C)."""
    w, _ = encode_batch([image], encoder, decoder, config, stream, loss_fn)
    return w[0]
