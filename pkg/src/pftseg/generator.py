"""StyleGAN-style synthesis decoder, single- and two-stream variants.

The decoder is a stack of modulated 3x3 convolution blocks, one per
resolution from `base_resolution` up to `output_resolution`, each with a
1x1 "toRGB" head feeding a skip-accumulated RGB output. In the two-stream
variant the blocks at coarse resolutions (<= shared_cutoff) are a single
shared instance, while finer blocks are duplicated into a segmentation
branch and an image branch. Every trainable parameter carries a
(stream, group) tag, where stream is one of {shared, seg, img} and group
is one of {conv, toRGB}, so fine-tuning stages can freeze exact subsets.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, InitializationError, UsageError

STREAMS = ("shared", "seg", "img")
GROUPS = ("conv", "toRGB")


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class DecoderConfig:
    base_resolution: int = 4
    output_resolution: int = 32
    shared_cutoff: int = 8
    channels: tuple = (64, 64, 32, 16)  # one entry per resolution level
    latent_dim: int = 64
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.channels, list):
            self.channels = tuple(self.channels)
        for r in (self.base_resolution, self.output_resolution, self.shared_cutoff):
            if not _is_pow2(r):
                raise ConfigurationError(f"resolutions must be powers of two, got {r}")
        if not self.base_resolution <= self.shared_cutoff < self.output_resolution:
            raise ConfigurationError(
                "need base_resolution <= shared_cutoff < output_resolution, got "
                f"{self.base_resolution} / {self.shared_cutoff} / {self.output_resolution}"
            )
        if len(self.channels) != len(self.resolutions):
            raise ConfigurationError(
                f"channels must have {len(self.resolutions)} entries "
                f"(one per resolution), got {len(self.channels)}"
            )
        if any(c < 1 for c in self.channels):
            raise ConfigurationError("channel counts must be >= 1")
        if self.latent_dim < 1:
            raise ConfigurationError("latent_dim must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def resolutions(self):
        res, out = [], self.base_resolution
        while out <= self.output_resolution:
            res.append(out)
            out *= 2
        return res

    @property
    def num_latents(self):
        return len(self.resolutions)

    @property
    def torch_dtype(self):
        return torch.float32 if self.dtype == "float32" else torch.float64


class SynthesisBlock(nn.Module):
    """Modulated 3x3 conv + leaky ReLU, with a 1x1 toRGB head.

    The first block owns the learned constant input instead of upsampling.
    """

    def __init__(self, in_ch, out_ch, latent_dim, resolution, first, gen, dtype):
        super().__init__()
        self.resolution = resolution
        self.first = first

        def rand(*shape, scale):
            return nn.Parameter(
                scale * torch.randn(*shape, generator=gen, dtype=torch.float64).to(dtype)
            )

        if first:
            self.const = rand(in_ch, resolution, resolution, scale=1.0)
        self.style_weight = rand(in_ch, latent_dim, scale=0.2 / latent_dim ** 0.5)
        self.style_bias = nn.Parameter(torch.ones(in_ch, dtype=dtype))
        self.conv_weight = rand(out_ch, in_ch, 3, 3, scale=1.0 / (9 * in_ch) ** 0.5)
        self.conv_bias = nn.Parameter(torch.zeros(out_ch, dtype=dtype))
        self.torgb_weight = rand(3, out_ch, 1, 1, scale=0.5 / out_ch ** 0.5)
        self.torgb_bias = nn.Parameter(torch.zeros(3, dtype=dtype))

    def forward(self, x, w_row):
        """x: (B, in_ch, r, r) or None for the first block; w_row: (B, latent)."""
        if self.first:
            x = self.const[None].expand(w_row.shape[0], -1, -1, -1)
        else:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        style = w_row @ self.style_weight.T + self.style_bias
        x = x * style[:, :, None, None]
        x = F.conv2d(x, self.conv_weight, self.conv_bias, padding=1)
        x = F.leaky_relu(x, 0.2)
        rgb = F.conv2d(x, self.torgb_weight, self.torgb_bias)
        return x, rgb


def _build_blocks(config, gen, indices):
    blocks = []
    for i in indices:
        in_ch = config.channels[max(i - 1, 0)]
        blocks.append(
            SynthesisBlock(
                in_ch, config.channels[i], config.latent_dim,
                config.resolutions[i], first=(i == 0), gen=gen,
                dtype=config.torch_dtype,
            )
        )
    return nn.ModuleList(blocks)


def _check_latent(config, w):
    if not torch.is_tensor(w):
        raise UsageError("latent code must be a torch tensor")
    squeeze = w.ndim == 2
    if squeeze:
        w = w[None]
    if w.ndim != 3 or w.shape[1] != config.num_latents or w.shape[2] != config.latent_dim:
        raise UsageError(
            f"latent code must have shape ({config.num_latents}, "
            f"{config.latent_dim}), got {tuple(w.shape[1:] if w.ndim == 3 else w.shape)}"
        )
    return w.to(config.torch_dtype), squeeze


class _DecoderBase(nn.Module):
    """Shared forward machinery; subclasses provide the block sequence."""

    def _synthesize(self, blocks, w, capture_features):
        x = rgb = None
        feats = []
        for i, block in enumerate(blocks):
            x, rgb_i = block(x, w[:, i])
            if rgb is None:
                rgb = rgb_i
            else:
                rgb = F.interpolate(
                    rgb, scale_factor=2, mode="bilinear", align_corners=False
                ) + rgb_i
            if capture_features:
                feats.append(x)
        image = torch.clamp(rgb + 0.5, 0.0, 1.0).permute(0, 2, 3, 1)
        return image, feats


class SingleStreamDecoder(_DecoderBase):
    """Plain one-branch decoder; the pre-training target architecture."""

    def __init__(self, config: DecoderConfig, seed: int = 0):
        super().__init__()
        self.config = config
        gen = torch.Generator().manual_seed(seed)
        self.blocks = _build_blocks(config, gen, range(len(config.resolutions)))

    def synthesize(self, w, capture_features=False):
        w, squeeze = _check_latent(self.config, w)
        image, feats = self._synthesize(self.blocks, w, capture_features)
        if squeeze:
            image, feats = image[0], [f[0] for f in feats]
        return (image, feats) if capture_features else (image, None)


class TwoStreamDecoder(_DecoderBase):
    """Shared coarse blocks plus seg / img fine branches.

    The shared blocks are single storage instances on both streams'
    forward paths; mutating one mutates both streams.
    """

    def __init__(self, config: DecoderConfig, seed: int = 0):
        super().__init__()
        self.config = config
        n_shared = sum(1 for r in config.resolutions if r <= config.shared_cutoff)
        self.n_shared = n_shared
        gen = torch.Generator().manual_seed(seed)
        self.shared = _build_blocks(config, gen, range(n_shared))
        fine = range(n_shared, len(config.resolutions))
        self.seg = _build_blocks(config, torch.Generator().manual_seed(seed + 1), fine)
        self.img = _build_blocks(config, torch.Generator().manual_seed(seed + 1), fine)

    def _stream_blocks(self, stream):
        if stream not in ("seg", "img"):
            raise UsageError(f"stream must be 'seg' or 'img', got {stream!r}")
        return list(self.shared) + list(getattr(self, stream))

    def synthesize(self, w, stream, capture_features=False):
        """Decode latent w through one stream; returns (image, features).

        image is (H, W, 3) in [0,1] (batched if w is batched); features is
        the list of per-block pre-toRGB activation maps (C_i, H_i, W_i),
        or None when capture_features is False.
        """
        w, squeeze = _check_latent(self.config, w)
        image, feats = self._synthesize(self._stream_blocks(stream), w, capture_features)
        if squeeze:
            image, feats = image[0], [f[0] for f in feats]
        return (image, feats) if capture_features else (image, None)

    # -- parameter tagging ------------------------------------------------

    def parameter_tags(self):
        """name -> (stream, group) for every trainable parameter."""
        tags = {}
        for name, _ in self.named_parameters():
            stream = name.split(".", 1)[0]
            group = "toRGB" if "torgb" in name else "conv"
            tags[name] = (stream, group)
        return tags

    def select_parameters(self, streams, groups):
        """Parameters whose tags fall in streams x groups, as (name, param)."""
        streams, groups = set(streams), set(groups)
        bad = (streams - set(STREAMS)) | (groups - set(GROUPS))
        if bad:
            raise UsageError(f"unknown selector element(s): {sorted(bad)}")
        tags = self.parameter_tags()
        params = dict(self.named_parameters())
        selected = [
            (name, params[name])
            for name in params
            if tags[name][0] in streams and tags[name][1] in groups
        ]
        if not selected:
            raise UsageError(
                f"selector ({sorted(streams)}, {sorted(groups)}) matches no parameters"
            )
        return selected


def init_two_stream(config: DecoderConfig, pretrained: SingleStreamDecoder) -> TwoStreamDecoder:
    """Build a two-stream decoder from pretrained single-stream weights.

    Shared blocks take the pretrained coarse blocks; both fine branches
    start as identical copies of the pretrained fine blocks.
    """
    decoder = TwoStreamDecoder(config)
    src = list(pretrained.blocks)
    if len(src) != len(config.resolutions):
        raise InitializationError(
            f"pretrained decoder has {len(src)} blocks, config needs "
            f"{len(config.resolutions)}"
        )
    with torch.no_grad():
        for dst_blocks, offset in (
            (decoder.shared, 0),
            (decoder.seg, decoder.n_shared),
            (decoder.img, decoder.n_shared),
        ):
            for j, dst in enumerate(dst_blocks):
                src_block = src[offset + j]
                for pname, dparam in dst.named_parameters():
                    sparam = dict(src_block.named_parameters())[pname]
                    if sparam.shape != dparam.shape:
                        raise InitializationError(
                            f"shape mismatch at block {dst.resolution} parameter "
                            f"{pname}: expected {tuple(dparam.shape)}, "
                            f"got {tuple(sparam.shape)}"
                        )
                    dparam.copy_(sparam)
    return decoder


def random_latent(config: DecoderConfig, rng: torch.Generator) -> torch.Tensor:
    return torch.randn(
        config.num_latents, config.latent_dim, generator=rng, dtype=torch.float64
    ).to(config.torch_dtype)
