"""Multi-scale perceptual image distance with fixed random features.

Stands in for a pretrained perceptual network: images are compared through
a frozen, seed-pinned stack of random convolution features at three scales
(full, /2, /4), with unit-normalized feature maps, plus a small pixel-space
L2 term that makes the distance zero iff the inputs are equal.
"""

import torch
import torch.nn.functional as F

from .errors import UsageError


class PerceptualLoss:
    """Callable distance between two H x W x 3 images in [0,1].

    The feature weights are drawn once from a seeded generator and never
    trained; two instances with the same seed are identical.
    """

    def __init__(self, seed: int = 0, channels: int = 12, num_scales: int = 3,
                 pixel_weight: float = 0.1):
        gen = torch.Generator().manual_seed(seed)
        self.num_scales = num_scales
        self.pixel_weight = pixel_weight
        w = torch.randn(channels, 3, 3, 3, generator=gen, dtype=torch.float64)
        self.weight = w / (w.flatten(1).norm(dim=1)[:, None, None, None])
        self._cache = {}

    def _weight(self, dtype):
        if dtype not in self._cache:
            self._cache[dtype] = self.weight.to(dtype)
        return self._cache[dtype]

    def _features(self, x):
        """x: (B, 3, H, W) -> list of unit-normalized feature maps."""
        weight = self._weight(x.dtype)
        feats = []
        for s in range(self.num_scales):
            f = F.conv2d(x, weight, padding=1)
            f = F.leaky_relu(f, 0.2)
            f = f / torch.sqrt((f * f).sum(dim=1, keepdim=True) + 1e-8)
            feats.append(f)
            if s + 1 < self.num_scales:
                x = F.avg_pool2d(x, 2)
        return feats

    def __call__(self, a: torch.Tensor, b: torch.Tensor, per_image: bool = False) -> torch.Tensor:
        """Distance; accepts (H, W, 3) or (B, H, W, 3) tensors.

        Returns a scalar (mean over the batch), or a (B,) vector of
        per-image distances when per_image is set.
        """
        if a.shape != b.shape:
            raise UsageError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
        if a.ndim == 3:
            a, b = a[None], b[None]
        if a.ndim != 4 or a.shape[-1] != 3:
            raise UsageError(f"expected (B, H, W, 3) images, got {tuple(a.shape)}")
        if min(a.shape[1], a.shape[2]) < 2 ** (self.num_scales - 1):
            raise UsageError("images too small for the configured scale count")
        xa = a.permute(0, 3, 1, 2)
        xb = b.permute(0, 3, 1, 2)
        loss = self.pixel_weight * ((xa - xb) ** 2).flatten(1).mean(dim=1)
        for fa, fb in zip(self._features(xa), self._features(xb)):
            loss = loss + ((fa - fb) ** 2).flatten(1).mean(dim=1)
        return loss if per_image else loss.mean()
