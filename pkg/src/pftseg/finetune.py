"""Progressive fine-tuning of the two-stream decoder.

Three ordered stages turn the image generator into a segmentation
generator:

  step1  toRGB heads only, segmentation targets are interpolated images
  step2  all parameters (both branches and the shared blocks), same targets
  step3  toRGB heads only, targets are the pure RGB segmentation maps

In every stage the image branch is simultaneously fitted to the labeled
photos and a minibatch of unlabeled support images, which anchors the
shared blocks spatially. Updates are plain fixed-step gradient descent;
parameters outside a stage's selector are left bit-identical.

Also hosts the ablation baselines: vanilla fine-tuning (all segmentation
parameters on RGB maps from iteration one, same total step budget) and the
single-stream variant (image branch and support term disabled).
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigurationError, TrainingError, UsageError
from .generator import TwoStreamDecoder
from .palette import Palette, interpolate, project_labels
from .ploss import PerceptualLoss


@dataclass
class Stage:
    name: str
    streams: tuple
    groups: tuple
    supervision: str  # "interpolated" or "rgb_map"
    iterations: int = 200
    step_size: float = 2e-3
    lam: float = 0.1

    def __post_init__(self):
        if self.supervision not in ("interpolated", "rgb_map"):
            raise ConfigurationError(f"unknown supervision kind {self.supervision!r}")
        if not self.streams or not self.groups:
            raise ConfigurationError(f"stage {self.name}: selector must be nonempty")
        if self.iterations < 1:
            raise ConfigurationError(f"stage {self.name}: iterations must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"stage {self.name}: lam must be in [0, 1]")


def default_schedule(iterations: int = 200, step_size: float = 2e-3,
                     lam: float = 0.1) -> list:
    """The three-stage progressive schedule."""
    return [
        Stage("step1", ("seg", "img"), ("toRGB",), "interpolated",
              iterations, step_size, lam),
        Stage("step2", ("seg", "img", "shared"), ("conv", "toRGB"), "interpolated",
              iterations, step_size, lam),
        Stage("step3", ("seg", "img"), ("toRGB",), "rgb_map",
              iterations, step_size, lam),
    ]


@dataclass
class LabeledExample:
    image: np.ndarray  # (H, W, 3)
    label: np.ndarray  # (H, W)
    latent: torch.Tensor  # (N, C), frozen during fine-tuning


@dataclass
class SupportSet:
    """Unlabeled images with precomputed latents, sorted by sample id."""

    images: torch.Tensor  # (B, H, W, 3)
    latents: torch.Tensor  # (B, N, C)

    @classmethod
    def from_arrays(cls, images, latents, sample_ids=None):
        if len(images) != len(latents):
            raise UsageError("support images and latents must align")
        order = range(len(images))
        if sample_ids is not None:
            order = np.argsort(np.asarray(sample_ids, dtype=object)).tolist()
        imgs = torch.stack([torch.as_tensor(np.asarray(images[i])) for i in order])
        lats = torch.stack([torch.as_tensor(latents[i]) for i in order])
        return cls(images=imgs, latents=lats)

    def __len__(self):
        return len(self.images)


@dataclass
class FinetuneData:
    labeled: list  # [LabeledExample]
    support: SupportSet
    palette: Palette


def _stage_targets(stage, data, dtype):
    targets = []
    for ex in data.labeled:
        rgb_map = project_labels(ex.label, data.palette)
        if stage.supervision == "interpolated":
            targets.append(interpolate(ex.image, rgb_map, stage.lam))
        else:
            targets.append(rgb_map)
    return torch.stack([torch.as_tensor(t) for t in targets]).to(dtype)


def run_stage(decoder: TwoStreamDecoder, stage: Stage, data: FinetuneData,
              seed: int = 0, loss_fn: PerceptualLoss = None,
              single_stream: bool = False, support_batch: int = 4,
              support_weight: float = 1.0):
    """Run one fine-tuning stage in place; returns the loss trace.

    Per iteration: one gradient-descent step on the stage-selected
    parameters of the summed objective (segmentation branch vs. its
    targets, image branch vs. the labeled photos and a support minibatch).
    """
    if not data.labeled:
        raise UsageError("fine-tuning needs at least one labeled example")
    loss_fn = loss_fn or PerceptualLoss(seed=0)
    dtype = decoder.config.torch_dtype

    streams = tuple(s for s in stage.streams if not (single_stream and s == "img"))
    if not streams:
        raise UsageError(f"stage {stage.name}: nothing left to train")
    selected = decoder.select_parameters(streams, stage.groups)

    x_lab = torch.stack(
        [torch.as_tensor(ex.image) for ex in data.labeled]
    ).to(dtype)
    w_lab = torch.stack([ex.latent for ex in data.labeled]).to(dtype)
    targets = _stage_targets(stage, data, dtype)

    use_support = not single_stream and len(data.support) > 0
    if not single_stream and len(data.support) == 0:
        raise UsageError("support set must be nonempty when the image stream is on")
    rng = np.random.Generator(np.random.Philox(key=seed))

    for _, p in decoder.named_parameters():
        p.requires_grad_(False)
    for _, p in selected:
        p.requires_grad_(True)

    trace = []
    try:
        for it in range(stage.iterations):
            decoder.zero_grad(set_to_none=True)
            seg_out, _ = decoder.synthesize(w_lab, "seg")
            seg_loss = loss_fn(seg_out, targets, per_image=True).sum()
            img_loss = sup_loss = torch.zeros((), dtype=seg_loss.dtype)
            if not single_stream:
                img_out, _ = decoder.synthesize(w_lab, "img")
                img_loss = loss_fn(img_out, x_lab, per_image=True).sum()
            if use_support:
                idx = rng.integers(
                    0, len(data.support), size=min(support_batch, len(data.support))
                ).tolist()
                sup_out, _ = decoder.synthesize(data.support.latents[idx].to(dtype), "img")
                sup_loss = support_weight * loss_fn(
                    sup_out, data.support.images[idx].to(dtype)
                )
            total = seg_loss + img_loss + sup_loss
            if not torch.isfinite(total):
                raise TrainingError(
                    f"non-finite loss in stage {stage.name} at iteration {it}"
                )
            total.backward()
            with torch.no_grad():
                for _, p in selected:
                    if p.grad is not None:
                        p -= stage.step_size * p.grad
            trace.append(
                {
                    "iteration": it,
                    "seg_loss": float(seg_loss.detach()),
                    "img_loss": float(img_loss.detach()),
                    "support_loss": float(sup_loss.detach()),
                }
            )
    finally:
        for _, p in decoder.named_parameters():
            p.requires_grad_(True)
        decoder.zero_grad(set_to_none=True)
    return trace


def run_schedule(decoder: TwoStreamDecoder, schedule: list, data: FinetuneData,
                 seed: int = 0, loss_fn: PerceptualLoss = None,
                 single_stream: bool = False, checkpoint_dir=None,
                 support_batch: int = 4, support_weight: float = 1.0):
    """Apply the stages in order (in place); returns {stage name: trace}."""
    from .checkpoint import save_decoder  # local import to avoid a cycle

    traces = {}
    for i, stage in enumerate(schedule):
        traces[stage.name] = run_stage(
            decoder, stage, data, seed=seed + i, loss_fn=loss_fn,
            single_stream=single_stream, support_batch=support_batch,
            support_weight=support_weight,
        )
        if checkpoint_dir is not None:
            save_decoder(f"{checkpoint_dir}/stage{i + 1}.npz", decoder)
    return traces


def vanilla_finetune(decoder: TwoStreamDecoder, data: FinetuneData,
                     iterations: int = 600, step_size: float = 2e-3,
                     seed: int = 0, loss_fn: PerceptualLoss = None,
                     include_image_stream: bool = False):
    """Baseline: all segmentation parameters on RGB maps from iteration one.

    Consumes the same total step budget as the full schedule (pass
    iterations = 3 * T). By default the image branch is untouched.
    """
    stage = Stage(
        "vanilla",
        ("seg", "shared") + (("img",) if include_image_stream else ()),
        ("conv", "toRGB"), "rgb_map", iterations, step_size,
    )
    return run_stage(
        decoder, stage, data, seed=seed, loss_fn=loss_fn,
        single_stream=not include_image_stream,
    )
