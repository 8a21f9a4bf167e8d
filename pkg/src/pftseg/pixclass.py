"""Pixel-wise classification over segmentation-stream activations.

Every block of the (fine-tuned) segmentation stream contributes its
activation map; maps are bilinearly upsampled to the output resolution and
concatenated channel-wise, giving each pixel a feature vector of dimension
C = sum of the block channel counts. A small MLP trained with SGD and
cross-entropy maps these features to part labels.
"""

import warnings
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import UsageError
from .generator import TwoStreamDecoder


def extract_pixel_features(decoder, w, stream: str = "seg", layers=None) -> np.ndarray:
    """Per-pixel feature map (H, W, C) for one latent code.

    `layers` optionally selects a subset of block indices; default is all
    blocks including the shared ones.
    """
    with torch.no_grad():
        if isinstance(decoder, TwoStreamDecoder):
            _, feats = decoder.synthesize(w, stream, capture_features=True)
        else:
            _, feats = decoder.synthesize(w, capture_features=True)
    if layers is not None:
        feats = [feats[i] for i in layers]
    size = decoder.config.output_resolution
    up = [
        F.interpolate(f[None], size=(size, size), mode="bilinear",
                      align_corners=False)[0]
        for f in feats
    ]
    stacked = torch.cat(up, dim=0).permute(1, 2, 0)
    return stacked.double().numpy()


@dataclass
class ClassifierConfig:
    hidden: tuple = (128, 64)
    learning_rate: float = 0.5  # initial SGD step, decayed 10x at 1/2 and 3/4
    epochs: int = 200
    pixels_per_image: int = 4096  # 0 = use every pixel each epoch
    seed: int = 0
    ensemble_size: int = 1  # >1 trains seed-offset members, predictions averaged


class PixelClassifier(nn.Module):
    """MLP over per-pixel features; stores its own input normalization."""

    def __init__(self, in_dim, num_classes, config: ClassifierConfig):
        super().__init__()
        self.config = config
        self.num_classes = num_classes
        torch.manual_seed(config.seed)
        widths = [in_dim, *config.hidden, num_classes]
        layers = []
        for a, b in zip(widths[:-1], widths[1:]):
            layers.append(nn.Linear(a, b))
            if b != num_classes:
                layers.append(nn.ReLU())
        self.mlp = nn.Sequential(*layers)
        self.register_buffer("feat_mean", torch.zeros(in_dim))
        self.register_buffer("feat_std", torch.ones(in_dim))
        self.double()

    def forward(self, feats):
        return self.mlp((feats - self.feat_mean) / self.feat_std)


class ClassifierEnsemble(nn.Module):
    """Seed-offset PixelClassifiers whose softmax outputs are averaged."""

    def __init__(self, members):
        super().__init__()
        if not members:
            raise UsageError("ensemble needs at least one member")
        self.members = nn.ModuleList(members)
        self.num_classes = members[0].num_classes
        self.config = members[0].config

    @property
    def feat_mean(self):
        return self.members[0].feat_mean

    def forward(self, feats):
        probs = torch.stack(
            [F.softmax(m(feats), dim=-1) for m in self.members]
        )
        return probs.mean(dim=0)


def train_classifier(features, labels, num_classes, config: ClassifierConfig = None):
    """Fit a classifier on pooled pixels from the labeled images.

    features: list of (H, W, C) arrays; labels: list of (H, W) label maps.
    Deterministic under config.seed. With config.ensemble_size > 1,
    returns a ClassifierEnsemble of independently seeded members.
    """
    config = config or ClassifierConfig()
    if config.ensemble_size > 1:
        from dataclasses import replace

        members = [
            train_classifier(
                features, labels, num_classes,
                replace(config, seed=config.seed + 7919 * i, ensemble_size=1),
            )
            for i in range(config.ensemble_size)
        ]
        return ClassifierEnsemble(members)
    if not features or len(features) != len(labels):
        raise UsageError("need matching, nonempty feature and label lists")
    x = torch.cat(
        [torch.as_tensor(f, dtype=torch.float64).reshape(-1, f.shape[-1])
         for f in features]
    )
    y = torch.cat(
        [torch.as_tensor(np.asarray(l, dtype=np.int64).copy()).reshape(-1)
         for l in labels]
    )
    present = set(torch.unique(y).tolist())
    for cls in range(num_classes):
        if cls not in present:
            warnings.warn(
                f"class {cls} has no training pixels; its IoU will be 0",
                stacklevel=2,
            )

    clf = PixelClassifier(x.shape[1], num_classes, config)
    with torch.no_grad():
        clf.feat_mean.copy_(x.mean(dim=0))
        clf.feat_std.copy_(x.std(dim=0).clamp_min(1e-6))

    opt = torch.optim.SGD(clf.parameters(), lr=config.learning_rate)
    sched = torch.optim.lr_scheduler.MultiStepLR(
        opt, milestones=[config.epochs // 2, (3 * config.epochs) // 4], gamma=0.1
    )
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    n_img = len(features)
    per_img = x.shape[0] // n_img
    for _ in range(config.epochs):
        if config.pixels_per_image and config.pixels_per_image < per_img:
            idx = np.concatenate(
                [i * per_img + rng.choice(per_img, config.pixels_per_image,
                                          replace=False)
                 for i in range(n_img)]
            )
            bx, by = x[idx], y[idx]
        else:
            bx, by = x, y
        opt.zero_grad()
        loss = F.cross_entropy(clf(bx), by)
        loss.backward()
        opt.step()
        sched.step()
    return clf


def save_classifier(path, classifier, feature_layers=None):
    """Store widths, weights, seed and feature-layer selection as .npz.

    Accepts a PixelClassifier or a ClassifierEnsemble.
    """
    import json

    members = (classifier.members if isinstance(classifier, ClassifierEnsemble)
               else [classifier])
    arrays = {}
    for i, member in enumerate(members):
        for name, p in member.state_dict().items():
            arrays[f"m{i}.{name}"] = p.detach().numpy()
    meta = {
        "in_dim": int(classifier.feat_mean.shape[0]),
        "num_classes": classifier.num_classes,
        "configs": [asdict(m.config) for m in members],
        "feature_layers": feature_layers,
    }
    arrays["__meta__"] = np.array(json.dumps(meta))
    np.savez(path, **arrays)


def load_classifier(path):
    """Inverse of save_classifier; returns (classifier, feature_layers)."""
    import json

    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    try:
        meta = json.loads(str(arrays.pop("__meta__")))
        members = []
        for i, cfg_dict in enumerate(meta["configs"]):
            cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
            config = ClassifierConfig(**cfg_dict)
            member = PixelClassifier(meta["in_dim"], meta["num_classes"], config)
            prefix = f"m{i}."
            member.load_state_dict({
                k[len(prefix):]: torch.as_tensor(v)
                for k, v in arrays.items() if k.startswith(prefix)
            })
            members.append(member)
        clf = members[0] if len(members) == 1 else ClassifierEnsemble(members)
    except (KeyError, TypeError, RuntimeError, json.JSONDecodeError) as e:
        raise UsageError(f"malformed classifier checkpoint {path}: {e}")
    return clf, meta["feature_layers"]


def predict(classifier, features) -> np.ndarray:
    """Per-pixel argmax labels (ties resolve to the lowest class index).

    For a ClassifierEnsemble the argmax is over the averaged class
    probabilities of the members.
    """
    f = torch.as_tensor(features, dtype=torch.float64)
    if f.shape[-1] != classifier.feat_mean.shape[0]:
        raise UsageError(
            f"feature dimension {f.shape[-1]} does not match classifier "
            f"input {classifier.feat_mean.shape[0]}"
        )
    with torch.no_grad():
        logits = classifier(f.reshape(-1, f.shape[-1])).numpy()
    # np.argmax returns the first (lowest-index) maximum on ties
    pred = np.argmax(logits, axis=1)
    return pred.reshape(tuple(f.shape[:-1]))
