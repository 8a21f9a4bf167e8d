"""Seeded synthetic part-segmentation dataset ("faces" family).

Each sample is a cartoon face composed of an elliptical head with eyes,
mouth and nose over a textured background, rendered together with its
exact part mask. Geometry and colors are jittered per sample so that a
classifier cannot simply memorize coordinates or colors.

Every sample is a pure function of (seed, sample_id) through a Philox
counter-based generator, so datasets are bit-identical across runs and
platforms and samples can be produced in any order.
"""

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, ValidationError

FACE_PART_NAMES = (
    "background", "head", "eye_left", "eye_right", "mouth", "nose",
    "cheek_left", "cheek_right",
)


@dataclass
class ImageSample:
    image: np.ndarray  # (H, W, 3) float64 in [0,1], quantized to 255ths
    label: np.ndarray  # (H, W) uint8 class indices, 0 = background
    sample_id: str


@dataclass
class DatasetConfig:
    resolution: int = 32
    num_classes: int = 6
    n_train_labeled: int = 5
    n_support: int = 16
    n_test: int = 32
    seed: int = 0
    shape_family: str = "faces"
    position_jitter: float = 0.15  # fraction of resolution
    scale_jitter: float = 0.20
    hue_jitter: float = 0.08

    def validate(self):
        if self.resolution < 16 or self.resolution & (self.resolution - 1):
            raise ConfigurationError(
                f"resolution must be a power of two >= 16, got {self.resolution}"
            )
        if self.shape_family != "faces":
            raise ConfigurationError(f"unknown shape family {self.shape_family!r}")
        if not 2 <= self.num_classes <= len(FACE_PART_NAMES):
            raise ConfigurationError(
                f"faces family supports 2..{len(FACE_PART_NAMES)} classes, "
                f"got {self.num_classes}"
            )
        for name in ("n_train_labeled", "n_support", "n_test"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")


def _sample_rng(seed: int, sample_id: str) -> np.random.Generator:
    """Philox generator keyed by (seed, sample_id); order-independent."""
    digest = hashlib.sha256(sample_id.encode()).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.Generator(np.random.Philox(key=(seed << 64) | key))


def _hsv_to_rgb(h, s, v):
    h = h % 1.0
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return [
        (v, t, p), (q, v, p), (p, v, q), (p, q, v), (t, p, v), (v, p, q),
    ][i]


def _fill_ellipse(label, mask_cls, cx, cy, rx, ry, yy, xx):
    inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    label[inside] = mask_cls
    return inside


def generate_sample(config: DatasetConfig, sample_id: str) -> ImageSample:
    """Render one face sample. Deterministic in (config.seed, sample_id)."""
    res = config.resolution
    rng = _sample_rng(config.seed, sample_id)
    yy, xx = np.meshgrid(
        (np.arange(res) + 0.5) / res, (np.arange(res) + 0.5) / res, indexing="ij"
    )
    label = np.zeros((res, res), dtype=np.uint8)

    pj = config.position_jitter
    scale = 1.0 + rng.uniform(-config.scale_jitter, config.scale_jitter)
    cx = 0.5 + rng.uniform(-pj, pj) * 0.5
    cy = 0.5 + rng.uniform(-pj, pj) * 0.5
    hue = rng.uniform(-config.hue_jitter, config.hue_jitter)

    # part geometry, relative to the head center; clamped so everything
    # stays on canvas for any jitter in range
    head_rx, head_ry = 0.30 * scale, 0.36 * scale
    parts = {
        "head": (cx, cy, head_rx, head_ry),
        "eye_left": (cx - 0.13 * scale, cy - 0.11 * scale, 0.065 * scale, 0.055 * scale),
        "eye_right": (cx + 0.13 * scale, cy - 0.11 * scale, 0.065 * scale, 0.055 * scale),
        "mouth": (cx, cy + 0.19 * scale, 0.14 * scale, 0.055 * scale),
        "nose": (cx, cy + 0.04 * scale, 0.05 * scale, 0.075 * scale),
        "cheek_left": (cx - 0.19 * scale, cy + 0.07 * scale, 0.05 * scale, 0.04 * scale),
        "cheek_right": (cx + 0.19 * scale, cy + 0.07 * scale, 0.05 * scale, 0.04 * scale),
    }
    used = [FACE_PART_NAMES[cls] for cls in range(1, config.num_classes)]
    smallest = min((min(parts[n][2], parts[n][3]) for n in used), default=1.0) * res
    if smallest < 0.5:
        raise ConfigurationError(
            f"resolution {res} too small to place all parts "
            f"(smallest part radius {smallest:.2f} px < 0.5 px)"
        )

    for cls in range(1, config.num_classes):
        _fill_ellipse(label, cls, *parts[FACE_PART_NAMES[cls]], yy, xx)

    # base colors per class; ranges overlap deliberately so color alone
    # does not identify a part
    base_hues = {
        0: 0.60, 1: 0.08, 2: 0.55, 3: 0.55, 4: 0.98, 5: 0.07, 6: 0.95, 7: 0.95,
    }
    image = np.zeros((res, res, 3))
    for cls in range(config.num_classes):
        h = base_hues[cls] + hue + rng.uniform(-0.04, 0.04)
        s = rng.uniform(0.35, 0.7)
        v = rng.uniform(0.5, 0.9) if cls else rng.uniform(0.25, 0.55)
        image[label == cls] = _hsv_to_rgb(h, s, v)

    # lighting gradient plus pixel noise, shared across parts
    grad = 0.12 * (yy - 0.5) + 0.08 * (xx - 0.5)
    image += grad[..., None]
    image += rng.normal(0.0, 0.035, size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    # quantize to 255ths so PNG round trips are bit-exact
    image = np.round(image * 255.0) / 255.0
    return ImageSample(image=image, label=label, sample_id=sample_id)


def generate_dataset(config: DatasetConfig) -> dict:
    """Generate the labeled / support / test splits, all disjoint."""
    config.validate()
    splits = {}
    for split, count in (
        ("labeled", config.n_train_labeled),
        ("support", config.n_support),
        ("test", config.n_test),
    ):
        splits[split] = [
            generate_sample(config, f"{split}-{i:04d}") for i in range(count)
        ]
    return splits


# ---------------------------------------------------------------------------
# persistence: images/<id>.png, labels/<id>.png, manifest.json


def save_dataset(path, splits: dict, config: DatasetConfig):
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    (path / "labels").mkdir(parents=True, exist_ok=True)
    for samples in splits.values():
        for s in samples:
            img8 = np.round(s.image * 255.0).astype(np.uint8)
            Image.fromarray(img8, mode="RGB").save(path / "images" / f"{s.sample_id}.png")
            Image.fromarray(s.label, mode="L").save(path / "labels" / f"{s.sample_id}.png")
    manifest = {
        "resolution": config.resolution,
        "num_classes": config.num_classes,
        "seed": config.seed,
        "shape_family": config.shape_family,
        "config": asdict(config),
        "splits": {k: [s.sample_id for s in v] for k, v in splits.items()},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_dataset(path):
    """Load splits saved by save_dataset. Returns (splits, config)."""
    path = Path(path)
    manifest_file = path / "manifest.json"
    try:
        manifest = json.loads(manifest_file.read_text())
    except FileNotFoundError:
        raise ValidationError(f"missing manifest file {manifest_file}")
    except json.JSONDecodeError as e:
        raise ValidationError(f"malformed manifest {manifest_file}: {e}")
    try:
        config = DatasetConfig(**manifest["config"])
    except (KeyError, TypeError) as e:
        raise ValidationError(f"manifest {manifest_file} missing field: {e}")

    splits = {}
    for split, ids in manifest["splits"].items():
        samples = []
        for sid in ids:
            img_file = path / "images" / f"{sid}.png"
            lbl_file = path / "labels" / f"{sid}.png"
            try:
                with Image.open(img_file) as im:
                    image = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            except (OSError, SyntaxError) as e:
                raise ValidationError(f"cannot read image file {img_file}: {e}")
            try:
                with Image.open(lbl_file) as im:
                    label = np.asarray(im, dtype=np.uint8)
            except (OSError, SyntaxError) as e:
                raise ValidationError(f"cannot read label file {lbl_file}: {e}")
            if label.max() >= config.num_classes:
                raise ValidationError(
                    f"label file {lbl_file} contains class {label.max()} "
                    f">= num_classes {config.num_classes}"
                )
            if image.shape[:2] != label.shape:
                raise ValidationError(
                    f"image/label size mismatch for sample {sid}"
                )
            samples.append(ImageSample(image=image, label=label, sample_id=sid))
        splits[split] = samples
    return splits, config
