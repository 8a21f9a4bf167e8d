"""Color palettes that turn integer part labels into RGB regression targets.

A label map is "projected" into RGB space by looking every class up in a
palette, and decoded back by nearest-color search. Interpolating the RGB
map with the original photo gives the intermediate supervision targets used
during fine-tuning.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .errors import ConfigurationError, ValidationError

# Minimum pairwise L2 distance between palette colors. Nearest-color
# decoding stays exact as long as regression error < half this value.
MIN_COLOR_DISTANCE = 0.25

_N_CANDIDATES = 2048


@dataclass(frozen=True)
class Palette:
    """K RGB colors in [0,1]^3, class 0 fixed to black."""

    colors: np.ndarray  # (K, 3) float64

    @property
    def num_classes(self) -> int:
        return self.colors.shape[0]

    def min_pairwise_distance(self) -> float:
        d = self.colors[:, None, :] - self.colors[None, :, :]
        dist = np.sqrt((d ** 2).sum(-1))
        np.fill_diagonal(dist, np.inf)
        return float(dist.min())

    def to_list(self):
        """Plain nested lists, for run manifests."""
        return [[float(c) for c in row] for row in self.colors]


def make_palette(num_classes: int) -> Palette:
    """Deterministic, well-separated palette for `num_classes` classes.

    Colors are picked greedily (farthest-point) from a fixed Halton
    traversal of the RGB cube plus the cube corners, starting from black.
    Raises ConfigurationError if the separation invariant of
    MIN_COLOR_DISTANCE cannot be met (happens only for large K).
    """
    if not 2 <= num_classes <= 256:
        raise ConfigurationError(
            f"num_classes must be in [2, 256], got {num_classes}"
        )
    corners = np.array(
        [[i, j, k] for i in (0.0, 1.0) for j in (0.0, 1.0) for k in (0.0, 1.0)]
    )
    halton = qmc.Halton(d=3, scramble=False).random(_N_CANDIDATES)
    candidates = np.concatenate([corners[1:], halton], axis=0)

    chosen = np.zeros((num_classes, 3))  # class 0 = black
    # squared distance from every candidate to the nearest chosen color
    best = ((candidates - chosen[0]) ** 2).sum(-1)
    for k in range(1, num_classes):
        idx = int(np.argmax(best))
        chosen[k] = candidates[idx]
        best = np.minimum(best, ((candidates - chosen[k]) ** 2).sum(-1))

    palette = Palette(colors=chosen)
    sep = palette.min_pairwise_distance()
    if sep < MIN_COLOR_DISTANCE:
        raise ConfigurationError(
            f"cannot build {num_classes} colors with pairwise distance >= "
            f"{MIN_COLOR_DISTANCE} (achieved {sep:.3f}); reduce the class count"
        )
    return palette


def project_labels(label: np.ndarray, palette: Palette) -> np.ndarray:
    """Render an integer label map as an H x W x 3 RGB image."""
    label = np.asarray(label)
    bad = (label < 0) | (label >= palette.num_classes)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValidationError(
            f"label value {label[i, j]} at ({i}, {j}) is outside "
            f"[0, {palette.num_classes - 1}]"
        )
    return palette.colors[label]


def unproject(rgb_map: np.ndarray, palette: Palette) -> np.ndarray:
    """Decode an RGB map back to class indices by nearest palette color.

    Total function; ties go to the lowest class index.
    """
    rgb_map = np.asarray(rgb_map, dtype=np.float64)
    # (H, W, K) squared distances; argmin returns the first (lowest) index
    d2 = ((rgb_map[..., None, :] - palette.colors) ** 2).sum(-1)
    return np.argmin(d2, axis=-1).astype(np.int64)


def interpolate(image: np.ndarray, rgb_map: np.ndarray, lam: float) -> np.ndarray:
    """Convex combination lam * image + (1 - lam) * rgb_map."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigurationError(f"interpolation weight must be in [0, 1], got {lam}")
    image = np.asarray(image, dtype=np.float64)
    rgb_map = np.asarray(rgb_map, dtype=np.float64)
    if image.shape != rgb_map.shape:
        raise ValidationError(
            f"shape mismatch: image {image.shape} vs rgb map {rgb_map.shape}"
        )
    return lam * image + (1.0 - lam) * rgb_map
