"""Pixel-level simulator that mixes point lights into hue/value histograms.

Each light is an isotropic Gaussian point source on an ``height x width``
pixel grid. Per pixel the light values are summed into a raw intensity
(optionally soft-clipped), and hues are combined as an intensity-weighted
circular mean. The resulting per-pixel hue and value maps are binned into
360-bin hue and 100-bin value histograms.

Pixel coordinates are 1-based: ``u = 1..width`` runs along x and
``v = 1..height`` along y (y grows downward, so increasing angle on the
circle layout goes clockwise on screen).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .distributions import HUE, TWO_PI, VALUE, Histogram, ScalarHV


@dataclass(frozen=True)
class MixerConfig:
    width: int = 64
    height: int = 64
    n_lights: int = 8
    sigma_rel: float = 0.15
    clip_factor: Optional[float] = 1.0
    epsilon: float = 1e-6
    zero_lowest_value_bin: bool = True
    hue_bins: int = 360
    value_bins: int = 100
    radius_rel: float = 0.35

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("image must be at least 8x8 pixels")
        if self.n_lights < 1:
            raise ValueError("need at least one light")
        if not self.sigma_rel > 0:
            raise ValueError("sigma_rel must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.clip_factor is not None and not self.clip_factor > 0:
            raise ValueError("clip_factor must be positive or None")
        if (self.hue_bins, self.value_bins) != (360, 100):
            raise ValueError("histograms are fixed at 360 hue and 100 value bins")

    @property
    def sigma_pix(self) -> float:
        return self.sigma_rel * math.sqrt(self.width**2 + self.height**2)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "MixerConfig":
        return cls(**data)


@dataclass(frozen=True)
class LightLayout:
    """Light positions in pixel coordinates, in control (clockwise) order."""

    positions: tuple[tuple[float, float], ...]

    def __len__(self):
        return len(self.positions)


def circle_layout(config: MixerConfig, radius_rel: Optional[float] = None) -> LightLayout:
    """Place ``n_lights`` evenly on a centered circle, clockwise from east.

    The radius is ``radius_rel * min(width, height)``.
    """
    if radius_rel is None:
        radius_rel = config.radius_rel
    if not 0 < radius_rel < 0.5:
        raise ValueError("radius_rel must lie in (0, 0.5)")
    cx, cy = config.width / 2, config.height / 2
    r = radius_rel * min(config.width, config.height)
    positions = []
    for i in range(config.n_lights):
        theta = TWO_PI * i / config.n_lights
        x, y = cx + r * math.cos(theta), cy + r * math.sin(theta)
        if not (1 <= x <= config.width and 1 <= y <= config.height):
            raise ValueError(f"light {i} at ({x:.2f}, {y:.2f}) falls outside the image")
        positions.append((x, y))
    return LightLayout(tuple(positions))


def pixel_weight(config: MixerConfig, layout: LightLayout, light_index: int, u: float, v: float) -> float:
    x, y = layout.positions[light_index]
    d2 = (u - x) ** 2 + (v - y) ** 2
    sigma = config.sigma_pix
    return math.exp(-d2 / (2 * sigma * sigma))


@lru_cache(maxsize=32)
def _weights(config: MixerConfig, layout: LightLayout) -> np.ndarray:
    """Gaussian weights of shape (n_lights, height * width), row-major pixels."""
    vv, uu = np.meshgrid(
        np.arange(1, config.height + 1, dtype=np.float64),
        np.arange(1, config.width + 1, dtype=np.float64),
        indexing="ij",
    )
    sigma = config.sigma_pix
    out = np.empty((len(layout), config.height * config.width))
    for i, (x, y) in enumerate(layout.positions):
        d2 = (uu - x) ** 2 + (vv - y) ** 2
        out[i] = np.exp(-d2 / (2 * sigma * sigma)).ravel()
    out.setflags(write=False)
    return out


class MixResult(NamedTuple):
    hue: Histogram
    value: Histogram
    degenerate: bool


class PixelMaps(NamedTuple):
    hue: np.ndarray  # radians, (..., height*width)
    value: np.ndarray
    raw: np.ndarray


class Mixer:
    """Bundles a config with a light layout and cached per-pixel weights."""

    def __init__(self, config: MixerConfig = MixerConfig(), layout: Optional[LightLayout] = None):
        self.config = config
        self.layout = layout if layout is not None else circle_layout(config)
        if len(self.layout) != config.n_lights:
            raise ValueError("layout size does not match n_lights")
        self.weights = _weights(config, self.layout)

    @property
    def n_lights(self) -> int:
        return self.config.n_lights

    def pixel_maps(self, hues: np.ndarray, values: np.ndarray) -> PixelMaps:
        """Per-pixel mixed hue/value for a batch of frames.

        ``hues`` and ``values`` have shape (batch, n_lights). Lights are
        accumulated in index order so results are reproducible bit-for-bit.
        """
        cfg = self.config
        hues = np.asarray(hues, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        w = self.weights
        contrib = [values[:, i, None] * w[i] for i in range(self.n_lights)]
        raw = np.zeros((hues.shape[0], w.shape[1]))
        for c in contrib:
            raw += c
        if cfg.clip_factor is not None:
            value = 1.0 - np.exp(-cfg.clip_factor * raw)
        else:
            value = np.minimum(raw, 1.0)
        denom = raw + cfg.epsilon
        s = np.zeros_like(raw)
        c_ = np.zeros_like(raw)
        for i, c in enumerate(contrib):
            wt = c / denom
            s += wt * np.sin(hues[:, i, None])
            c_ += wt * np.cos(hues[:, i, None])
        hue = np.mod(np.arctan2(s, c_), TWO_PI)
        hue[raw < cfg.epsilon] = 0.0
        return PixelMaps(hue, value, raw)

    def histogram_counts(self, maps: PixelMaps) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        batch = maps.hue.shape[0]
        hue_idx = np.floor(maps.hue / (TWO_PI / cfg.hue_bins)).astype(np.int64) % cfg.hue_bins
        val_idx = np.minimum(np.floor(cfg.value_bins * maps.value).astype(np.int64), cfg.value_bins - 1)
        offs = np.arange(batch)[:, None]
        hue_counts = np.bincount((hue_idx + offs * cfg.hue_bins).ravel(), minlength=batch * cfg.hue_bins)
        val_counts = np.bincount((val_idx + offs * cfg.value_bins).ravel(), minlength=batch * cfg.value_bins)
        return (
            hue_counts.reshape(batch, cfg.hue_bins).astype(np.float64),
            val_counts.reshape(batch, cfg.value_bins).astype(np.float64),
        )

    def mix_batch(self, hues, values) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Mix a batch of frames into (hue_hists, value_hists, degenerate_flags).

        A frame whose value histogram is empty after zeroing the lowest bin
        gets a uniform value histogram and ``degenerate = True``.
        """
        cfg = self.config
        hue_counts, val_counts = self.histogram_counts(self.pixel_maps(hues, values))
        hue_hist = hue_counts / (cfg.width * cfg.height)
        if cfg.zero_lowest_value_bin:
            val_counts[:, 0] = 0.0
        totals = val_counts.sum(axis=1)
        degenerate = totals == 0
        val_counts[degenerate] = 1.0
        totals[degenerate] = cfg.value_bins
        val_hist = val_counts / totals[:, None]
        return hue_hist, val_hist, degenerate

    def mix(self, frame: Sequence[ScalarHV]) -> MixResult:
        if len(frame) != self.n_lights:
            raise ValueError(f"frame has {len(frame)} actions, expected {self.n_lights}")
        hues = np.array([[a.hue for a in frame]])
        values = np.array([[a.value for a in frame]])
        h, v, deg = self.mix_batch(hues, values)
        return MixResult(Histogram(HUE, h[0]), Histogram(VALUE, v[0]), bool(deg[0]))

    def render(self, frame: Sequence[ScalarHV]) -> np.ndarray:
        """HSV image of shape (height, width, 3): hue in radians, saturation 1, value."""
        cfg = self.config
        hues = np.array([[a.hue for a in frame]])
        values = np.array([[a.value for a in frame]])
        maps = self.pixel_maps(hues, values)
        img = np.empty((cfg.height, cfg.width, 3))
        img[..., 0] = maps.hue[0].reshape(cfg.height, cfg.width)
        img[..., 1] = 1.0
        img[..., 2] = maps.value[0].reshape(cfg.height, cfg.width)
        return img


def mix(config: MixerConfig, layout: LightLayout, frame: Sequence[ScalarHV]) -> MixResult:
    return Mixer(config, layout).mix(frame)


def render_frame(config: MixerConfig, layout: LightLayout, frame: Sequence[ScalarHV]) -> np.ndarray:
    return Mixer(config, layout).render(frame)


def hsv_to_rgb(img: np.ndarray) -> np.ndarray:
    """Convert an HSV buffer with hue in radians to RGB floats in [0, 1]."""
    h = img[..., 0] / TWO_PI * 6.0
    s, v = img[..., 1], img[..., 2]
    i = np.floor(h).astype(np.int64) % 6
    f = h - np.floor(h)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    rgb = np.zeros(img.shape)
    for k, (r, g, b) in enumerate(choices):
        sel = i == k
        rgb[..., 0][sel] = r[sel]
        rgb[..., 1][sel] = g[sel]
        rgb[..., 2][sel] = b[sel]
    return rgb


def write_ppm(path, img: np.ndarray) -> None:
    """Write an HSV buffer (as returned by :meth:`Mixer.render`) as binary PPM."""
    rgb = np.clip(np.rint(hsv_to_rgb(img) * 255), 0, 255).astype(np.uint8)
    height, width = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM file")
    width, height = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width, 3)


def dump_hsv(path, img: np.ndarray) -> None:
    """Loss-free JSON dump of per-pixel hue (radians) and value, row-major."""
    height, width = img.shape[:2]
    payload = {
        "width": width,
        "height": height,
        "hue": img[..., 0].ravel().tolist(),
        "value": img[..., 2].ravel().tolist(),
    }
    Path(path).write_text(json.dumps(payload))
