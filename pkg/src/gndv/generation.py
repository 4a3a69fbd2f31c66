"""Sampling new data from a trained model and rendering latent grid maps."""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import SUPERVISED, ModeError, ModelParams, decode
from .numeric import RandomSource

PRIOR = "prior"
AGGREGATE_POSTERIOR = "posterior"
CONDITIONAL = "class"


@dataclass(frozen=True)
class GenStrategy:
    kind: str
    class_id: int | None = None

    @classmethod
    def parse(cls, text: str) -> "GenStrategy":
        """``prior``, ``posterior`` or ``class:<id>``."""
        if text in (PRIOR, AGGREGATE_POSTERIOR):
            return cls(text)
        m = re.fullmatch(r"class:(\d+)", text)
        if m:
            return cls(CONDITIONAL, int(m.group(1)))
        raise ValueError(f"unknown strategy {text!r}; use prior, posterior or class:<id>")

    def __str__(self):
        return f"class:{self.class_id}" if self.kind == CONDITIONAL else self.kind


def _column_gaussian(params, column):
    mu = params.mu_table[:, column] + params.mu_bias
    logvar = params.logvar_table[:, column] + params.logvar_bias
    return mu, np.exp(logvar / 2.0)


def sample_latent(params: ModelParams, strategy: GenStrategy, rng: RandomSource) -> np.ndarray:
    k = params.latent_dim
    if strategy.kind == PRIOR:
        return rng.normal(k)
    if strategy.kind == AGGREGATE_POSTERIOR:
        mu, std = _column_gaussian(params, rng.integer_below(params.n_inputs))
        return mu + std * rng.normal(k)
    if strategy.kind == CONDITIONAL:
        if params.mode != SUPERVISED:
            raise ModeError("class-conditional sampling needs a supervised model")
        if strategy.class_id is None or not 0 <= strategy.class_id < params.n_inputs:
            raise ValueError(f"class id {strategy.class_id} out of range [0, {params.n_inputs})")
        mu, std = _column_gaussian(params, strategy.class_id)
        return mu + std * rng.normal(k)
    raise ValueError(f"unknown strategy kind {strategy.kind!r}")


def generate(params: ModelParams, strategy: GenStrategy, count: int, rng: RandomSource) -> np.ndarray:
    """``count`` decoded samples as a (count, d) matrix, unclamped."""
    if count < 1:
        raise ValueError("count must be >= 1")
    Z = np.stack([sample_latent(params, strategy, rng) for _ in range(count)], axis=1)
    return np.ascontiguousarray(decode(params, Z).T)


def to_bytes(values) -> np.ndarray:
    """Clamp to [0, 1] and quantise to 0..255 (round half to even)."""
    return np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


@dataclass
class TiledImage:
    tile_rows: int
    tile_cols: int
    tile_h: int
    tile_w: int
    pixels: np.ndarray

    def __post_init__(self):
        shape = (self.tile_rows * self.tile_h, self.tile_cols * self.tile_w)
        if self.pixels.shape != shape:
            raise ValueError(f"pixel array {self.pixels.shape} does not match tiling {shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def tile(self, row: int, col: int) -> np.ndarray:
        return self.pixels[row * self.tile_h:(row + 1) * self.tile_h,
                           col * self.tile_w:(col + 1) * self.tile_w]


def grid_lattice(embedding, grid_res: int) -> np.ndarray:
    """(grid_res, grid_res, 2) lattice over the bounding box; row 0 is the top."""
    embedding = np.asarray(embedding, dtype=np.float64)
    lo, hi = embedding.min(axis=0), embedding.max(axis=0)
    xs = np.linspace(lo[0], hi[0], grid_res)
    ys = np.linspace(hi[1], lo[1], grid_res)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def grid_map(params: ModelParams, embedding, grid_res: int = 30, image_h: int = 28,
             image_w: int = 28) -> TiledImage:
    """Decode a uniform lattice over a 2-D embedding and tile the images."""
    embedding = np.asarray(embedding, dtype=np.float64)
    if params.latent_dim != 2 or embedding.ndim != 2 or embedding.shape[1] != 2:
        raise ModeError("grid maps need a 2-D latent space")
    if grid_res < 2:
        raise ValueError("grid_res must be >= 2")
    if image_h * image_w != params.output_dim:
        raise ValueError(f"{image_h}x{image_w} tiles do not match output dimension {params.output_dim}")
    lattice = grid_lattice(embedding, grid_res)
    decoded = decode(params, lattice.reshape(-1, 2).T).T
    tiles = to_bytes(decoded).reshape(grid_res, grid_res, image_h, image_w)
    pixels = tiles.transpose(0, 2, 1, 3).reshape(grid_res * image_h, grid_res * image_w)
    return TiledImage(grid_res, grid_res, image_h, image_w, np.ascontiguousarray(pixels))


def write_pgm(image, path) -> None:
    """Binary PGM (P5), maxval 255. Accepts a TiledImage or a 2-D uint8 array."""
    pixels = image.pixels if isinstance(image, TiledImage) else np.asarray(image, dtype=np.uint8)
    h, w = pixels.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write PGM to {path}: {exc}") from exc


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos)
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5" or tokens[3] != b"255":
        raise ValueError(f"{path}: only 8-bit binary PGM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    if len(raw) - pos != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, found {len(raw) - pos}")
    return np.frombuffer(raw, dtype=np.uint8, offset=pos).reshape(h, w).copy()
