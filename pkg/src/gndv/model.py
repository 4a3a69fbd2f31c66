"""Model parameters, forward propagation and the checkpoint format.

Column convention: a batch of B samples is a ``(features, B)`` matrix, so a
dense layer is ``W @ h + b[:, None]`` with ``W`` of shape (out, in).

The input layer receives a one-hot vector (sample id, or class id in
supervised mode). Multiplying a weight table by ``e_i`` selects column
``i``, so the input-to-parametric layer is stored as two ``(k, m)`` tables
and evaluated by column lookup.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numeric import RandomSource, ShapeError, gaussian_sample

UNSUPERVISED = "unsupervised"
SUPERVISED = "supervised"
MODES = (UNSUPERVISED, SUPERVISED)

CHECKPOINT_MAGIC = b"GNDV"
CHECKPOINT_VERSION = 1
# variance 0.01 for the mean table
MU_INIT_STD = 0.1


class ModeError(ValueError):
    """Operation not available for this model mode."""


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 2
    hidden_widths: tuple[int, ...] = (64, 128)
    beta: float = 1e-3
    gamma1: float = 1e-5
    gamma2: float = 1e-5
    gamma3: float = 0.0
    gamma4: float = 0.0
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    mode: str = UNSUPERVISED
    seed: int = 0
    # stop once the relative change of the epoch loss over `patience` epochs drops below tol
    tol: float = 1e-4
    patience: int = 10

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ValueError("need at least one hidden layer of width >= 1")
        for name in ("beta", "gamma1", "gamma2", "gamma3", "gamma4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class ModelParams:
    """Every trainable array. Also used, shape for shape, to hold gradients."""

    mu_table: np.ndarray
    logvar_table: np.ndarray
    mu_bias: np.ndarray
    logvar_bias: np.ndarray
    hidden_weights: list[np.ndarray]
    hidden_biases: list[np.ndarray]
    rec_weights: np.ndarray
    rec_bias: np.ndarray
    mode: str = UNSUPERVISED

    def __post_init__(self):
        self.validate()

    @property
    def latent_dim(self) -> int:
        return self.mu_table.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.mu_table.shape[1]

    @property
    def output_dim(self) -> int:
        return self.rec_weights.shape[0]

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.hidden_weights)

    def arrays(self) -> list[np.ndarray]:
        """All arrays in checkpoint order (hidden layers interleaved W_j, b_j)."""
        out = [self.mu_table, self.logvar_table, self.mu_bias, self.logvar_bias]
        for w, b in zip(self.hidden_weights, self.hidden_biases):
            out += [w, b]
        return out + [self.rec_weights, self.rec_bias]

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        names = ["mu_table", "logvar_table", "mu_bias", "logvar_bias"]
        for j in range(len(self.hidden_weights)):
            names += [f"hidden_weights[{j}]", f"hidden_biases[{j}]"]
        names += ["rec_weights", "rec_bias"]
        return list(zip(names, self.arrays()))

    def validate(self):
        k, m = self.mu_table.shape
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        expected = [("logvar_table", self.logvar_table, (k, m)),
                    ("mu_bias", self.mu_bias, (k,)),
                    ("logvar_bias", self.logvar_bias, (k,))]
        if len(self.hidden_weights) != len(self.hidden_biases) or not self.hidden_weights:
            raise ShapeError("need matching, non-empty hidden weight and bias lists")
        fan_in = k
        for j, (w, b) in enumerate(zip(self.hidden_weights, self.hidden_biases)):
            if w.ndim != 2 or w.shape[1] != fan_in:
                raise ShapeError(f"hidden_weights[{j}] has shape {w.shape}, expected (*, {fan_in})")
            expected.append((f"hidden_biases[{j}]", b, (w.shape[0],)))
            fan_in = w.shape[0]
        if self.rec_weights.ndim != 2 or self.rec_weights.shape[1] != fan_in:
            raise ShapeError(f"rec_weights has shape {self.rec_weights.shape}, expected (*, {fan_in})")
        expected.append(("rec_bias", self.rec_bias, (self.rec_weights.shape[0],)))
        for name, arr, shape in expected:
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")

    def map(self, fn) -> "ModelParams":
        """New ModelParams with ``fn`` applied to every array."""
        return ModelParams(
            mu_table=fn(self.mu_table),
            logvar_table=fn(self.logvar_table),
            mu_bias=fn(self.mu_bias),
            logvar_bias=fn(self.logvar_bias),
            hidden_weights=[fn(w) for w in self.hidden_weights],
            hidden_biases=[fn(b) for b in self.hidden_biases],
            rec_weights=fn(self.rec_weights),
            rec_bias=fn(self.rec_bias),
            mode=self.mode,
        )

    def copy(self) -> "ModelParams":
        return self.map(np.copy)

    def zeros_like(self) -> "ModelParams":
        return self.map(np.zeros_like)


Gradients = ModelParams


@dataclass
class ForwardTrace:
    columns: np.ndarray
    mu: np.ndarray
    logvar: np.ndarray
    eps: np.ndarray
    z: np.ndarray
    hidden_pre: list[np.ndarray] = field(default_factory=list)
    hidden_post: list[np.ndarray] = field(default_factory=list)
    recon: np.ndarray | None = None

    @property
    def batch_size(self) -> int:
        return self.z.shape[1]


def init_params(config: ModelConfig, n_inputs: int, d: int, rng: RandomSource) -> ModelParams:
    """Random initial parameters.

    Draw order is fixed: mean table, then hidden weights layer by layer,
    then reconstruction weights. He-scaled Gaussians for ReLU layers,
    LeCun-scaled for the linear reconstruction layer; log-variances and
    all biases start at zero.
    """
    k = config.latent_dim
    if n_inputs < 1 or d < 1:
        raise ValueError("n_inputs and d must be >= 1")
    mu_table = gaussian_sample(rng, k, n_inputs) * MU_INIT_STD
    hidden_weights, hidden_biases = [], []
    fan_in = k
    for width in config.hidden_widths:
        hidden_weights.append(gaussian_sample(rng, width, fan_in) * np.sqrt(2.0 / fan_in))
        hidden_biases.append(np.zeros(width))
        fan_in = width
    rec_weights = gaussian_sample(rng, d, fan_in) * np.sqrt(1.0 / fan_in)
    return ModelParams(
        mu_table=mu_table,
        logvar_table=np.zeros((k, n_inputs)),
        mu_bias=np.zeros(k),
        logvar_bias=np.zeros(k),
        hidden_weights=hidden_weights,
        hidden_biases=hidden_biases,
        rec_weights=rec_weights,
        rec_bias=np.zeros(d),
        mode=config.mode,
    )


def _check_columns(params, columns):
    columns = np.asarray(columns, dtype=np.int64)
    if columns.size and (columns.min() < 0 or columns.max() >= params.n_inputs):
        raise IndexError(f"input index out of range [0, {params.n_inputs})")
    return columns


def encode(params: ModelParams, index: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 <= index < params.n_inputs:
        raise IndexError(f"index {index} out of range [0, {params.n_inputs})")
    return (params.mu_table[:, index] + params.mu_bias,
            params.logvar_table[:, index] + params.logvar_bias)


def reparameterize(mu, logvar, eps):
    mu, logvar, eps = np.asarray(mu), np.asarray(logvar), np.asarray(eps)
    if not mu.shape == logvar.shape == eps.shape:
        raise ShapeError(f"shape mismatch: mu {mu.shape}, logvar {logvar.shape}, eps {eps.shape}")
    return mu + np.exp(logvar / 2.0) * eps


def _decode_trace(params, z):
    pre, post = [], []
    h = z
    for w, b in zip(params.hidden_weights, params.hidden_biases):
        a = w @ h + b[:, None]
        h = np.maximum(a, 0.0)
        pre.append(a)
        post.append(h)
    recon = params.rec_weights @ h + params.rec_bias[:, None]
    return pre, post, recon


def decode(params: ModelParams, z) -> np.ndarray:
    """Latent vector (k,) or batch (k, B) to reconstruction (d,) or (d, B)."""
    z = np.asarray(z, dtype=np.float64)
    vector = z.ndim == 1
    Z = z[:, None] if vector else z
    if Z.shape[0] != params.latent_dim:
        raise ShapeError(f"latent has {Z.shape[0]} rows, model expects {params.latent_dim}")
    recon = _decode_trace(params, Z)[2]
    return recon[:, 0] if vector else recon


def forward_batch(params: ModelParams, columns, rng: RandomSource | None = None, eps=None) -> ForwardTrace:
    """Full forward pass for the given input columns.

    Noise is drawn from ``rng`` as a (k, B) row-major block unless ``eps``
    is supplied (gradient checks reuse a fixed draw).
    """
    columns = _check_columns(params, columns)
    mu = params.mu_table[:, columns] + params.mu_bias[:, None]
    logvar = params.logvar_table[:, columns] + params.logvar_bias[:, None]
    if eps is None:
        if rng is None:
            raise ValueError("need either rng or eps")
        eps = gaussian_sample(rng, params.latent_dim, len(columns))
    eps = np.asarray(eps, dtype=np.float64)
    z = reparameterize(mu, logvar, eps)
    pre, post, recon = _decode_trace(params, z)
    return ForwardTrace(columns=columns, mu=mu, logvar=logvar, eps=eps, z=z,
                        hidden_pre=pre, hidden_post=post, recon=recon)


def embedding(params: ModelParams) -> np.ndarray:
    """Per-sample latent means, shape (n, k). Noise-free."""
    if params.mode != UNSUPERVISED:
        raise ModeError("embedding export needs an unsupervised model; supervised models hold per-class means")
    return np.ascontiguousarray((params.mu_table + params.mu_bias[:, None]).T)


# -- checkpoint ---------------------------------------------------------------

def checkpoint_bytes(params: ModelParams) -> bytes:
    """Serialise to the GNDV layout.

    ``b"GNDV"``, u32 version, u8 mode (0 unsupervised, 1 supervised), u32 k,
    l, d, m, then l u32 hidden widths, then every array of
    :meth:`ModelParams.arrays` as row-major little-endian float64. All
    integers little-endian.
    """
    widths = params.hidden_widths
    header = CHECKPOINT_MAGIC + struct.pack(
        f"<IB{4 + len(widths)}I",
        CHECKPOINT_VERSION,
        MODES.index(params.mode),
        params.latent_dim,
        len(widths),
        params.output_dim,
        params.n_inputs,
        *widths,
    )
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    return header + body


def params_from_bytes(raw: bytes) -> ModelParams:
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a GNDV checkpoint (bad magic)")
    version, mode_byte = struct.unpack_from("<IB", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if mode_byte >= len(MODES):
        raise ValueError(f"bad mode byte {mode_byte}")
    offset = 9
    k, n_layers, d, m = struct.unpack_from("<4I", raw, offset)
    offset += 16
    widths = struct.unpack_from(f"<{n_layers}I", raw, offset)
    offset += 4 * n_layers

    def take(*shape):
        nonlocal offset
        count = int(np.prod(shape))
        if offset + 8 * count > len(raw):
            raise ValueError("truncated checkpoint")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * count
        return arr

    mu_table, logvar_table, mu_bias, logvar_bias = take(k, m), take(k, m), take(k), take(k)
    hidden_weights, hidden_biases = [], []
    fan_in = k
    for w in widths:
        hidden_weights.append(take(w, fan_in))
        hidden_biases.append(take(w))
        fan_in = w
    rec_weights, rec_bias = take(d, fan_in), take(d)
    if offset != len(raw):
        raise ValueError(f"{len(raw) - offset} trailing bytes in checkpoint")
    params = ModelParams(mu_table, logvar_table, mu_bias, logvar_bias, hidden_weights,
                         hidden_biases, rec_weights, rec_bias, mode=MODES[mode_byte])
    if not all(np.isfinite(a).all() for a in params.arrays()):
        raise ValueError("checkpoint contains non-finite values")
    return params


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def load_checkpoint(path) -> ModelParams:
    return params_from_bytes(Path(path).read_bytes())
