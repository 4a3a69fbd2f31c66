"""Objective, analytic gradients, gradient checking, Adam and the epoch loop.

Every data-dependent term of the objective is a mean over the batch::

    recon          = mean_i ||x_i - x~_i||^2
    kld            = beta * mean_i KL(N(mu_i, exp(logvar_i)) || N(0, I))
    weight_reg     = gamma1 * sum_j ||W_j||_F^2 + gamma2 * ||W_rec||_F^2
    activation_reg = mean_i (gamma3 * sum_j ||h_ij||^2 + gamma4 * ||x~_i||^2)

Embedding tables and biases are not weight-regularised.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import astuple, dataclass, field, fields

import numpy as np

from . import kernels
from .data import Dataset
from .model import (
    SUPERVISED,
    ForwardTrace,
    Gradients,
    ModelConfig,
    ModelParams,
    forward_batch,
    init_params,
)
from .numeric import RandomSource, ShapeError

log = logging.getLogger(__name__)

FD_STEP = 1e-5
# denominators below this are treated as absolute error
GRADCHECK_FLOOR = 1e-6
GRADCHECK_TOL = 1e-4


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    recon: float
    kld: float
    weight_reg: float
    activation_reg: float


@dataclass
class TrainHistory:
    epochs: list[LossBreakdown] = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def totals(self) -> list[float]:
        return [e.total for e in self.epochs]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch"] + [f.name for f in fields(LossBreakdown)])
            for i, e in enumerate(self.epochs, start=1):
                writer.writerow([i] + [repr(v) for v in astuple(e)])


def kld_term(mu, logvar) -> float:
    """KL divergence of N(mu, diag(exp(logvar))) from N(0, I)."""
    mu, logvar = np.asarray(mu, dtype=np.float64), np.asarray(logvar, dtype=np.float64)
    return float(-0.5 * np.sum(1.0 + logvar - mu ** 2 - np.exp(logvar)))


def _check_batch(trace, x_batch):
    x_batch = np.asarray(x_batch, dtype=np.float64)
    if x_batch.shape != trace.recon.shape:
        raise ShapeError(f"x_batch {x_batch.shape} does not match reconstruction {trace.recon.shape}")
    return x_batch


def loss(trace: ForwardTrace, x_batch, params: ModelParams, config: ModelConfig) -> LossBreakdown:
    """Objective for one batch; ``x_batch`` is (d, B) like ``trace.recon``."""
    x_batch = _check_batch(trace, x_batch)
    B = trace.batch_size
    recon = float(np.sum((x_batch - trace.recon) ** 2) / B)
    kld_per_sample = -0.5 * np.sum(1.0 + trace.logvar - trace.mu ** 2 - np.exp(trace.logvar), axis=0)
    kld = config.beta * float(np.sum(kld_per_sample) / B)
    weight_reg = (config.gamma1 * sum(float(np.sum(w * w)) for w in params.hidden_weights)
                  + config.gamma2 * float(np.sum(params.rec_weights ** 2)))
    activation_reg = (config.gamma3 * sum(float(np.sum(h * h)) for h in trace.hidden_post)
                      + config.gamma4 * float(np.sum(trace.recon ** 2))) / B
    return LossBreakdown(recon + kld + weight_reg + activation_reg, recon, kld, weight_reg, activation_reg)


def backward(trace: ForwardTrace, x_batch, params: ModelParams, config: ModelConfig) -> Gradients:
    """Exact gradient of :func:`loss` with respect to every parameter."""
    x_batch = _check_batch(trace, x_batch)
    if len(trace.hidden_post) != len(params.hidden_weights) or trace.mu.shape[0] != params.latent_dim:
        raise ShapeError("trace does not belong to these parameters")
    B = trace.batch_size
    grads = params.zeros_like()

    d_out = (2.0 / B) * (trace.recon - x_batch) + (2.0 * config.gamma4 / B) * trace.recon
    h_last = trace.hidden_post[-1]
    grads.rec_weights = d_out @ h_last.T + 2.0 * config.gamma2 * params.rec_weights
    grads.rec_bias = d_out.sum(axis=1)
    d_h = params.rec_weights.T @ d_out

    for j in range(len(params.hidden_weights) - 1, -1, -1):
        d_h = d_h + (2.0 * config.gamma3 / B) * trace.hidden_post[j]
        d_a = d_h * (trace.hidden_pre[j] > 0)
        h_in = trace.hidden_post[j - 1] if j > 0 else trace.z
        grads.hidden_weights[j] = d_a @ h_in.T + 2.0 * config.gamma1 * params.hidden_weights[j]
        grads.hidden_biases[j] = d_a.sum(axis=1)
        d_h = params.hidden_weights[j].T @ d_a
    d_z = d_h

    half_std = 0.5 * np.exp(trace.logvar / 2.0)
    d_mu = d_z + (config.beta / B) * trace.mu
    d_logvar = d_z * half_std * trace.eps + (config.beta / B) * 0.5 * (np.exp(trace.logvar) - 1.0)
    grads.mu_bias = d_mu.sum(axis=1)
    grads.logvar_bias = d_logvar.sum(axis=1)
    kernels.scatter_add_columns(grads.mu_table, trace.columns, np.ascontiguousarray(d_mu))
    kernels.scatter_add_columns(grads.logvar_table, trace.columns, np.ascontiguousarray(d_logvar))
    return grads


def batch_loss(params, config, x_batch, columns, eps) -> float:
    return loss(forward_batch(params, columns, eps=eps), x_batch, params, config).total


def finite_diff_grad(params: ModelParams, config: ModelConfig, x_batch, columns, fixed_eps,
                     step: float = FD_STEP) -> Gradients:
    """Central differences over every coordinate with the noise held fixed."""
    work = params.copy()
    grads = params.zeros_like()
    for arr, g in zip(work.arrays(), grads.arrays()):
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = batch_loss(work, config, x_batch, columns, fixed_eps)
            flat[i] = orig - step
            down = batch_loss(work, config, x_batch, columns, fixed_eps)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
    return grads


def max_relative_error(analytic: Gradients, numeric: Gradients, floor: float = GRADCHECK_FLOOR) -> float:
    """max |a - f| / max(|a|, |f|, floor) over every coordinate."""
    worst = 0.0
    for a, f in zip(analytic.arrays(), numeric.arrays()):
        if a.size:
            denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
            worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst


def _random_tiny_problem(rng: RandomSource):
    n = 2 + rng.integer_below(5)
    d = 1 + rng.integer_below(5)
    k = 1 + rng.integer_below(2)
    widths = tuple(1 + rng.integer_below(4) for _ in range(1 + rng.integer_below(2)))
    u = rng.uniform(6)
    config = ModelConfig(latent_dim=k, hidden_widths=widths, beta=float(u[0]),
                         gamma1=float(u[1]) * 0.1, gamma2=float(u[2]) * 0.1,
                         gamma3=float(u[3]) * 0.1, gamma4=float(u[4]) * 0.1,
                         seed=rng.next_u64())
    params = init_params(config, n, d, rng)
    # move every array off its special initial values
    params = params.map(lambda a: a + 0.3 * rng.normal(a.size).reshape(a.shape))
    B = 1 + rng.integer_below(n)
    columns = rng.permutation(n)[:B]
    x_batch = rng.uniform(d * B).reshape(d, B)
    eps = rng.normal(k * B).reshape(k, B)
    return config, params, x_batch, columns, eps


def gradcheck(trials: int = 5, seed: int = 0, corrupt: bool = False) -> list[float]:
    """Backward vs finite differences on random tiny models; one error per trial.

    ``corrupt`` perturbs the analytic gradient, for exercising failure paths.
    """
    rng = RandomSource(seed)
    errors = []
    for _ in range(trials):
        config, params, x_batch, columns, eps = _random_tiny_problem(rng)
        trace = forward_batch(params, columns, eps=eps)
        analytic = backward(trace, x_batch, params, config)
        if corrupt:
            analytic.rec_bias = analytic.rec_bias * 1.01 + 1e-3
        numeric = finite_diff_grad(params, config, x_batch, columns, eps)
        errors.append(max_relative_error(analytic, numeric))
    return errors


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    """Adam moments plus per-column step counts for the two embedding tables.

    Table columns are updated lazily: a column's moments and counter advance
    only on steps where it appears in the batch, and its bias correction
    uses its own counter.
    """

    m: ModelParams
    v: ModelParams
    column_steps: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: ModelParams, **kw) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like(),
                   column_steps=np.zeros(params.n_inputs, dtype=np.int64), **kw)


def _adam_dense(p, g, m, v, t, lr, b1, b2, eps):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def adam_step(params: ModelParams, grads: Gradients, state: AdamState, learning_rate: float,
              columns=None) -> tuple[ModelParams, AdamState]:
    """One Adam update, in place; returns ``(params, state)`` for convenience.

    ``columns`` lists the embedding-table columns touched by the batch; only
    those columns move. ``None`` means every column.
    """
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    if columns is None:
        cols = np.arange(params.n_inputs)
    else:
        cols = np.unique(np.asarray(columns, dtype=np.int64))
    state.column_steps[cols] += 1
    t_col = state.column_steps[cols].astype(np.float64)
    for name in ("mu_table", "logvar_table"):
        p, g = getattr(params, name), getattr(grads, name)
        m, v = getattr(state.m, name), getattr(state.v, name)
        gc = g[:, cols]
        m[:, cols] = b1 * m[:, cols] + (1.0 - b1) * gc
        v[:, cols] = b2 * v[:, cols] + (1.0 - b2) * gc * gc
        m_hat = m[:, cols] / (1.0 - b1 ** t_col)
        v_hat = v[:, cols] / (1.0 - b2 ** t_col)
        p[:, cols] -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)

    dense = list(zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()))[2:]
    for p, g, m, v in dense:
        _adam_dense(p, g, m, v, state.t, learning_rate, b1, b2, eps)
    return params, state


# -- training loop ------------------------------------------------------------

def _saturated(totals, tol, patience):
    if patience < 1 or len(totals) <= patience:
        return False
    ref = totals[-1 - patience]
    return abs(ref - totals[-1]) <= tol * abs(ref)


def train(dataset: Dataset, config: ModelConfig, callback=None) -> tuple[ModelParams, TrainHistory]:
    """Fit a model with Adam over shuffled mini-batches.

    Unsupervised models own one embedding column per sample; supervised
    models own one per class and every sample of a class reads that column.
    Stops after ``config.epochs`` or once the epoch loss saturates.
    """
    if dataset.n < 1:
        raise ConfigurationError("dataset is empty")
    if config.mode == SUPERVISED:
        if dataset.labels is None:
            raise ConfigurationError("supervised mode needs labels")
        column_of = dataset.labels
        n_inputs = dataset.c
    else:
        column_of = np.arange(dataset.n, dtype=np.int64)
        n_inputs = dataset.n

    rng = RandomSource(config.seed)
    params = init_params(config, n_inputs, dataset.d, rng)
    state = AdamState.fresh(params)
    history = TrainHistory()
    XT = dataset.X.T
    for epoch in range(config.epochs):
        order = rng.permutation(dataset.n)
        sums = np.zeros(5)
        for start in range(0, dataset.n, config.batch_size):
            ids = order[start:start + config.batch_size]
            columns = column_of[ids]
            x_batch = XT[:, ids]
            trace = forward_batch(params, columns, rng)
            parts = loss(trace, x_batch, params, config)
            grads = backward(trace, x_batch, params, config)
            adam_step(params, grads, state, config.learning_rate, columns)
            sums += len(ids) * np.array(astuple(parts))
        history.epochs.append(LossBreakdown(*(float(s) for s in sums / dataset.n)))
        if callback is not None:
            callback(epoch + 1, history.epochs[-1])
        log.debug("epoch %d loss %.6g", epoch + 1, history.epochs[-1].total)
        if _saturated(history.totals(), config.tol, config.patience):
            log.info("loss saturated after %d epochs", epoch + 1)
            break
    return params, history
