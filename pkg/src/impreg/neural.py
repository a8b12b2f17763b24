"""Learned inverse regularization matrices from a small dense network.

One network maps a whole record (input sequence, output sequence, and the
standardized least-squares estimate) to a weight vector over a trainable bank
of candidate directions.  The weighted sum of their outer products is the
inverse regularization matrix P; the training loss is the squared estimation
error of the resulting regularized estimate, differentiated through the
linear solve with an adjoint system rather than an explicit inverse.

Shapes: the network has three ReLU layers and one linear layer producing
``n_matrices`` logits; the final weights come from a softmax variant with an
implicit extra unit logit, so the weights sum to less than one and the
network can switch regularization off entirely.
"""

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from . import regls
from ._binio import CrcReader, CrcWriter
from .dataset import (Dataset, Example, ThetaStats, compute_theta_stats,
                      normalize_example)
from .errors import FormatVersionMismatch, NonFiniteActivation, NonFiniteGradient

MODEL_MAGIC = b"IRNN"
MODEL_VERSION = 1

DEFAULT_HIDDEN = (600, 300, 200)
DEFAULT_N_MATRICES = 500


@dataclass
class NetParams:
    """Dense-layer weights/biases plus the candidate-direction bank S (n x n_m)."""

    weights: list
    biases: list
    S: np.ndarray

    @property
    def n_taps(self) -> int:
        return self.S.shape[0]

    @property
    def n_matrices(self) -> int:
        return self.S.shape[1]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def copy(self) -> "NetParams":
        return NetParams(weights=[w.copy() for w in self.weights],
                         biases=[b.copy() for b in self.biases],
                         S=self.S.copy())


@dataclass
class Gradients:
    weights: list
    biases: list
    S: np.ndarray


@dataclass
class ForwardTrace:
    """Everything recorded during one forward pass, enough to replay it."""

    x: np.ndarray
    pre_acts: list
    acts: list
    logits: np.ndarray
    w_d: np.ndarray
    mask: np.ndarray
    w: np.ndarray
    P: np.ndarray
    rd: regls.RegressionData
    theta_hat: np.ndarray
    solve_matrix: np.ndarray
    params: NetParams
    mode: str


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 50
    dropout: float = 0.3
    patience: int = 5
    seed: int = 0
    hidden: tuple = DEFAULT_HIDDEN
    n_matrices: int = DEFAULT_N_MATRICES
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # Single-process execution is already bit-reproducible; the flag is kept
    # so callers can require it explicitly.
    deterministic: bool = True


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainingLog:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = np.inf
    stopped_early: bool = False
    wall_time_s: float = 0.0


def init_params(stats: ThetaStats, rng: np.random.Generator, n_samples: int,
                hidden: tuple = DEFAULT_HIDDEN,
                n_matrices: int = DEFAULT_N_MATRICES) -> NetParams:
    """He-initialized dense layers; candidate directions drawn around the
    training-set response statistics (mean plus std-scaled noise per column)."""
    n = stats.mean.shape[0]
    dims = [2 * n_samples + n, *hidden, n_matrices]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    S = stats.mean[:, None] + stats.std[:, None] * rng.standard_normal((n, n_matrices))
    return NetParams(weights=weights, biases=biases, S=S)


def softmax_with_one(logits: np.ndarray) -> np.ndarray:
    """exp(h_i) / (1 + sum_j exp(h_j)), computed overflow-free.

    The constant 1 acts as an extra logit pinned at 0, so the outputs lie in
    (0, 1) and sum to strictly less than 1 for any finite logits.
    """
    h = np.asarray(logits, dtype=float)
    shift = np.maximum(h.max(axis=-1, keepdims=True), 0.0)
    e = np.exp(h - shift)
    denom = np.exp(-shift) + e.sum(axis=-1, keepdims=True)
    return e / denom


def assemble_reg_matrix(w: np.ndarray, S: np.ndarray) -> np.ndarray:
    """P = sum_i w_i s_i s_i^T for weight vector w and column bank S."""
    return (S * w) @ S.T


def estimation_loss(theta_hat: np.ndarray, theta0: np.ndarray) -> float:
    """Squared estimation error, no 1/n normalization."""
    d = np.asarray(theta_hat) - np.asarray(theta0)
    return float(d @ d)


def _forward_batch(params, X, R, F, mask=None):
    """Forward pass over a batch.  mask=None means evaluation mode.

    X: (B, input_dim), R: (B, n, n), F: (B, n), mask: (B, n_m) in {0, 1}.
    Returns a dict with every intermediate needed by the backward pass.
    """
    acts = [X]
    pre = []
    h = X
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        z = h @ W.T + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    logits = h @ params.weights[-1].T + params.biases[-1]
    if not np.isfinite(logits).all():
        raise NonFiniteActivation("non-finite logits in forward pass")
    w_d = softmax_with_one(logits)
    w = w_d if mask is None else w_d * mask
    S = params.S
    SW = S[None, :, :] * w[:, None, :]
    P = SW @ S.T
    n = S.shape[0]
    M = P @ R + np.eye(n)
    theta = np.linalg.solve(M, P @ F[:, :, None])[:, :, 0]
    if not np.isfinite(theta).all():
        raise NonFiniteActivation("non-finite estimate in forward pass")
    return {"acts": acts, "pre": pre, "logits": logits, "w_d": w_d,
            "mask": mask, "w": w, "P": P, "M": M, "theta": theta}


def _backward_batch(params, fwd, R, F, theta0):
    """Batch-mean gradients of the squared estimation error.

    The solve is differentiated by the adjoint system M^T lam = dloss/dtheta;
    the gradient with respect to P is then the outer product lam (F - R theta)^T.
    """
    B = theta0.shape[0]
    theta, M, w, w_d, mask = fwd["theta"], fwd["M"], fwd["w"], fwd["w_d"], fwd["mask"]
    S = params.S

    g_theta = 2.0 * (theta - theta0) / B
    lam = np.linalg.solve(M.transpose(0, 2, 1), g_theta[:, :, None])[:, :, 0]
    resid = F - (R @ theta[:, :, None])[:, :, 0]
    # G[b] = lam_b resid_b^T; only its symmetric part acts on P's parameters.
    T = 0.5 * (lam[:, :, None] * (resid[:, None, :] @ S)
               + resid[:, :, None] * (lam[:, None, :] @ S))
    g_w = np.einsum("km,bkm->bm", S, T)
    g_S = 2.0 * np.einsum("bkm,bm->km", T, w)

    if mask is not None:
        g_w = g_w * mask
    # Softmax-with-one Jacobian: diag(w_d) - w_d w_d^T.
    g_logits = w_d * g_w - w_d * np.sum(w_d * g_w, axis=1, keepdims=True)

    g_weights = [None] * len(params.weights)
    g_biases = [None] * len(params.biases)
    g = g_logits
    for layer in range(len(params.weights) - 1, -1, -1):
        h_in = fwd["acts"][layer]
        g_weights[layer] = g.T @ h_in
        g_biases[layer] = g.sum(axis=0)
        if layer > 0:
            g = (g @ params.weights[layer]) * (fwd["pre"][layer - 1] > 0.0)

    for block in (*g_weights, *g_biases, g_S):
        if not np.isfinite(block).all():
            raise NonFiniteGradient("non-finite gradient block")
    return Gradients(weights=g_weights, biases=g_biases, S=g_S)


def forward(params: NetParams, ex, theta_ls_std: np.ndarray, mode: str = "eval",
            rng: np.random.Generator | None = None, dropout: float = 0.3,
            rd: regls.RegressionData | None = None,
            mask: np.ndarray | None = None) -> ForwardTrace:
    """Run the network on one normalized example.

    Parameters
    ----------
    ex : Example
        Normalized example (provides u and y).
    theta_ls_std : array
        Least-squares estimate of the normalized record, standardized with
        the training-set response statistics.
    mode : "train" or "eval"
        Train mode applies dropout to the softmax weights (no rescaling);
        eval mode uses them as-is.
    rng, dropout, mask
        Train mode draws a keep-mask Bernoulli(1 - dropout) from rng unless
        an explicit 0/1 mask is supplied (used by gradient checks).
    rd : RegressionData, optional
        Precomputed regression statistics; built from ex when omitted.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    n = params.n_taps
    if rd is None:
        rd = regls.build_regression(ex.u, ex.y, n)
    x = np.concatenate([ex.u, ex.y, theta_ls_std])
    if x.shape[0] != params.input_dim:
        raise ValueError("input length %d does not match network input %d"
                         % (x.shape[0], params.input_dim))
    if mode == "train":
        if mask is None:
            if rng is None:
                raise ValueError("train mode needs rng or an explicit mask")
            mask = (rng.random(params.n_matrices) >= dropout).astype(float)
        mask2 = np.asarray(mask, dtype=float)[None, :]
    else:
        mask2 = None
    fwd = _forward_batch(params, x[None, :], rd.R[None, :, :], rd.F[None, :],
                         mask=mask2)
    return ForwardTrace(
        x=x,
        pre_acts=[z[0] for z in fwd["pre"]],
        acts=[h[0] for h in fwd["acts"][1:]],
        logits=fwd["logits"][0],
        w_d=fwd["w_d"][0],
        mask=None if mask2 is None else mask2[0],
        w=fwd["w"][0],
        P=fwd["P"][0],
        rd=rd,
        theta_hat=fwd["theta"][0],
        solve_matrix=fwd["M"][0],
        params=params,
        mode=mode,
    )


def backward(trace: ForwardTrace, theta0: np.ndarray) -> Gradients:
    """Gradients of estimation_loss(trace.theta_hat, theta0) for one example."""
    params = trace.params
    fwd = {
        "acts": [trace.x[None, :]] + [h[None, :] for h in trace.acts],
        "pre": [z[None, :] for z in trace.pre_acts],
        "logits": trace.logits[None, :],
        "w_d": trace.w_d[None, :],
        "mask": None if trace.mask is None else trace.mask[None, :],
        "w": trace.w[None, :],
        "P": trace.P[None, :, :],
        "M": trace.solve_matrix[None, :, :],
        "theta": trace.theta_hat[None, :],
    }
    return _backward_batch(params, fwd, trace.rd.R[None, :, :],
                           trace.rd.F[None, :], np.asarray(theta0)[None, :])


def _prepare_arrays(ds: Dataset, stats: ThetaStats):
    """Stack network inputs and regression statistics for a normalized dataset."""
    n = ds.n_taps
    M = ds.count
    X = np.empty((M, 2 * ds.n_samples + n))
    R = np.empty((M, n, n))
    F = np.empty((M, n))
    theta0 = np.empty((M, n))
    for i, ex in enumerate(ds.examples):
        rd = regls.build_regression(ex.u, ex.y, n)
        theta_ls = regls.least_squares(rd)
        X[i] = np.concatenate([ex.u, ex.y, (theta_ls - stats.mean) / stats.std])
        R[i] = rd.R
        F[i] = rd.F
        theta0[i] = ex.theta0
    return X, R, F, theta0


def _eval_loss(params, X, R, F, theta0, batch_size):
    total = 0.0
    for start in range(0, X.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        fwd = _forward_batch(params, X[sl], R[sl], F[sl], mask=None)
        d = fwd["theta"] - theta0[sl]
        total += float(np.sum(d * d))
    return total / X.shape[0]


class _Adam:
    def __init__(self, blocks, cfg):
        self.m = [np.zeros_like(b) for b in blocks]
        self.v = [np.zeros_like(b) for b in blocks]
        self.t = 0
        self.cfg = cfg

    def step(self, blocks, grads):
        cfg = self.cfg
        self.t += 1
        correct1 = 1.0 - cfg.beta1 ** self.t
        correct2 = 1.0 - cfg.beta2 ** self.t
        for p, g, m, v in zip(blocks, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= cfg.learning_rate * (m / correct1) / (np.sqrt(v / correct2) + cfg.eps)


def _param_blocks(params):
    return [*params.weights, *params.biases, params.S]


def _grad_blocks(grads):
    return [*grads.weights, *grads.biases, grads.S]


def train(train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig,
          warm_start=None, progress=None):
    """Train the regularization network on normalized datasets.

    Both datasets must already be normalized.  Response statistics are
    computed from the training set only (or taken from ``warm_start``) and
    standardize the least-squares network inputs.

    Parameters
    ----------
    warm_start : (NetParams, ThetaStats), optional
        Continue from existing parameters; the optimizer state restarts.
    progress : callable, optional
        Called with each EpochRecord as it is produced.

    Returns
    -------
    (NetParams, ThetaStats, TrainingLog)
        Parameters of the best validation epoch, the statistics needed at
        inference time, and the per-epoch log.
    """
    t_start = time.time()
    rng = np.random.default_rng(cfg.seed)
    if warm_start is not None:
        params, stats = warm_start[0].copy(), warm_start[1]
    else:
        stats = compute_theta_stats(train_ds)
        params = init_params(stats, rng, train_ds.n_samples,
                             hidden=cfg.hidden, n_matrices=cfg.n_matrices)

    Xt, Rt, Ft, Tt = _prepare_arrays(train_ds, stats)
    Xv, Rv, Fv, Tv = _prepare_arrays(val_ds, stats)

    adam = _Adam(_param_blocks(params), cfg)
    log = TrainingLog()
    best_params = params.copy()
    bad_epochs = 0
    count = train_ds.count
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(count)
        running, seen = 0.0, 0
        for start in range(0, count, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            mask = (rng.random((idx.shape[0], params.n_matrices)) >= cfg.dropout
                    ).astype(float)
            try:
                fwd = _forward_batch(params, Xt[idx], Rt[idx], Ft[idx], mask=mask)
                grads = _backward_batch(params, fwd, Rt[idx], Ft[idx], Tt[idx])
            except (NonFiniteActivation, NonFiniteGradient) as err:
                raise type(err)("%s (epoch %d, batch at %d)" % (err, epoch, start))
            d = fwd["theta"] - Tt[idx]
            running += float(np.sum(d * d))
            seen += idx.shape[0]
            adam.step(_param_blocks(params), _grad_blocks(grads))
        val_loss = _eval_loss(params, Xv, Rv, Fv, Tv, cfg.batch_size)
        record = EpochRecord(epoch=epoch, train_loss=running / seen, val_loss=val_loss)
        log.epochs.append(record)
        if progress is not None:
            progress(record)
        if val_loss < log.best_val_loss:
            log.best_val_loss = val_loss
            log.best_epoch = epoch
            best_params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                log.stopped_early = True
                break
    log.wall_time_s = time.time() - t_start
    return best_params, stats, log


def regularizer_for_example(params: NetParams, stats: ThetaStats, ex,
                            rd: regls.RegressionData | None = None) -> np.ndarray:
    """Evaluation-mode P for one already-normalized example."""
    if rd is None:
        rd = regls.build_regression(ex.u, ex.y, params.n_taps)
    theta_ls = regls.least_squares(rd)
    trace = forward(params, ex, (theta_ls - stats.mean) / stats.std,
                    mode="eval", rd=rd)
    return trace.P


def predict_reg_matrix(params: NetParams, stats: ThetaStats,
                       u: np.ndarray, y: np.ndarray):
    """Inverse regularization matrix for a raw record.

    Normalizes (u, y) the same way training data was normalized, runs the
    network in evaluation mode, and returns ``(P, scale)`` where P lives in
    the normalized data scale and ``scale`` maps estimates back to raw units
    (see ``dataset.denormalize_theta``).
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    probe = Example(u=u, y=y, theta0=np.zeros(params.n_taps), sigma2=1.0, snr=1.0)
    ex, scale = normalize_example(probe)
    return regularizer_for_example(params, stats, ex), scale


def save_model(params: NetParams, stats: ThetaStats, path):
    """Write the model as a named-tensor container with a trailing CRC32."""
    tensors = _model_tensors(params, stats)
    with open(path, "wb") as fh:
        w = CrcWriter(fh)
        w.write(MODEL_MAGIC)
        w.pack("B", MODEL_VERSION)
        w.pack("I", len(tensors))
        for name, arr in tensors:
            encoded = name.encode("ascii")
            arr = np.asarray(arr, dtype=float)
            w.pack("H", len(encoded))
            w.write(encoded)
            w.pack("B", arr.ndim)
            w.pack("%dI" % arr.ndim, *arr.shape)
            w.write_array(arr)
        w.write_crc()


def _model_tensors(params, stats):
    tensors = []
    for i, (W, b) in enumerate(zip(params.weights, params.biases), start=1):
        tensors.append(("W%d" % i, W))
        tensors.append(("b%d" % i, b))
    tensors.append(("S", params.S))
    tensors.append(("theta_mean", stats.mean))
    tensors.append(("theta_std", stats.std))
    return tensors


def load_model(path):
    """Read a model file; returns ``(NetParams, ThetaStats)``.

    Layer sizes are taken from the stored tensor shapes, so any layer
    geometry written by save_model loads back without side metadata.
    """
    with open(path, "rb") as fh:
        r = CrcReader(fh)
        r.expect_magic(MODEL_MAGIC, MODEL_VERSION)
        (count,) = r.unpack("I")
        tensors = {}
        for _ in range(count):
            (name_len,) = r.unpack("H")
            name = r.read(name_len).decode("ascii")
            (rank,) = r.unpack("B")
            dims = r.unpack("%dI" % rank) if rank else ()
            size = int(np.prod(dims)) if rank else 1
            tensors[name] = r.read_array(size).reshape(dims)
        r.check_crc()

    layers = []
    i = 1
    while "W%d" % i in tensors:
        layers.append((tensors["W%d" % i], tensors["b%d" % i]))
        i += 1
    missing = [k for k in ("S", "theta_mean", "theta_std") if k not in tensors]
    if missing or not layers:
        raise FormatVersionMismatch("model file lacks tensors: %s"
                                    % (missing or ["W1"]))
    params = NetParams(weights=[W for W, _ in layers],
                       biases=[b for _, b in layers],
                       S=tensors["S"])
    stats = ThetaStats(mean=tensors["theta_mean"], std=tensors["theta_std"])
    return params, stats
