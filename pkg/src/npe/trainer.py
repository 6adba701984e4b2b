"""Mini-batch training with per-epoch negative sampling, Adam and early stopping."""

from __future__ import annotations

import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .data import DataError, DatasetSplit, SparseClickMatrix, build_matrix, merge
from .model import VARIANTS, ModelParams, activate, activation_mask, init_params, predict_prob, sigmoid, variant_terms
from .seeds import derive_seeds

logger = logging.getLogger(__name__)

LOG_EPS = 1e-12


class NumericalError(RuntimeError):
    """Raised when the loss or the parameters stop being finite."""


class SamplingError(DataError):
    pass


@dataclass
class TrainConfig:
    dim: int = 64
    neg_ratio: int = 4
    batch_size: int = 10_000
    max_epochs: int = 100
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lam: float = 0.0
    dropout_rate: float = 0.0
    init_sigma: float = 0.01
    early_stop_patience: int = 5
    context_cap: Optional[int] = None
    seed: int = 0
    # "mf" drops the context term, "embedding" drops the user term
    variant: str = "npe"
    negative_sampling: str = "uniform"
    dtype: str = "float32"

    def __post_init__(self):
        if self.neg_ratio < 1:
            raise ValueError("neg_ratio must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.context_cap is not None and self.context_cap < 1:
            raise ValueError("context_cap must be >= 1 when set")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.negative_sampling not in ("uniform", "popularity"):
            raise ValueError("negative_sampling must be 'uniform' or 'popularity'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainExample:
    u: int
    i: int
    r: int
    context: List[int] = field(default_factory=list)


@dataclass
class ExampleBatch:
    """Array form of a list of examples; row k of ``contexts`` is example k's context."""

    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray
    contexts: sp.csr_matrix

    def __len__(self) -> int:
        return int(self.users.size)

    @classmethod
    def from_examples(cls, examples: Sequence[TrainExample], num_items: int) -> "ExampleBatch":
        users = np.array([e.u for e in examples], dtype=np.int64)
        items = np.array([e.i for e in examples], dtype=np.int64)
        labels = np.array([e.r for e in examples], dtype=np.float64)
        lengths = [len(e.context) for e in examples]
        indptr = np.zeros(len(examples) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        indices = (
            np.concatenate([np.asarray(e.context, dtype=np.int64) for e in examples])
            if examples else np.zeros(0, dtype=np.int64)
        )
        data = np.ones(indices.size, dtype=np.float64)
        contexts = sp.csr_matrix((data, indices, indptr), shape=(len(examples), num_items))
        return cls(users, items, labels, contexts)

    def to_examples(self) -> list:
        c = self.contexts
        return [
            TrainExample(
                int(self.users[k]), int(self.items[k]), int(self.labels[k]),
                c.indices[c.indptr[k]:c.indptr[k + 1]].tolist(),
            )
            for k in range(len(self))
        ]


@dataclass
class Gradients:
    """Row-sparse gradients: ``H_grad[k]`` is the gradient of ``H[H_rows[k]]``."""

    H_rows: np.ndarray
    H_grad: np.ndarray
    W_rows: np.ndarray
    W_grad: np.ndarray
    V_rows: np.ndarray
    V_grad: np.ndarray

    def dense(self, params: ModelParams) -> tuple:
        out = []
        for rows, grad, mat in (
            (self.H_rows, self.H_grad, params.H),
            (self.W_rows, self.W_grad, params.W),
            (self.V_rows, self.V_grad, params.V),
        ):
            full = np.zeros(mat.shape, dtype=np.float64)
            full[rows] = grad
            out.append(full)
        return tuple(out)


@dataclass
class AdamState:
    m: tuple
    v: tuple
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        shapes = (params.H.shape, params.W.shape, params.V.shape)
        return cls(
            tuple(np.zeros(s, dtype=np.float64) for s in shapes),
            tuple(np.zeros(s, dtype=np.float64) for s in shapes),
        )


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    validation_loss: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    epoch_seconds: Optional[list] = None

    def to_dict(self, include_timings: bool = True) -> dict:
        out = {
            "train_loss": self.train_loss,
            "validation_loss": self.validation_loss,
            "stopped_epoch": self.stopped_epoch,
            "best_epoch": self.best_epoch,
        }
        if include_timings and self.epoch_seconds is not None:
            out["epoch_seconds"] = self.epoch_seconds
        return out


class EarlyStopping:
    """Track the best validation loss; stop after ``patience`` epochs without a strict improvement."""

    def __init__(self, patience: int = 5):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best:
            self.best = loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_negatives(
    matrix: SparseClickMatrix,
    n: int,
    rng=None,
    positives: Optional[tuple] = None,
    popularity: Optional[np.ndarray] = None,
) -> tuple:
    """Draw ``n`` unclicked items per positive by rejection sampling.

    ``positives`` defaults to every click stored in ``matrix``; ``matrix``
    always defines which items count as clicked. Returns ``(users, items)``
    arrays grouped by positive: entries ``k*n .. k*n+n-1`` belong to
    positive ``k``. With ``popularity`` weights the proposal distribution is
    proportional to them instead of uniform.
    """
    rng = _as_rng(rng)
    if positives is None:
        positives = matrix.pairs()
    pos_users = np.asarray(positives[0], dtype=np.int64)
    M = matrix.num_items
    lengths = matrix.row_lengths()
    if pos_users.size:
        full = np.unique(pos_users[lengths[pos_users] >= M])
        if full.size:
            raise SamplingError(
                f"user {int(full[0])} has clicked all {M} items; no negatives to sample"
            )
    users = np.repeat(pos_users, n)
    if popularity is not None:
        p = np.asarray(popularity, dtype=np.float64)
        p = p / p.sum()
        cdf = np.cumsum(p)
        draw = lambda size: np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), M - 1)
    else:
        draw = lambda size: rng.integers(0, M, size=size)
    items = draw(users.size)
    todo = np.flatnonzero(matrix.contains(users, items))
    while todo.size:
        items[todo] = draw(todo.size)
        todo = todo[matrix.contains(users[todo], items[todo])]
    return users, items


def make_example(
    matrix: SparseClickMatrix,
    u: int,
    i: int,
    r: int,
    context_cap: Optional[int] = None,
    rng=None,
) -> TrainExample:
    row = matrix.row(u)
    context = row[row != i] if r else row
    if context_cap is not None and context.size > context_cap:
        context = np.sort(_as_rng(rng).choice(context, size=context_cap, replace=False))
    return TrainExample(int(u), int(i), int(r), context.tolist())


def make_batch(
    matrix: SparseClickMatrix,
    users,
    items,
    labels,
    context_cap: Optional[int] = None,
    rng=None,
    exclude_item: Optional[np.ndarray] = None,
) -> ExampleBatch:
    """Vectorized :func:`make_example` over many (u, i, r) triples.

    The candidate item is removed from the context whenever it appears in
    the user's row, which for consistent labels means exactly the positives.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.float64)
    R = matrix.to_csr()
    rows = R[users]
    owner = np.repeat(np.arange(users.size), np.diff(rows.indptr))
    keep = rows.indices != items[owner]
    indices = rows.indices[keep]
    owner = owner[keep]
    counts = np.bincount(owner, minlength=users.size)
    if context_cap is not None and counts.size and counts.max() > context_cap:
        indices, counts = _cap_contexts(indices, counts, context_cap, _as_rng(rng))
    indptr = np.zeros(users.size + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    contexts = sp.csr_matrix(
        (np.ones(indices.size), indices, indptr), shape=(users.size, matrix.num_items)
    )
    return ExampleBatch(users, items, labels, contexts)


def _cap_contexts(indices, counts, cap, rng):
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    chunks, new_counts = [], counts.copy()
    for k in range(counts.size):
        seg = indices[starts[k]:starts[k] + counts[k]]
        if counts[k] > cap:
            seg = np.sort(rng.choice(seg, size=cap, replace=False))
            new_counts[k] = cap
        chunks.append(seg)
    return (np.concatenate(chunks) if chunks else indices), new_counts


def _coerce(batch, num_items) -> ExampleBatch:
    if isinstance(batch, ExampleBatch):
        return batch
    return ExampleBatch.from_examples(list(batch), num_items)


def example_loss(params: ModelParams, example: TrainExample, lam: float = 0.0) -> float:
    """Binary cross-entropy of one example; ``lam`` is accepted for symmetry and unused here."""
    mu = predict_prob(params, example.u, example.i, example.context)
    if example.r:
        return -math.log(max(mu, LOG_EPS))
    return -math.log(max(1.0 - mu, LOG_EPS))


def _touched(batch: ExampleBatch, use_user: bool, use_context: bool) -> tuple:
    h_rows = np.unique(batch.users) if use_user else np.zeros(0, dtype=np.int64)
    w_rows = np.unique(batch.items)
    v_rows = np.unique(batch.contexts.indices) if use_context else np.zeros(0, dtype=np.int64)
    return h_rows, w_rows, v_rows


def loss_and_gradients(
    params: ModelParams,
    batch,
    lam: float = 0.0,
    dropout_rate: float = 0.0,
    rng=None,
    variant: str = "npe",
    need_grad: bool = True,
):
    """Mean batch BCE plus ``lam`` times the squared norm of touched rows, and its gradient."""
    batch = _coerce(batch, params.num_items)
    use_user, use_context = variant_terms(variant)
    act = params.activation
    B, D = len(batch), params.dim
    h_rows, w_rows, v_rows = _touched(batch, use_user, use_context)

    reg = 0.0
    if lam:
        for rows, mat in ((h_rows, params.H), (w_rows, params.W), (v_rows, params.V)):
            reg += float(np.sum(mat[rows].astype(np.float64) ** 2))
        reg *= lam

    if B == 0:
        empty = np.zeros((0, D))
        grads = Gradients(h_rows, empty, w_rows, empty, v_rows, empty) if need_grad else None
        return reg, grads

    h_pre = params.H[batch.users].astype(np.float64)
    w_pre = params.W[batch.items].astype(np.float64)
    h = activate(h_pre, act) if use_user else np.zeros((B, D))
    w = activate(w_pre, act)
    if use_context:
        c_pre = np.asarray(batch.contexts @ params.V.astype(np.float64))
        v = activate(c_pre, act)
    else:
        v = np.zeros((B, D))

    if dropout_rate > 0:
        rng = _as_rng(rng)
        keep = 1.0 - dropout_rate
        mh = (rng.random((B, D)) < keep) / keep
        mw = (rng.random((B, D)) < keep) / keep
        mv = (rng.random((B, D)) < keep) / keep
        h, w, v = h * mh, w * mw, v * mv

    s = np.einsum("bd,bd->b", w, h + v)
    mu = sigmoid(s)
    y = batch.labels
    bce = -(y * np.log(np.maximum(mu, LOG_EPS)) + (1.0 - y) * np.log(np.maximum(1.0 - mu, LOG_EPS)))
    loss = float(bce.mean()) + reg
    if not need_grad:
        return loss, None

    g = (mu - y)[:, None] / B
    dh = g * w
    dw = g * (h + v)
    dv = g * w
    if dropout_rate > 0:
        dh, dw, dv = dh * mh, dw * mw, dv * mv

    grads_w = _scatter_rows(batch.items, dw * activation_mask(w_pre, act), w_rows)
    if use_user:
        grads_h = _scatter_rows(batch.users, dh * activation_mask(h_pre, act), h_rows)
    else:
        grads_h = np.zeros((0, D))
    if use_context:
        dc = dv * activation_mask(c_pre, act)
        grads_v = np.asarray(batch.contexts.T @ dc)[v_rows]
    else:
        grads_v = np.zeros((0, D))

    if lam:
        grads_h = grads_h + 2.0 * lam * params.H[h_rows]
        grads_w = grads_w + 2.0 * lam * params.W[w_rows]
        grads_v = grads_v + 2.0 * lam * params.V[v_rows]
    return loss, Gradients(h_rows, grads_h, w_rows, grads_w, v_rows, grads_v)


def _scatter_rows(index: np.ndarray, values: np.ndarray, rows: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(rows, index)
    onehot = sp.csr_matrix(
        (np.ones(index.size), (pos, np.arange(index.size))), shape=(rows.size, index.size)
    )
    return np.asarray(onehot @ values)


def batch_gradients(params, batch, lam=0.0, dropout_rate=0.0, rng=None, variant="npe") -> Gradients:
    return loss_and_gradients(params, batch, lam, dropout_rate, rng, variant)[1]


def batch_loss(params, batch, lam=0.0, variant="npe") -> float:
    """Deterministic batch objective (dropout off)."""
    return loss_and_gradients(params, batch, lam, variant=variant, need_grad=False)[0]


def adam_step(params: ModelParams, state: AdamState, grads: Gradients, config: TrainConfig) -> tuple:
    """One Adam update applied in place, touching only rows present in ``grads``."""
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for mat, m, v, rows, g in (
        (params.H, state.m[0], state.v[0], grads.H_rows, grads.H_grad),
        (params.W, state.m[1], state.v[1], grads.W_rows, grads.W_grad),
        (params.V, state.m[2], state.v[2], grads.V_rows, grads.V_grad),
    ):
        if rows.size == 0:
            continue
        m[rows] = b1 * m[rows] + (1.0 - b1) * g
        v[rows] = b2 * v[rows] + (1.0 - b2) * g * g
        step = config.learning_rate * (m[rows] / c1) / (np.sqrt(v[rows] / c2) + config.adam_eps)
        mat[rows] = (mat[rows].astype(np.float64) - step).astype(mat.dtype)
    return params, state


def _validation_batch(split: DatasetSplit, matrix: SparseClickMatrix, config: TrainConfig, seed) -> Optional[ExampleBatch]:
    val = split.validation
    if val.num_clicks == 0:
        return None
    rng = np.random.default_rng(seed)
    seen = build_matrix(merge(split.train, val))
    neg_u, neg_i = sample_negatives(seen, config.neg_ratio, rng, positives=(val.users, val.items))
    users = np.concatenate([val.users, neg_u])
    items = np.concatenate([val.items, neg_i])
    labels = np.concatenate([np.ones(val.num_clicks), np.zeros(neg_u.size)])
    return make_batch(matrix, users, items, labels, config.context_cap, rng)


def _chunked_loss(params, batch: ExampleBatch, variant: str, chunk: int = 50_000) -> float:
    total = 0.0
    for start in range(0, len(batch), chunk):
        sl = slice(start, start + chunk)
        sub = ExampleBatch(batch.users[sl], batch.items[sl], batch.labels[sl], batch.contexts[sl])
        total += batch_loss(params, sub, variant=variant) * len(sub)
    return total / len(batch)


ProgressFn = Callable[[int, float, Optional[float], float], None]


def stderr_progress(epoch: int, train_loss: float, val_loss: Optional[float], elapsed: float) -> None:
    val = "nan" if val_loss is None else f"{val_loss:.6f}"
    print(f"epoch {epoch} train_loss {train_loss:.6f} val_loss {val} elapsed {elapsed:.2f}s",
          file=sys.stderr, flush=True)


def train(
    split: DatasetSplit,
    config: TrainConfig,
    progress: Optional[ProgressFn] = None,
    initial: Optional[ModelParams] = None,
) -> tuple:
    """Fit the model on ``split.train``; returns ``(best_params, report)``.

    Each epoch resamples negatives, shuffles positives and negatives
    together and walks the mini-batches. Validation loss is measured on the
    validation positives plus a negative set drawn once up front. Without a
    validation split the last epoch's parameters are returned.
    """
    if split.train.num_clicks == 0:
        raise DataError("empty training split")
    seeds = derive_seeds(config.seed)
    matrix = build_matrix(split.train)
    dtype = np.dtype(config.dtype)
    if initial is None:
        params = init_params(
            matrix.num_users, matrix.num_items, config.dim, config.init_sigma, seeds["init"], dtype=dtype
        )
    else:
        params = initial.copy()
    state = AdamState.zeros_like(params)
    sampler = np.random.default_rng(seeds["sampler"])
    dropout = np.random.default_rng(seeds["dropout"])
    val_batch = _validation_batch(split, matrix, config, seeds["validation"])
    popularity = None
    if config.negative_sampling == "popularity":
        popularity = np.bincount(matrix.indices, minlength=matrix.num_items) + 1.0

    pos_u, pos_i = matrix.pairs()
    stopper = EarlyStopping(config.early_stop_patience)
    report = TrainReport(epoch_seconds=[])
    best = params.copy()
    t0 = time.perf_counter()

    for epoch in range(1, config.max_epochs + 1):
        t_epoch = time.perf_counter()
        neg_u, neg_i = sample_negatives(matrix, config.neg_ratio, sampler, popularity=popularity)
        users = np.concatenate([pos_u, neg_u])
        items = np.concatenate([pos_i, neg_i])
        labels = np.concatenate([np.ones(pos_u.size), np.zeros(neg_u.size)])
        order = sampler.permutation(users.size)
        total = 0.0
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = make_batch(matrix, users[idx], items[idx], labels[idx], config.context_cap, sampler)
            loss, grads = loss_and_gradients(
                params, batch, config.lam, config.dropout_rate, dropout, config.variant
            )
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss {loss} at epoch {epoch}, batch starting {start}")
            adam_step(params, state, grads, config)
            total += loss * idx.size
        train_loss = total / order.size
        if not params.is_finite():
            raise NumericalError(f"non-finite parameters after epoch {epoch}")

        val_loss = _chunked_loss(params, val_batch, config.variant) if val_batch is not None else None
        if val_loss is not None and not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        report.train_loss.append(train_loss)
        report.validation_loss.append(val_loss)
        report.epoch_seconds.append(time.perf_counter() - t_epoch)
        report.stopped_epoch = epoch
        if progress is not None:
            progress(epoch, train_loss, val_loss, time.perf_counter() - t0)

        if val_loss is None:
            best = params
            report.best_epoch = epoch
            continue
        if stopper.update(epoch, val_loss):
            best = params.copy()
            report.best_epoch = epoch
        if stopper.should_stop:
            logger.info("early stop at epoch %d (best %d)", epoch, stopper.best_epoch)
            break

    return (best.copy() if best is params else best), report
