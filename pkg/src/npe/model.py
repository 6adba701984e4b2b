"""Parameters and forward pass of the two-term click model.

A click probability is ``sigmoid(h_u . w_i + w_i . v_c)`` where ``h_u``,
``w_i`` are activated user/item embedding rows and ``v_c`` is the activated
sum of the context rows of every other item the user clicked.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

ACTIVATIONS = ("relu", "identity")
VARIANTS = ("npe", "mf", "embedding")
MAGIC = b"NPE1"


def variant_terms(variant: str) -> tuple:
    """``(use_user_term, use_context_term)`` for a model variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return variant != "embedding", variant != "mf"


def activate(x: np.ndarray, activation: str = "relu") -> np.ndarray:
    if activation == "relu":
        return np.maximum(x, 0.0)
    if activation == "identity":
        return x
    raise ValueError(f"unknown activation {activation!r}")


def activation_mask(x: np.ndarray, activation: str = "relu") -> np.ndarray:
    """Derivative of the activation, evaluated at pre-activation ``x``."""
    if activation == "relu":
        return (x > 0).astype(np.float64)
    return np.ones_like(x, dtype=np.float64)


def sigmoid(s):
    arr = np.asarray(s, dtype=np.float64)
    flat = np.atleast_1d(arr)
    # split by sign so exp never overflows
    out = np.empty_like(flat)
    pos = flat >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    e = np.exp(flat[~pos])
    out[~pos] = e / (1.0 + e)
    return out.reshape(arr.shape) if arr.ndim else float(out[0])


@dataclass
class ModelParams:
    """The whole learned state: user embeddings H, item embeddings W, item contexts V."""

    H: np.ndarray
    W: np.ndarray
    V: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.H.ndim != 2 or self.W.ndim != 2 or self.V.ndim != 2:
            raise ValueError("parameter matrices must be 2-D")
        D = self.H.shape[1]
        if self.W.shape != self.V.shape or self.W.shape[1] != D:
            raise ValueError(
                f"shape mismatch: H {self.H.shape}, W {self.W.shape}, V {self.V.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def num_users(self) -> int:
        return self.H.shape[0]

    @property
    def num_items(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.H.copy(), self.W.copy(), self.V.copy(), self.activation)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.H).all() and np.isfinite(self.W).all() and np.isfinite(self.V).all())


@dataclass
class HiddenTriple:
    h_u: np.ndarray
    w_i: np.ndarray
    v_c: np.ndarray


def init_params(
    N: int,
    M: int,
    D: int,
    sigma: float = 0.01,
    seed: Union[int, np.random.SeedSequence, None] = 0,
    dtype=np.float32,
    activation: str = "relu",
) -> ModelParams:
    """Draw H, W, V i.i.d. from Normal(0, sigma^2), in that order."""
    if min(N, M, D) < 1:
        raise ValueError("N, M and D must be at least 1")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng(seed)
    H = rng.normal(0.0, sigma, size=(N, D)).astype(dtype)
    W = rng.normal(0.0, sigma, size=(M, D)).astype(dtype)
    V = rng.normal(0.0, sigma, size=(M, D)).astype(dtype)
    return ModelParams(H, W, V, activation)


def _check(params: ModelParams, u: int, i: int, context: Sequence[int]) -> np.ndarray:
    if not 0 <= u < params.num_users:
        raise IndexError(f"user index {u} out of range [0, {params.num_users})")
    if not 0 <= i < params.num_items:
        raise IndexError(f"item index {i} out of range [0, {params.num_items})")
    ctx = np.asarray(context, dtype=np.int64).reshape(-1)
    if ctx.size and (ctx.min() < 0 or ctx.max() >= params.num_items):
        raise IndexError("context item index out of range")
    return ctx


def context_vector(params: ModelParams, context: Sequence[int]) -> np.ndarray:
    """Activated sum of the context rows; zero for an empty context."""
    ctx = np.asarray(context, dtype=np.int64).reshape(-1)
    pre = params.V[ctx].astype(np.float64).sum(axis=0) if ctx.size else np.zeros(params.dim)
    return activate(pre, params.activation)


def hidden(params: ModelParams, u: int, i: int, context: Sequence[int]) -> HiddenTriple:
    ctx = _check(params, u, i, context)
    h = activate(params.H[u].astype(np.float64), params.activation)
    w = activate(params.W[i].astype(np.float64), params.activation)
    return HiddenTriple(h, w, context_vector(params, ctx))


def score(params: ModelParams, u: int, i: int, context: Sequence[int]) -> float:
    """Logit ``h_u . w_i + w_i . v_c``."""
    t = hidden(params, u, i, context)
    return float(t.h_u @ t.w_i + t.w_i @ t.v_c)


def predict_prob(params: ModelParams, u: int, i: int, context: Sequence[int]) -> float:
    return sigmoid(score(params, u, i, context))


def save_checkpoint(
    path: Union[str, os.PathLike],
    params: ModelParams,
    id_map: Optional[str] = None,
    extra: Optional[dict] = None,
) -> None:
    """Write ``NPE1`` + uint32 header length + JSON header + float32 H, W, V."""
    header = {
        "N": params.num_users,
        "M": params.num_items,
        "D": params.dim,
        "activation": params.activation,
        "id_map": id_map,
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for mat in (params.H, params.W, params.V):
            fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def load_checkpoint(path: Union[str, os.PathLike]) -> tuple:
    """Read a checkpoint; returns ``(params, header)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[4:8])
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: corrupt header: {exc}") from None
    N, M, D = header["N"], header["M"], header["D"]
    body = raw[8 + hlen:]
    expected = 4 * D * (N + 2 * M)
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} bytes of weights, found {len(body)}")
    flat = np.frombuffer(body, dtype="<f4").astype(np.float32)
    H = flat[:N * D].reshape(N, D)
    W = flat[N * D:(N + M) * D].reshape(M, D)
    V = flat[(N + M) * D:].reshape(M, D)
    return ModelParams(H, W, V, header.get("activation", "relu")), header
