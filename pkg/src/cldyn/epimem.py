"""Episodic memory of mode descriptors with a truncated stick-breaking prior."""
from __future__ import annotations

import hashlib
import logging
import math

import numpy as np

from . import tensorcore as tc
from .tensorcore import Tensor

logger = logging.getLogger(__name__)

KL_CAP = 1e6
MEMORY_MODES = ("learned", "zeros", "ones", "twos")


class FrozenMemoryError(RuntimeError):
    pass


class EpisodicMemory:
    """``R`` slots of ``K``-dimensional mode descriptors.

    Parameters
    ----------
    slots : array of shape (R, K)
    alpha0 : float
        Concentration of the stick-breaking prior over slot usage.
    trainable : bool
        Whether gradient steps may move the slots.
    similarity : {"dot", "cosine", "rbf"}
    """

    def __init__(self, slots, alpha0=1.0, trainable=True, similarity="dot"):
        slots = np.array(slots, dtype=np.float64)
        if slots.ndim != 2 or slots.shape[0] < 1:
            raise ValueError("slots must be an (R, K) matrix with R >= 1")
        if not np.all(np.isfinite(slots)):
            raise ValueError("slots must be finite")
        if alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if similarity not in ("dot", "cosine", "rbf"):
            raise ValueError(f"unknown similarity {similarity!r}")
        self.slots = Tensor(slots, requires_grad=trainable, name="memory.slots")
        self.alpha0 = float(alpha0)
        self.trainable = bool(trainable)
        self.write_enabled = True
        self.similarity = similarity

    @classmethod
    def initialize(cls, R, K, mode="learned", alpha0=1.0, rng=None, scale=0.1, similarity="dot"):
        """Fresh memory; constant modes give frozen, untrainable slots."""
        if mode == "learned":
            rng = np.random.default_rng(rng)
            return cls(rng.normal(0.0, scale, (R, K)), alpha0, True, similarity)
        if mode not in MEMORY_MODES:
            raise ValueError(f"unknown memory mode {mode!r}")
        value = {"zeros": 0.0, "ones": 1.0, "twos": 2.0}[mode]
        mem = cls(np.full((R, K), value), alpha0, False, similarity)
        mem.freeze()
        return mem

    @property
    def R(self):
        return self.slots.shape[0]

    @property
    def K(self):
        return self.slots.shape[1]

    def freeze(self):
        self.write_enabled = False
        return self

    def thaw(self):
        self.write_enabled = True
        return self

    def digest(self):
        h = hashlib.sha256(self.slots.data.tobytes())
        h.update(repr((self.alpha0, self.write_enabled)).encode())
        return h.hexdigest()

    def to_dict(self):
        return {"R": self.R, "K": self.K, "alpha0": self.alpha0, "slots": self.slots.data.tolist(),
                "write_enabled": self.write_enabled, "trainable": self.trainable,
                "similarity": self.similarity}

    @classmethod
    def from_dict(cls, d):
        mem = cls(np.array(d["slots"]).reshape(d["R"], d["K"]), d["alpha0"], d["trainable"],
                  d.get("similarity", "dot"))
        mem.write_enabled = d["write_enabled"]
        return mem


def similarity_logits(descriptor, slots, kind="dot"):
    """Scores ``<m_r, d>`` of shape (..., R)."""
    d = tc.as_tensor(descriptor)
    m = tc.as_tensor(slots)
    K = m.shape[-1]
    if d.shape[-1] != K:
        raise ValueError(f"descriptor dim {d.shape[-1]} != slot dim {K}")
    if kind == "dot":
        return tc.dense(d, tc.transpose(m)) * (1.0 / math.sqrt(K))
    if kind == "cosine":
        dn = d / tc.sqrt((d * d).sum(axis=-1, keepdims=True) + 1e-12)
        mn = m / tc.sqrt((m * m).sum(axis=-1, keepdims=True) + 1e-12)
        return tc.dense(dn, tc.transpose(mn))
    if kind == "rbf":
        dd = (d * d).sum(axis=-1, keepdims=True)
        mm = tc.reshape((m * m).sum(axis=-1), (m.shape[0],))
        cross = tc.dense(d, tc.transpose(m))
        return -(dd - 2.0 * cross + mm) * (1.0 / K)
    raise ValueError(f"unknown similarity {kind!r}")


def attention(descriptor, mem: EpisodicMemory):
    """Softmax attention of a descriptor (or batch of them) over memory slots."""
    return tc.softmax(similarity_logits(descriptor, mem.slots, mem.similarity), axis=-1)


def write(mem: EpisodicMemory, descriptor, weights):
    """Move every slot toward ``descriptor`` by its own attention weight.

    Operates on raw arrays: the update is an assignment outside the graph.
    """
    if not mem.write_enabled:
        raise FrozenMemoryError("memory is frozen")
    d = np.asarray(getattr(descriptor, "data", descriptor), dtype=np.float64)
    w = np.asarray(getattr(weights, "data", weights), dtype=np.float64)
    if w.shape != (mem.R,) or d.shape != (mem.K,):
        raise ValueError("write expects weights of shape (R,) and a descriptor of shape (K,)")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
        raise ValueError("weights must lie on the simplex")
    old = mem.slots.data
    mem.slots.data = (1.0 - w)[:, None] * old + w[:, None] * d[None, :]
    return mem


def stick_prior(alpha0, R):
    """Expected truncated stick-breaking weights; the last slot takes the remainder."""
    if alpha0 <= 0 or R < 1:
        raise ValueError("need alpha0 > 0 and R >= 1")
    frac = 1.0 / (1.0 + alpha0)
    rest = alpha0 / (1.0 + alpha0)
    pi = np.empty(R)
    pi[:-1] = frac * rest ** np.arange(R - 1)
    pi[-1] = rest ** (R - 1)
    return pi


def sample_gem(alpha0, R, rng, size=None):
    """Draws of truncated GEM weights; the last stick fraction is fixed at 1."""
    rng = np.random.default_rng(rng)
    shape = (() if size is None else (size,)) + (R,)
    v = rng.beta(1.0, alpha0, shape)
    v[..., -1] = 1.0
    left = np.cumprod(1.0 - v, axis=-1)
    pi = v.copy()
    pi[..., 1:] *= left[..., :-1]
    return pi


def dp_kl(w, pi):
    """Categorical KL(w || pi) over the last axis, with 0 log 0 = 0.

    ``w`` may be a tensor so the penalty is differentiable.
    """
    w = tc.as_tensor(w)
    pi = np.asarray(pi, dtype=np.float64)
    if w.shape[-1] != pi.shape[-1]:
        raise ValueError("w and pi must have the same length")
    wd = w.data
    support = wd > 0
    if np.any(support & (pi <= 0)):
        logger.warning("dp_kl: prior mass zero where weights are positive; capping at %g", KL_CAP)
        return tc.Tensor(np.full(wd.shape[:-1], KL_CAP))
    safe_w = Tensor(np.where(support, 0.0, 1.0)) + w
    log_ratio = tc.log(safe_w) - np.log(np.where(pi > 0, pi, 1.0))
    return (w * log_ratio).sum(axis=-1)
