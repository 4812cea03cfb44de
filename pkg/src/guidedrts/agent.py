"""Policy/value network and the masked multi-discrete action head.

The network maps the (h, w, 27) observation through two unpadded convolutions
and a 128-unit fully connected layer to one logit block covering all eight
action components plus a scalar value. Sampling, log-probabilities, and
entropy factorize over the components; invalid entries are driven to exactly
zero probability by a -1e8 logit offset before the softmax.
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .gridrts import mask_component_sizes

MASK_LOGIT_OFFSET = -1e8


def component_slices(height: int = 10, width: int = 10):
    sizes = mask_component_sizes(height, width)
    slices, off = [], 0
    for s in sizes:
        slices.append(slice(off, off + s))
        off += s
    return slices


class Policy:
    """Conv(16,3x3,s2) -> Conv(32,2x2) -> FC 128 -> {action logits, value}."""

    def __init__(self, height: int = 10, width: int = 10, planes: int = 27,
                 seed: int = 0, dtype=np.float32):
        self.height, self.width = height, width
        self.dtype = dtype
        self.slices = component_slices(height, width)
        self.n_logits = sum(mask_component_sizes(height, width))
        rng = np.random.default_rng(seed)
        h1 = (height - 3) // 2 + 1
        w1 = (width - 3) // 2 + 1
        flat = (h1 - 1) * (w1 - 1) * 32

        def orth(shape):
            return nc.orthogonal_init(shape, gain=1.0, rng=rng, dtype=dtype)

        def zeros(*shape):
            return nc.Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

        self.params = {
            "conv1.w": orth((3, 3, planes, 16)), "conv1.b": zeros(16),
            "conv2.w": orth((2, 2, 16, 32)), "conv2.b": zeros(32),
            "fc.w": orth((flat, 128)), "fc.b": zeros(128),
            "pi.w": orth((128, self.n_logits)), "pi.b": zeros(self.n_logits),
            "v.w": orth((128, 1)), "v.b": zeros(1),
        }

    def parameters(self):
        return list(self.params.values())

    def param_names(self):
        return list(self.params.keys())

    def forward(self, obs: np.ndarray | nc.Tensor):
        """Batch forward: obs (B, h, w, planes) -> (logits (B, n), value (B,))."""
        x = obs if isinstance(obs, nc.Tensor) else nc.Tensor(np.asarray(obs, dtype=self.dtype))
        p = self.params
        x = nc.relu(nc.conv2d(x, p["conv1.w"], stride=2) + p["conv1.b"])
        x = nc.relu(nc.conv2d(x, p["conv2.w"], stride=1) + p["conv2.b"])
        x = x.reshape(x.shape[0], -1)
        h = nc.relu(nc.linear(x, p["fc.w"], p["fc.b"]))
        logits = nc.linear(h, p["pi.w"], p["pi.b"])
        value = nc.linear(h, p["v.w"], p["v.b"]).reshape(-1)
        return logits, value

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, d: dict):
        for k, v in self.params.items():
            v.data = np.asarray(d[k], dtype=self.dtype).reshape(v.shape).copy()


class MaskedDistribution:
    """Per-component categorical distributions with invalid entries masked out."""

    def __init__(self, logp: list[nc.Tensor], masks: list[np.ndarray]):
        self.logp = logp  # per component, shape (B, n_c)
        self.masks = masks

    @property
    def probs(self) -> list[np.ndarray]:
        return [np.exp(lp.data) for lp in self.logp]


def masked_distribution(logits: nc.Tensor, mask: np.ndarray,
                        slices=None) -> MaskedDistribution:
    """Split the logit block per component and apply masked log-softmax.

    logits: (B, n) tensor; mask: (B, n) binary. Invalid entries end up with
    probability exactly 0 (softmax of a -1e8 logit underflows).
    """
    if logits.data.ndim == 1:
        logits = logits.reshape(1, -1)
        mask = np.asarray(mask).reshape(1, -1)
    if slices is None:
        slices = _infer_slices(logits.shape[1])
    mask = np.asarray(mask, dtype=bool)
    if not all(mask[:, s].any(axis=1).all() for s in slices):
        raise ValueError("mask has an all-invalid component")
    logp = []
    masks = []
    for s in slices:
        lg = logits[:, s]
        m = mask[:, s]
        masked = lg * m + (1.0 - m) * MASK_LOGIT_OFFSET
        # detached max keeps the log-sum-exp stable without touching gradients
        shift = np.max(masked.data, axis=1, keepdims=True)
        lse = (masked - shift).exp().sum(axis=1, keepdims=True).log() + shift
        logp.append(masked - lse)
        masks.append(m)
    return MaskedDistribution(logp, masks)


def _infer_slices(n_logits: int):
    # solve 2*hw + 29 = n for the square-map case used everywhere here
    hw = (n_logits - 29) // 2
    side = int(round(np.sqrt(hw)))
    return component_slices(side, side)


def sample_and_logprob(dist: MaskedDistribution, rng: np.random.Generator):
    """Sample one action per batch row; returns (actions (B, 8), logp (B,))."""
    batch = dist.logp[0].shape[0]
    actions = np.zeros((batch, len(dist.logp)), dtype=np.int64)
    # accumulate in the distribution's own dtype so the result is bit-equal
    # to logprob_of on the sampled actions
    total = np.zeros(batch, dtype=dist.logp[0].data.dtype)
    for c, lp in enumerate(dist.logp):
        p = np.exp(lp.data)
        cdf = np.cumsum(p, axis=1)
        u = 1.0 - rng.random((batch, 1))  # in (0, 1]: never lands on a zero-mass prefix
        idx = np.argmax(cdf >= u, axis=1)
        actions[:, c] = idx
        total += lp.data[np.arange(batch), idx]
    return actions, total


def logprob_of(dist: MaskedDistribution, actions: np.ndarray) -> nc.Tensor:
    """Joint log-probability (sum over the 8 components) of given actions.

    Masked-out actions come back around -1e8 (the distinguished minimal value).
    """
    actions = np.asarray(actions)
    if actions.ndim == 1:
        actions = actions[None, :]
    total = None
    for c, lp in enumerate(dist.logp):
        picked = lp.gather(actions[:, c])
        total = picked if total is None else total + picked
    return total


def entropy(dist: MaskedDistribution) -> nc.Tensor:
    """Shannon entropy summed over components, valid entries only; shape (B,)."""
    total = None
    for lp, m in zip(dist.logp, dist.masks):
        p = lp.exp()
        h = -((p * lp) * m.astype(lp.data.dtype)).sum(axis=1)
        total = h if total is None else total + h
    return total
