"""Convolutional policy/value network in plain numpy with analytic gradients.

Architecture: valid (unpadded) convolutions with ReLU, flatten, concatenate
the target context vector, one shared ReLU hidden layer, then a linear
policy head (softmax over the 7 actions) and a linear value head.

Activations are kept channels-last internally; inputs arrive as
``(N, C, H, W)`` feature planes. Everything is float64.

Parameters live in one flat vector, laid out layer by layer as
``conv{i}.w (out, in, k, k)``, ``conv{i}.b``, ``fc.w (hidden, flat + ctx)``,
``fc.b``, ``pi.w``, ``pi.b``, ``v.w``, ``v.b``. The flatten order of the last
conv activation is (row, col, channel).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .objective import LossSpec, LossTerms, NonFiniteError, ppo_loss, surrogate_grad
from .scene import NUM_ACTIONS, NUM_CLASSES


@dataclass(frozen=True)
class NetworkSpec:
    input_channels: int
    window: int
    conv_layers: tuple[tuple[int, int, int], ...] = ((16, 3, 1), (32, 3, 1))
    hidden_units: int = 128
    context_units: int = NUM_CLASSES
    action_count: int = NUM_ACTIONS

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple(tuple(int(v) for v in layer) for layer in self.conv_layers))
        if self.input_channels < 1:
            raise ValueError("input_channels must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")
        if self.context_units < 0:
            raise ValueError("context_units must be >= 0")
        if self.action_count != NUM_ACTIONS:
            raise ValueError(f"action_count must be {NUM_ACTIONS}")
        size = self.window
        for i, (out, k, s) in enumerate(self.conv_layers):
            if out < 1 or k < 1 or s < 1:
                raise ValueError(f"conv layer {i}: channels, kernel and stride must be >= 1")
            if k > size:
                raise ValueError(f"conv layer {i}: kernel {k} larger than its {size}x{size} input")
            size = (size - k) // s + 1

    @cached_property
    def conv_geometry(self) -> list[tuple[int, int, int, int, int, int]]:
        """(in_channels, out_channels, kernel, stride, in_size, out_size) per conv layer."""
        geo = []
        c, size = self.input_channels, self.window
        for out, k, s in self.conv_layers:
            new = (size - k) // s + 1
            geo.append((c, out, k, s, size, new))
            c, size = out, new
        return geo

    @property
    def flat_features(self) -> int:
        if not self.conv_layers:
            return self.input_channels * self.window**2
        _, out, _, _, _, size = self.conv_geometry[-1]
        return out * size * size

    @cached_property
    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        for i, (cin, cout, k, _, _, _) in enumerate(self.conv_geometry):
            shapes.append((f"conv{i}.w", (cout, cin, k, k)))
            shapes.append((f"conv{i}.b", (cout,)))
        fan = self.flat_features + self.context_units
        shapes += [
            ("fc.w", (self.hidden_units, fan)),
            ("fc.b", (self.hidden_units,)),
            ("pi.w", (self.action_count, self.hidden_units)),
            ("pi.b", (self.action_count,)),
            ("v.w", (1, self.hidden_units)),
            ("v.b", (1,)),
        ]
        return shapes

    @property
    def parameter_count(self) -> int:
        return sum(math.prod(shape) for _, shape in self.layer_shapes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_layers"] = [list(layer) for layer in self.conv_layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["conv_layers"] = tuple(tuple(layer) for layer in d.get("conv_layers", ()))
        return cls(**d)


@dataclass
class PolicyParams:
    spec: NetworkSpec
    flat: np.ndarray
    _views: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.spec.parameter_count,):
            raise ValueError(f"expected {self.spec.parameter_count} parameters, got {self.flat.shape}")

    @property
    def parameter_count(self) -> int:
        return self.flat.size

    def layers(self) -> dict[str, np.ndarray]:
        """Named views into ``flat`` (writes go through to the vector)."""
        if self._views is None or not np.shares_memory(next(iter(self._views.values())), self.flat):
            self._views = _split(self.flat, self.spec)
        return self._views

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.spec, self.flat.copy())


def _split(flat: np.ndarray, spec: NetworkSpec) -> dict[str, np.ndarray]:
    out, pos = {}, 0
    for name, shape in spec.layer_shapes:
        n = math.prod(shape)
        out[name] = flat[pos : pos + n].reshape(shape)
        pos += n
    return out


def init_params(spec: NetworkSpec, seed: int) -> PolicyParams:
    """Fan-in scaled uniform weights, zero biases; deterministic in ``seed``.

    Weights are U(-b, b) with b = gain * sqrt(3 / fan_in); gain is sqrt(2) for
    ReLU layers, 0.01 for the policy head and 1 for the value head.
    """
    rng = np.random.default_rng(seed)
    flat = np.zeros(spec.parameter_count)
    views = _split(flat, spec)
    gains = {"pi.w": 0.01, "v.w": 1.0}
    for name, shape in spec.layer_shapes:
        if not name.endswith(".w"):
            continue
        fan_in = math.prod(shape[1:])
        bound = gains.get(name, math.sqrt(2.0)) * math.sqrt(3.0 / fan_in)
        views[name][...] = rng.uniform(-bound, bound, size=shape)
    return PolicyParams(spec, flat)


@dataclass(frozen=True)
class PolicyOutput:
    action_probs: np.ndarray
    logits: np.ndarray
    value: np.ndarray
    entropy: np.ndarray


# --------------------------------------------------------------------------- forward


def _im2col(x: np.ndarray, k: int, s: int) -> np.ndarray:
    """(N, H, W, C) -> (N, Ho, Wo, C*k*k) patches, flattened in (C, k, k) order."""
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]  # N, Ho, Wo, C, k, k
    n, ho, wo = win.shape[:3]
    return win.reshape(n, ho, wo, -1)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_inputs(spec: NetworkSpec, features: np.ndarray, context: np.ndarray):
    features = np.asarray(features, dtype=np.float64)
    context = np.asarray(context, dtype=np.float64)
    single = features.ndim == 3
    if single:
        features = features[None]
        context = context.reshape(1, -1)
    expected = (spec.input_channels, spec.window, spec.window)
    if features.ndim != 4 or features.shape[1:] != expected:
        raise ValueError(f"features shape {features.shape[1:] if features.ndim == 4 else features.shape} "
                         f"does not match network input {expected}")
    if context.shape != (features.shape[0], spec.context_units):
        raise ValueError(f"context shape {context.shape} does not match ({features.shape[0]}, {spec.context_units})")
    return features, context, single


def _forward(params: PolicyParams, features: np.ndarray, context: np.ndarray):
    spec = params.spec
    p = params.layers()
    x = features.transpose(0, 2, 3, 1)  # channels-last
    n = x.shape[0]
    cache = {"conv": []}
    for i, (_, cout, k, s, _, _) in enumerate(spec.conv_geometry):
        cols = _im2col(x, k, s)
        pre = cols @ p[f"conv{i}.w"].reshape(cout, -1).T + p[f"conv{i}.b"]
        cache["conv"].append((x, cols, pre))
        x = np.maximum(pre, 0.0)
    flat = np.concatenate([x.reshape(n, -1), context], axis=1)
    pre_h = flat @ p["fc.w"].T + p["fc.b"]
    h = np.maximum(pre_h, 0.0)
    logits = h @ p["pi.w"].T + p["pi.b"]
    value = (h @ p["v.w"].T + p["v.b"])[:, 0]
    cache.update(last=x, flat=flat, pre_h=pre_h, h=h)
    return logits, value, cache


def forward(params: PolicyParams, features: np.ndarray, context: np.ndarray) -> PolicyOutput:
    """Action distribution and value. Accepts one (C, H, W) input or a batch."""
    features, context, single = _check_inputs(params.spec, features, context)
    logits, value, _ = _forward(params, features, context)
    logp = _log_softmax(logits)
    probs = np.exp(logp)
    entropy = -(probs * logp).sum(axis=1)
    out = PolicyOutput(probs, logits, value, entropy)
    if single:
        out = PolicyOutput(probs[0], logits[0], value[0], entropy[0])
    return out


def sample_action(output, rng: np.random.Generator) -> tuple[int, float]:
    """Inverse-CDF draw over the fixed action order; returns (action, log-probability).

    ``output`` is a single-state PolicyOutput or a bare probability vector.
    """
    probs = np.asarray(getattr(output, "action_probs", output))
    u = rng.random()
    a = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    if a >= probs.size:  # u above a cumsum that rounded below 1
        a = int(np.flatnonzero(probs > 0)[-1])
    return a, float(np.log(probs[a]))


def greedy_action(output: PolicyOutput) -> int:
    return int(np.argmax(output.action_probs))


# --------------------------------------------------------------------------- backward


@dataclass(frozen=True)
class Minibatch:
    features: np.ndarray
    context: np.ndarray
    actions: np.ndarray
    old_log_prob: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.actions)


def _finite(name: str, arr: np.ndarray):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {name}")


def evaluate_batch(params: PolicyParams, batch: Minibatch, loss_spec: LossSpec):
    """Forward pass on a minibatch: (log-probs of taken actions, values, entropies, cache, log-softmax)."""
    features, context, _ = _check_inputs(params.spec, batch.features, batch.context)
    logits, value, cache = _forward(params, features, context)
    logp = _log_softmax(logits)
    idx = np.arange(len(batch))
    new_lp = logp[idx, batch.actions]
    probs = np.exp(logp)
    entropy = -(probs * logp).sum(axis=1)
    return new_lp, value, entropy, cache, logp


def minibatch_loss(params: PolicyParams, batch: Minibatch, loss_spec: LossSpec) -> LossTerms:
    new_lp, value, entropy, _, _ = evaluate_batch(params, batch, loss_spec)
    return ppo_loss(new_lp, batch.old_log_prob, batch.advantages, value, batch.returns, entropy, loss_spec)


def backward(params: PolicyParams, batch: Minibatch, loss_spec: LossSpec) -> tuple[np.ndarray, LossTerms]:
    """Exact gradient of the composite PPO loss (mean over the minibatch) w.r.t. ``params.flat``."""
    spec = params.spec
    p = params.layers()
    n = len(batch)
    new_lp, value, entropy, cache, logp = evaluate_batch(params, batch, loss_spec)
    terms = ppo_loss(new_lp, batch.old_log_prob, batch.advantages, value, batch.returns, entropy, loss_spec)
    probs = np.exp(logp)

    # d loss / d logits
    g_lp = surrogate_grad(new_lp, batch.old_log_prob, batch.advantages, loss_spec.clip_epsilon)
    d_logits = -probs * g_lp[:, None]
    d_logits[np.arange(n), batch.actions] += g_lp
    # entropy: dH/dz_j = -p_j (log p_j + H), loss carries -c_e * mean(H)
    d_logits += (loss_spec.entropy_coef / n) * probs * (logp + entropy[:, None])
    d_value = (2.0 * loss_spec.value_coef / n) * (value - batch.returns)

    grads = {}
    h = cache["h"]
    grads["pi.w"] = d_logits.T @ h
    grads["pi.b"] = d_logits.sum(axis=0)
    grads["v.w"] = d_value[None, :] @ h
    grads["v.b"] = np.array([d_value.sum()])
    d_h = d_logits @ p["pi.w"] + d_value[:, None] * p["v.w"]
    d_pre_h = d_h * (cache["pre_h"] > 0)
    _finite("fc", d_pre_h)
    grads["fc.w"] = d_pre_h.T @ cache["flat"]
    grads["fc.b"] = d_pre_h.sum(axis=0)

    if spec.conv_layers:
        d_x = (d_pre_h @ p["fc.w"][:, : spec.flat_features]).reshape(cache["last"].shape)
        for i in reversed(range(len(spec.conv_layers))):
            cin, cout, k, s, _, size = spec.conv_geometry[i]
            x_in, cols, pre = cache["conv"][i]
            d_pre = d_x * (pre > 0)
            _finite(f"conv{i}", d_pre)
            d2 = d_pre.reshape(-1, cout)
            grads[f"conv{i}.w"] = (d2.T @ cols.reshape(-1, cin * k * k)).reshape(cout, cin, k, k)
            grads[f"conv{i}.b"] = d2.sum(axis=0)
            if i == 0:
                break
            d_cols = (d2 @ p[f"conv{i}.w"].reshape(cout, -1)).reshape(n, size, size, cin, k, k)
            d_x = np.zeros_like(x_in)
            span = s * (size - 1) + 1
            for a in range(k):
                for b in range(k):
                    d_x[:, a : a + span : s, b : b + span : s, :] += d_cols[..., a, b]

    flat = np.concatenate([grads[name].ravel() for name, _ in spec.layer_shapes])
    _finite("gradient", flat)
    return flat, terms
