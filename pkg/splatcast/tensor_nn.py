# Copyright 2026-present The splatcast authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Small differentiable building blocks with hand-written adjoints.

Every forward function here returns its output together with whatever the
matching backward function needs; nothing is recorded on a tape.
"""
import dataclasses
import logging
import math
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.special import expit

from splatcast.errors import ConfigurationError, ShapeMismatchError

_log = logging.getLogger(__name__)

sigmoid = expit

LearningRate = Union[float, Callable[[int], float]]


# Random numbers.


def make_rng(seed: int) -> np.random.Generator:
    """A PCG64 generator; the same seed always yields the same stream."""
    return np.random.Generator(np.random.PCG64(seed))


def rng_state(rng: np.random.Generator) -> Dict[str, Any]:
    return dict(rng.bit_generator.state)


def restore_rng(state: Dict[str, Any]) -> np.random.Generator:
    bit_generator = np.random.PCG64()
    bit_generator.state = state
    return np.random.Generator(bit_generator)


# Positional encoding.


def positional_encoding(x: np.ndarray, num_frequencies: int) -> np.ndarray:
    """Encode each component of `x` as ``sin(2ˡπx), cos(2ˡπx)`` for
    ``l = 0 … L−1``.

    The output has ``2·L·n`` columns for ``n`` input columns, grouped per
    input component.
    """
    if num_frequencies < 1:
        raise ConfigurationError("positional encoding needs at least one frequency")
    x = np.asarray(x)
    freqs = (2.0 ** np.arange(num_frequencies) * math.pi).astype(x.dtype)
    arg = x[..., :, None] * freqs
    out = np.stack([np.sin(arg), np.cos(arg)], axis=-1)
    return out.reshape(*x.shape[:-1], 2 * num_frequencies * x.shape[-1])


def positional_encoding_backward(
    x: np.ndarray, num_frequencies: int, dout: np.ndarray
) -> np.ndarray:
    freqs = (2.0 ** np.arange(num_frequencies) * math.pi).astype(x.dtype)
    arg = x[..., :, None] * freqs
    grad = dout.reshape(*x.shape, num_frequencies, 2)
    return np.sum((grad[..., 0] * np.cos(arg) - grad[..., 1] * np.sin(arg)) * freqs, axis=-1)


# Multilayer perceptron.


class Mlp:
    """A ReLU multilayer perceptron with a linear head.

    :Parameters:
      - `in_dim`, `out_dim`: input and output widths
      - `width`: hidden width
      - `depth`: number of hidden layers; 0 gives a single linear layer
      - `skip` (optional): hidden layer that also receives the raw input
      - `rng` (optional): generator for He-normal initialization
      - `zero_head`: start the head weights at zero so the output is the
        head bias for every input
      - `head_bias`: initial value of every head bias
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        width: int = 128,
        depth: int = 8,
        skip: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
        dtype: type = np.float32,
        zero_head: bool = False,
        head_bias: float = 0.0,
    ) -> None:
        if skip is not None and not 0 < skip < depth:
            raise ConfigurationError(f"skip layer {skip} must lie strictly inside depth {depth}")
        rng = rng if rng is not None else make_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.width = width
        self.depth = depth
        self.skip = skip
        self.params: Dict[str, np.ndarray] = {}
        fan_in = in_dim
        for j in range(depth):
            if j == skip:
                fan_in += in_dim
            std = math.sqrt(2.0 / fan_in)
            self.params[f"w{j}"] = rng.normal(0.0, std, (fan_in, width)).astype(dtype)
            self.params[f"b{j}"] = np.zeros(width, dtype=dtype)
            fan_in = width
        if zero_head:
            self.params["w_head"] = np.zeros((fan_in, out_dim), dtype=dtype)
        else:
            std = math.sqrt(1.0 / fan_in)
            self.params["w_head"] = rng.normal(0.0, std, (fan_in, out_dim)).astype(dtype)
        self.params["b_head"] = np.full(out_dim, head_bias, dtype=dtype)

    @property
    def dtype(self) -> np.dtype:
        return self.params["w_head"].dtype

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray]]]:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatchError(
                f"Mlp expects input of shape (n, {self.in_dim}), got {x.shape}"
            )
        x = x.astype(self.dtype, copy=False)
        cache = []
        h = x
        for j in range(self.depth):
            if j == self.skip:
                h = np.concatenate([h, x], axis=1)
            z = h @ self.params[f"w{j}"] + self.params[f"b{j}"]
            cache.append((h, z))
            h = np.maximum(z, 0)
        cache.append((h, h))
        return h @ self.params["w_head"] + self.params["b_head"], cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(
        self, cache: List[Tuple[np.ndarray, np.ndarray]], dy: np.ndarray
    ) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        """Return ``(∂loss/∂input, {param name: ∂loss/∂param})``."""
        grads: Dict[str, np.ndarray] = {}
        h_last = cache[-1][0]
        if dy.shape != (h_last.shape[0], self.out_dim):
            raise ShapeMismatchError(f"Mlp output gradient has shape {dy.shape}")
        dy = dy.astype(self.dtype, copy=False)
        grads["w_head"] = h_last.T @ dy
        grads["b_head"] = dy.sum(axis=0)
        dh = dy @ self.params["w_head"].T
        dx_skip = None
        for j in reversed(range(self.depth)):
            h_in, z = cache[j]
            dz = dh * (z > 0)
            grads[f"w{j}"] = h_in.T @ dz
            grads[f"b{j}"] = dz.sum(axis=0)
            dh = dz @ self.params[f"w{j}"].T
            if j == self.skip:
                dx_skip = dh[:, -self.in_dim :]
                dh = dh[:, : -self.in_dim]
        if dx_skip is not None:
            dh = dh + dx_skip
        return dh, grads

    def parameters(self) -> Dict[str, np.ndarray]:
        """The live parameter arrays, keyed by layer name."""
        return self.params

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, value in state.items():
            if name not in self.params or self.params[name].shape != value.shape:
                raise ShapeMismatchError(f"Mlp parameter {name} does not fit this network")
            self.params[name][...] = value


def mlp_forward(mlp: Mlp, x: np.ndarray) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray]]]:
    return mlp.forward(x)


def mlp_backward(
    mlp: Mlp, cache: List[Tuple[np.ndarray, np.ndarray]], dy: np.ndarray
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    return mlp.backward(cache, dy)


# Multi-resolution hash encoding.

_PRIMES = (np.uint64(1), np.uint64(2654435761), np.uint64(805459861))
_CORNERS = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64)


@dataclasses.dataclass
class _HashCache:
    indices: List[np.ndarray]
    weights: List[np.ndarray]


class HashGrid:
    """Multi-resolution hash encoding over an axis-aligned box.

    Level ``l`` has ``floor(base · growthˡ)`` cells per axis. A level whose
    vertex count fits the table is indexed densely; larger levels hash the
    integer vertex coordinates with the usual XOR-of-primes scheme.
    """

    def __init__(
        self,
        bbox: np.ndarray,
        num_levels: int = 8,
        base_resolution: int = 16,
        growth: float = 1.5,
        features: int = 2,
        log2_table: int = 14,
        rng: Optional[np.random.Generator] = None,
        dtype: type = np.float32,
    ) -> None:
        bbox = np.asarray(bbox, dtype=np.float64)
        if bbox.shape != (2, 3) or np.any(bbox[1] <= bbox[0]):
            raise ConfigurationError("hash grid box must be [[min xyz], [max xyz]] with max > min")
        self.resolutions = [
            int(math.floor(base_resolution * growth**level)) for level in range(num_levels)
        ]
        if any(b <= a for a, b in zip(self.resolutions, self.resolutions[1:])):
            raise ConfigurationError(
                f"hash grid resolutions must increase strictly: {self.resolutions}"
            )
        rng = rng if rng is not None else make_rng(0)
        self.bbox = bbox
        self.num_levels = num_levels
        self.features = features
        self.table_size = 2**log2_table
        self.params = {
            "tables": rng.uniform(
                -1e-4, 1e-4, (num_levels, self.table_size, features)
            ).astype(dtype)
        }

    @property
    def out_dim(self) -> int:
        return self.num_levels * self.features

    def corner_index(self, level: int, vertex: np.ndarray) -> np.ndarray:
        """Table row for integer vertex coordinates ``(..., 3)`` on `level`."""
        res = self.resolutions[level] + 1
        vertex = vertex.astype(np.int64)
        if res**3 <= self.table_size:
            return vertex[..., 0] + res * vertex[..., 1] + res * res * vertex[..., 2]
        v = vertex.astype(np.uint64)
        hashed = (v[..., 0] * _PRIMES[0]) ^ (v[..., 1] * _PRIMES[1]) ^ (v[..., 2] * _PRIMES[2])
        return (hashed % np.uint64(self.table_size)).astype(np.int64)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, _HashCache]:
        tables = self.params["tables"]
        lo, hi = self.bbox
        unit = np.clip((np.asarray(x, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
        out = np.empty((unit.shape[0], self.out_dim), dtype=tables.dtype)
        cache = _HashCache([], [])
        for level, res in enumerate(self.resolutions):
            pos = unit * res
            base = np.minimum(np.floor(pos), res - 1).astype(np.int64)
            frac = pos - base
            vertices = base[:, None, :] + _CORNERS[None, :, :]
            upper = _CORNERS[None, :, :] == 1
            weights = np.prod(np.where(upper, frac[:, None, :], 1 - frac[:, None, :]), axis=-1)
            weights = weights.astype(tables.dtype)
            idx = self.corner_index(level, vertices)
            out[:, level * self.features : (level + 1) * self.features] = np.einsum(
                "nc,ncf->nf", weights, tables[level][idx]
            )
            cache.indices.append(idx)
            cache.weights.append(weights)
        return out, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: _HashCache, dfeat: np.ndarray) -> Dict[str, np.ndarray]:
        dtables = np.zeros_like(self.params["tables"])
        for level in range(self.num_levels):
            g = dfeat[:, level * self.features : (level + 1) * self.features]
            contrib = cache.weights[level][:, :, None] * g[:, None, :]
            np.add.at(
                dtables[level], cache.indices[level].ravel(), contrib.reshape(-1, self.features)
            )
        return {"tables": dtables}


def hash_lookup(grid: HashGrid, x: np.ndarray) -> np.ndarray:
    return grid(x)


# Adam.


@dataclasses.dataclass
class AdamState:
    """Moments and step count of one parameter tensor."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-15


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter value and
    advances `state`.
    """
    if grad.shape != param.shape:
        raise ShapeMismatchError(
            f"gradient shape {grad.shape} does not match parameter {param.shape}"
        )
    grad = grad.astype(param.dtype, copy=False)
    state.step += 1
    state.m = BETA1 * state.m + (1 - BETA1) * grad
    state.v = BETA2 * state.v + (1 - BETA2) * grad * grad
    m_hat = state.m / (1 - BETA1**state.step)
    v_hat = state.v / (1 - BETA2**state.step)
    return (param - lr * m_hat / (np.sqrt(v_hat) + EPSILON)).astype(param.dtype, copy=False)


def exponential_lr(initial: float, final_factor: float, total_steps: int) -> Callable[[int], float]:
    """Learning rate decaying exponentially to ``initial · final_factor``."""

    def schedule(step: int) -> float:
        if total_steps <= 0:
            return initial
        return initial * final_factor ** min(1.0, step / total_steps)

    return schedule


class Adam:
    """Adam over a named group of parameter arrays, updated in place.

    :Parameters:
      - `params`: mapping of name to the live parameter array
      - `lrs`: mapping of name to a learning rate or a schedule taking the
        optimizer step
    """

    def __init__(self, params: Dict[str, np.ndarray], lrs: Dict[str, LearningRate]) -> None:
        missing = set(params) - set(lrs)
        if missing:
            raise ConfigurationError(f"no learning rate for {sorted(missing)}")
        self.params = params
        self.lrs = dict(lrs)
        self.states = {name: AdamState.like(value) for name, value in params.items()}
        self.iteration = 0
        self.skipped = 0

    def lr(self, name: str) -> float:
        rate = self.lrs[name]
        return rate(self.iteration) if callable(rate) else float(rate)

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        for name, grad in grads.items():
            if name not in self.params:
                continue
            if not np.all(np.isfinite(grad)):
                self.skipped += 1
                _log.warning(
                    "skipping non-finite gradient for %s (skipped %d so far)", name, self.skipped
                )
                continue
            param = self.params[name]
            param[...] = adam_step(self.states[name], param, grad, self.lr(name))
        self.iteration += 1

    def rebind(
        self, name: str, param: np.ndarray, keep: Optional[np.ndarray] = None, extra: int = 0
    ) -> None:
        """Point `name` at a resized array, carrying moments across.

        `keep` selects surviving rows of the old moments; `extra` zero rows
        are appended after them.
        """
        state = self.states[name]
        m, v = state.m, state.v
        if keep is not None:
            m, v = m[keep], v[keep]
        if extra:
            pad = np.zeros((extra,) + m.shape[1:], dtype=m.dtype)
            m = np.concatenate([m, pad])
            v = np.concatenate([v, pad])
        if m.shape != param.shape:
            raise ShapeMismatchError(f"resized parameter {name} does not match its moments")
        self.params[name] = param
        self.states[name] = AdamState(m, v, state.step)

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Moments and step counts as a flat tensor table:
        ``<name>/m``, ``<name>/v``, ``<name>/step`` plus ``iteration`` and
        ``skipped``.
        """
        table: Dict[str, np.ndarray] = {
            "iteration": np.array(self.iteration, dtype=np.int64),
            "skipped": np.array(self.skipped, dtype=np.int64),
        }
        for name, state in self.states.items():
            table[f"{name}/m"] = state.m.copy()
            table[f"{name}/v"] = state.v.copy()
            table[f"{name}/step"] = np.array(state.step, dtype=np.int64)
        return table

    def load_state_dict(self, table: Dict[str, np.ndarray]) -> None:
        self.iteration = int(table["iteration"])
        self.skipped = int(table["skipped"])
        for name, param in self.params.items():
            if f"{name}/m" not in table:
                continue
            m = table[f"{name}/m"].astype(param.dtype)
            v = table[f"{name}/v"].astype(param.dtype)
            if m.shape != param.shape:
                raise ShapeMismatchError(f"optimizer state for {name} does not fit its parameter")
            self.states[name] = AdamState(m, v, int(table[f"{name}/step"]))
