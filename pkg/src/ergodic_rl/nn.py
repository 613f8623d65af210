"""Dense ReLU networks with hand-written backpropagation, Smooth-L1 and Adam.

Every parameter array may carry leading *population* axes: a weight of shape
``(*pop, out, in)`` describes ``prod(pop)`` independent networks that are
evaluated and trained in lockstep.  Inputs are laid out as
``(*pop, *samples, in)``; gradients are summed over the sample axes so each
network receives exactly the gradient it would get on its own.

Products are computed as broadcast multiply + sum over the fan-in axis rather
than ``matmul`` so a network's numbers do not depend on how many siblings it
is stacked with.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    pass


class InvalidConfigurationError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass
class Mlp:
    """Fully connected network; ReLU on hidden layers, linear output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[-1],) + tuple(w.shape[-2] for w in self.weights)

    @property
    def population_shape(self) -> tuple[int, ...]:
        return self.weights[0].shape[:-2]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]  # activations[i] is the input to layer i


@dataclass
class ParamGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_stability: float = 1e-8
    step_count: int = 0

    @classmethod
    def zeros_like(cls, mlp: Mlp, learning_rate: float, **kwargs) -> "AdamState":
        return cls(
            [np.zeros_like(p) for p in mlp.params()],
            [np.zeros_like(p) for p in mlp.params()],
            learning_rate,
            **kwargs,
        )


def mlp_init(layer_dims, seed: int) -> Mlp:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    The draw uses a Philox generator keyed on ``seed`` so the same seed gives
    bitwise-identical parameters everywhere.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise InvalidConfigurationError(f"layer_dims must have >= 2 positive entries, got {layer_dims!r}")
    rng = np.random.Generator(np.random.Philox(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def stack_mlps(mlps) -> Mlp:
    """Stack equally shaped networks along a new leading population axis."""
    mlps = list(mlps)
    if len({m.layer_dims for m in mlps}) != 1:
        raise ShapeError("cannot stack networks with different layer_dims")
    n = mlps[0].n_layers
    return Mlp(
        [np.stack([m.weights[i] for m in mlps]) for i in range(n)],
        [np.stack([m.biases[i] for m in mlps]) for i in range(n)],
    )


def unstack_mlp(mlp: Mlp, index) -> Mlp:
    return Mlp([w[index].copy() for w in mlp.weights], [b[index].copy() for b in mlp.biases])


def _n_sample_axes(mlp: Mlp, x: np.ndarray) -> int:
    n = x.ndim - 1 - len(mlp.population_shape)
    if n < 0 or x.shape[: len(mlp.population_shape)] != mlp.population_shape:
        raise ShapeError(
            f"input of shape {x.shape} does not match population {mlp.population_shape}"
        )
    return n


def _expand(param: np.ndarray, n_pop: int, n_sample: int, n_trailing: int) -> np.ndarray:
    # insert sample axes between the population axes and the trailing axes
    shape = param.shape[:n_pop] + (1,) * n_sample + param.shape[n_pop:]
    return param.reshape(shape)


def mlp_forward(mlp: Mlp, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (mlp.layer_dims[0],):
        raise ShapeError(f"expected input width {mlp.layer_dims[0]}, got shape {x.shape}")
    n_pop = len(mlp.population_shape)
    n_sample = _n_sample_axes(mlp, x)
    a = x
    pre, acts = [], []
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        acts.append(a)
        z = (_expand(w, n_pop, n_sample, 2) * a[..., None, :]).sum(axis=-1) + _expand(b, n_pop, n_sample, 1)
        pre.append(z)
        a = np.maximum(z, 0.0) if i < mlp.n_layers - 1 else z
    return a, ForwardCache(x, pre, acts)


def mlp_predict(mlp: Mlp, x) -> np.ndarray:
    return mlp_forward(mlp, x)[0]


def mlp_backward(mlp: Mlp, cache: ForwardCache, output_grad) -> ParamGrads:
    """Reverse-mode gradient of ``sum(output * output_grad)``.

    The ReLU derivative at exactly zero is taken as 0.
    """
    if len(cache.pre_activations) != mlp.n_layers:
        raise ShapeError("forward cache does not belong to this network")
    delta = np.asarray(output_grad, dtype=float)
    if delta.shape != cache.pre_activations[-1].shape:
        raise ShapeError(
            f"output_grad shape {delta.shape} != output shape {cache.pre_activations[-1].shape}"
        )
    n_pop = len(mlp.population_shape)
    n_sample = _n_sample_axes(mlp, cache.inputs)
    sample_axes = tuple(range(n_pop, n_pop + n_sample))
    gw = [None] * mlp.n_layers
    gb = [None] * mlp.n_layers
    for i in reversed(range(mlp.n_layers)):
        a_prev = cache.activations[i]
        gw[i] = (delta[..., :, None] * a_prev[..., None, :]).sum(axis=sample_axes)
        gb[i] = delta.sum(axis=sample_axes)
        if i > 0:
            w = _expand(mlp.weights[i], n_pop, n_sample, 2)
            delta = (w * delta[..., :, None]).sum(axis=-2) * (cache.pre_activations[i - 1] > 0)
    return ParamGrads(gw, gb)


def smooth_l1(prediction, target):
    """Smooth-L1 (Huber, threshold 1) loss and its derivative w.r.t. prediction.

    Works elementwise on arrays; returns plain floats for scalar input.
    """
    prediction = np.asarray(prediction, dtype=float)
    target = np.asarray(target, dtype=float)
    if not (np.all(np.isfinite(prediction)) and np.all(np.isfinite(target))):
        raise NumericError("smooth_l1 received non-finite input")
    d = prediction - target
    small = np.abs(d) < 1.0
    loss = np.where(small, 0.5 * d * d, np.abs(d) - 0.5)
    grad = np.where(small, d, np.sign(d))
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def adam_step(mlp: Mlp, grads: ParamGrads, state: AdamState) -> tuple[Mlp, AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    params = mlp.params()
    g = grads.params()
    if len(g) != len(params) or any(p.shape != q.shape for p, q in zip(params, g)):
        raise ShapeError("gradient shapes do not match network parameters")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    m = [b1 * m0 + (1 - b1) * gi for m0, gi in zip(state.first_moment, g)]
    v = [b2 * v0 + (1 - b2) * gi * gi for v0, gi in zip(state.second_moment, g)]
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    new = [
        p - state.learning_rate * (mi / c1) / (np.sqrt(vi / c2) + state.epsilon_stability)
        for p, mi, vi in zip(params, m, v)
    ]
    n = mlp.n_layers
    new_state = AdamState(m, v, state.learning_rate, b1, b2, state.epsilon_stability, t)
    return Mlp(new[:n], new[n:]), new_state


def grad_check(mlp: Mlp, x, loss_fn=None, h: float = 1e-5) -> float:
    """Largest relative gap between backprop and central finite differences.

    ``loss_fn(output) -> (loss, dloss_doutput)``; defaults to ``sum(output)``.
    Relative error per parameter is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if loss_fn is None:
        def loss_fn(out):
            return float(np.sum(out)), np.ones_like(out)

    out, cache = mlp_forward(mlp, x)
    _, dout = loss_fn(out)
    analytic = mlp_backward(mlp, cache, dout).params()

    probe = mlp.copy()
    worst = 0.0
    for p, a in zip(probe.params(), analytic):
        flat = p.reshape(-1)  # view into probe
        a_flat = a.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp = loss_fn(mlp_forward(probe, x)[0])[0]
            flat[j] = orig - h
            lm = loss_fn(mlp_forward(probe, x)[0])[0]
            flat[j] = orig
            num = (lp - lm) / (2 * h)
            err = abs(a_flat[j] - num) / max(1e-8, abs(a_flat[j]) + abs(num))
            worst = max(worst, err)
    return worst
