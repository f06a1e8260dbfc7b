"""Adam optimizer, training steps, and prediction."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyBatch
from .model import (
    ModelConfig,
    ModelParams,
    PARAM_FIELDS,
    backward_batch,
    forward_batch,
)


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adam(params: ModelParams) -> AdamState:
    zeros = {n: np.zeros_like(getattr(params, n)) for n in PARAM_FIELDS}
    return AdamState(step=0, m=zeros, v={n: a.copy() for n, a in zeros.items()})


def adam_update(params, state, grads, hyper: TrainHyper):
    """One Adam step; returns fresh (params, state), inputs untouched."""
    t = state.step + 1
    new_m, new_v, new_p = {}, {}, {}
    bc1 = 1.0 - hyper.beta1**t
    bc2 = 1.0 - hyper.beta2**t
    for name in PARAM_FIELDS:
        g = grads[name]
        m = hyper.beta1 * state.m[name] + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * state.v[name] + (1.0 - hyper.beta2) * g * g
        step = hyper.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + hyper.epsilon)
        new_m[name] = m
        new_v[name] = v
        new_p[name] = getattr(params, name) - step.astype(params.dtype)
    return ModelParams(**new_p), AdamState(step=t, m=new_m, v=new_v)


def _stack_batch(batch):
    """Turn a list of (image, label) pairs into (B,C,H,W) data and labels."""
    if not batch:
        raise EmptyBatch("training batch is empty")
    data = np.stack(
        [np.asarray(img.data if hasattr(img, "data") else img) for img, _ in batch]
    )
    labels = np.array([int(lab) for _, lab in batch])
    return data, labels


def train_step(batch, params, state, config: ModelConfig, hyper: TrainHyper):
    """Adam update on the mean margin loss over one batch.

    Returns (params', state', mean_loss).  Gradients are accumulated by a
    deterministic dense reduction over the fixed batch order, so repeated
    runs with identical inputs are bit-identical.
    """
    data, labels = _stack_batch(batch)
    lengths, cache = forward_batch(data, params, config)
    grads, losses = backward_batch(cache, labels, params, scale=1.0 / len(batch))
    new_params, new_state = adam_update(params, state, grads, hyper)
    return new_params, new_state, float(losses.mean())


def fit(images, labels, params, config, hyper, epochs, batch_size, rng):
    """Plain epoch loop over a fixed dataset; returns (params, loss history).

    The example order is reshuffled each epoch from ``rng``; the history
    holds the mean margin loss of each epoch.
    """
    state = init_adam(params)
    n = len(images)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch = [(images[i], labels[i]) for i in idx]
            params, state, loss = train_step(batch, params, state, config, hyper)
            epoch_losses.append(loss * len(idx))
        history.append(sum(epoch_losses) / n)
    return params, history


def predict_batch(data, params, config, chunk=64):
    """Argmax class per example for (B, C, H, W) data, ties toward class 0."""
    out = []
    for start in range(0, data.shape[0], chunk):
        lengths, _ = forward_batch(data[start:start + chunk], params, config)
        out.append(np.argmax(lengths, axis=1))
    return np.concatenate(out)


def predict(image, params, config) -> int:
    """Predicted label for one image (0 or 1; exact ties resolve to 0)."""
    data = np.asarray(image.data if hasattr(image, "data") else image)
    return int(predict_batch(data[None], params, config)[0])
