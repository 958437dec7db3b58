"""Minimal fully connected feedforward network.

Just enough machinery for the neuro-controller: tanh hidden layers, a linear
or sigmoid output, exact reverse-mode gradients with respect to both the
parameters and the input, plain SGD updates, and a text snapshot format.
Everything is double precision numpy; nets are small (a handful of units per
layer), so no batching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Mlp",
    "MlpGradients",
    "ForwardCache",
    "MlpFormatError",
    "NonFiniteUpdateError",
]

_ACTIVATIONS = ("linear", "sigmoid")


class MlpFormatError(ValueError):
    """Raised when a network snapshot cannot be parsed; message carries the line."""


class NonFiniteUpdateError(ArithmeticError):
    """Raised when an SGD step would write a NaN/inf parameter; net is untouched."""


@dataclass
class ForwardCache:
    """Intermediate values of one forward pass, consumed by the backward pass."""

    activations: list[np.ndarray]   # a_0 = input, ..., a_L = output
    pre_activations: list[np.ndarray]


@dataclass
class MlpGradients:
    """Per-layer parameter gradients, shaped like the network's weights/biases."""

    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]


class Mlp:
    """Feedforward net with tanh hidden layers and a configurable output layer.

    `output_activation` is "linear" (unbounded, for value estimates) or
    "sigmoid" (outputs in (0,1), for duty-cycle policies).
    """

    def __init__(
        self,
        layer_sizes: list[int],
        weights: list[np.ndarray],
        biases: list[np.ndarray],
        output_activation: str,
    ):
        if len(layer_sizes) < 2 or any(n < 1 for n in layer_sizes):
            raise ValueError(f"need >= 2 layers of size >= 1, got {layer_sizes}")
        if output_activation not in _ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {_ACTIVATIONS}")
        if len(weights) != len(layer_sizes) - 1 or len(biases) != len(weights):
            raise ValueError("parameter count does not match layer_sizes")
        for layer, (w, b) in enumerate(zip(weights, biases)):
            want = (layer_sizes[layer + 1], layer_sizes[layer])
            if w.shape != want or b.shape != (want[0],):
                raise ValueError(
                    f"layer {layer}: weight shape {w.shape} / bias shape {b.shape} "
                    f"inconsistent with sizes {layer_sizes}"
                )
        self.layer_sizes = list(layer_sizes)
        self.weights = weights
        self.biases = biases
        self.output_activation = output_activation

    @classmethod
    def init(
        cls, layer_sizes: list[int], output_activation: str = "linear", seed: int = 0
    ) -> "Mlp":
        """Fresh network: weights uniform in +-1/sqrt(fan_in), biases zero."""
        if len(layer_sizes) < 2 or any(n < 1 for n in layer_sizes):
            raise ValueError(f"need >= 2 layers of size >= 1, got {layer_sizes}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(layer_sizes, weights, biases, output_activation)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "Mlp":
        return Mlp(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_activation,
        )

    def forward(self, x) -> tuple[np.ndarray, ForwardCache]:
        """Evaluate the network; the cache feeds grad_weights / grad_input."""
        a = np.asarray(x, dtype=float)
        if a.shape != (self.n_inputs,):
            raise ValueError(f"input shape {a.shape} != ({self.n_inputs},)")
        activations = [a]
        pre_activations = []
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = w @ a + b
            pre_activations.append(z)
            if layer < last:
                a = np.tanh(z)
            elif self.output_activation == "sigmoid":
                a = 1.0 / (1.0 + np.exp(-z))
            else:
                a = z
            activations.append(a)
        return a, ForwardCache(activations, pre_activations)

    def _check_cache(self, cache: ForwardCache) -> None:
        if len(cache.activations) != len(self.layer_sizes) or any(
            a.shape != (n,) for a, n in zip(cache.activations, self.layer_sizes)
        ):
            raise ValueError("cache does not match this network (stale or foreign)")

    def _backward(
        self, cache: ForwardCache, d_output
    ) -> tuple[MlpGradients, np.ndarray]:
        self._check_cache(cache)
        delta = np.asarray(d_output, dtype=float)
        if delta.shape != (self.n_outputs,):
            raise ValueError(f"d_output shape {delta.shape} != ({self.n_outputs},)")
        if self.output_activation == "sigmoid":
            y = cache.activations[-1]
            delta = delta * y * (1.0 - y)
        d_weights = [None] * len(self.weights)
        d_biases = [None] * len(self.weights)
        for layer in range(len(self.weights) - 1, -1, -1):
            d_weights[layer] = np.outer(delta, cache.activations[layer])
            d_biases[layer] = delta
            delta = self.weights[layer].T @ delta
            if layer > 0:
                # derivative of tanh via the stored hidden activation
                h = cache.activations[layer]
                delta = delta * (1.0 - h * h)
        return MlpGradients(d_weights, d_biases), delta

    def grad_weights(self, cache: ForwardCache, d_output) -> MlpGradients:
        """Gradients of the scalar loss w.r.t. every weight and bias, given
        d_loss/d_output."""
        grads, _ = self._backward(cache, d_output)
        return grads

    def grad_input(self, cache: ForwardCache, d_output) -> np.ndarray:
        """Gradient of the scalar loss w.r.t. the network input."""
        _, d_input = self._backward(cache, d_output)
        return d_input

    def apply_update(self, grads: MlpGradients, learning_rate: float) -> None:
        """Plain gradient descent: W <- W - lr * dW.  If any resulting
        parameter would be non-finite the update is refused and the network
        left unchanged."""
        new_w = [w - learning_rate * dw for w, dw in zip(self.weights, grads.d_weights)]
        new_b = [b - learning_rate * db for b, db in zip(self.biases, grads.d_biases)]
        for arr in new_w + new_b:
            if not np.all(np.isfinite(arr)):
                raise NonFiniteUpdateError("update would produce non-finite parameters")
        self.weights = new_w
        self.biases = new_b

    # --- snapshot format -------------------------------------------------
    # line 1: "mlp v1"
    # line 2: layer sizes
    # line 3: hidden and output activation tags
    # line 4..: one row per layer, weights row-major then biases

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    def dumps(self) -> str:
        lines = [
            "mlp v1",
            " ".join(str(n) for n in self.layer_sizes),
            f"tanh {self.output_activation}",
        ]
        for w, b in zip(self.weights, self.biases):
            row = [repr(float(v)) for v in w.ravel()] + [repr(float(v)) for v in b]
            lines.append(" ".join(row))
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path) as fh:
            return cls.loads(fh.read())

    @classmethod
    def loads(cls, text: str) -> "Mlp":
        lines = text.splitlines()

        def fail(lineno, msg):
            raise MlpFormatError(f"line {lineno}: {msg}")

        if not lines or lines[0].strip() != "mlp v1":
            fail(1, "expected header 'mlp v1'")
        if len(lines) < 3:
            fail(len(lines), "truncated snapshot: missing sizes/activations")
        try:
            sizes = [int(tok) for tok in lines[1].split()]
        except ValueError:
            fail(2, f"bad layer sizes: {lines[1]!r}")
        if len(sizes) < 2 or any(n < 1 for n in sizes):
            fail(2, f"invalid layer sizes {sizes}")
        tags = lines[2].split()
        if len(tags) != 2 or tags[0] != "tanh" or tags[1] not in _ACTIVATIONS:
            fail(3, f"bad activation line: {lines[2]!r}")
        n_layers = len(sizes) - 1
        param_lines = [ln for ln in lines[3:] if ln.strip()]
        if len(param_lines) != n_layers:
            fail(len(lines), f"expected {n_layers} parameter rows, got {len(param_lines)}")
        weights, biases = [], []
        for layer, ln in enumerate(param_lines):
            fan_in, fan_out = sizes[layer], sizes[layer + 1]
            try:
                vals = [float(tok) for tok in ln.split()]
            except ValueError:
                fail(4 + layer, "non-numeric parameter")
            if len(vals) != fan_out * fan_in + fan_out:
                fail(
                    4 + layer,
                    f"expected {fan_out * fan_in + fan_out} values, got {len(vals)}",
                )
            flat = np.array(vals)
            weights.append(flat[: fan_out * fan_in].reshape(fan_out, fan_in))
            biases.append(flat[fan_out * fan_in:])
        return cls(sizes, weights, biases, tags[1])
