"""Feed-forward networks built on :mod:`stac.autodiff.tensor`.

Every hidden block is ``Linear -> Dropout -> LayerNorm -> ReLU``, followed by
a plain ``Linear`` head. Dropout sits before the normalisation on purpose;
both the critic and the actor use this layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import DimensionError, DomainError, TapeError
from . import tensor as T
from .tensor import Parameter, Tensor

LAYER_NORM_EPS = 1e-5


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_dims: tuple = (256, 256)
    dropout_rate: float = 0.0
    use_layer_norm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, self.output_dim, *self.hidden_dims)
        if any(int(d) <= 0 for d in dims):
            raise DomainError(f"layer sizes must be positive, got {dims}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DomainError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    def to_dict(self):
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


def dropout_mask(shape, rate, rng):
    """Inverted-dropout mask: zeros with probability ``rate``, survivors scaled by 1/(1-rate)."""
    n = int(np.prod(shape))
    mask = np.full(n, 1.0 / (1.0 - rate))
    if rate > 0.0:
        # Positions of dropped units in an i.i.d. Bernoulli(rate) sequence: the gaps
        # between successive drops are Geometric(rate). Far cheaper than n uniforms
        # at the small rates used in practice.
        drops = []
        pos = -1
        while True:
            batch = max(16, int(1.2 * (n - pos) * rate) + 16)
            idx = pos + np.cumsum(rng.geometric(rate, size=batch))
            drops.append(idx[idx < n])
            if idx[-1] >= n:
                break
            pos = int(idx[-1])
        mask[np.concatenate(drops)] = 0.0
    return mask.reshape(shape)


class MLP:
    def __init__(self, spec: MlpSpec, rng: np.random.Generator | None = None):
        self.spec = spec
        rng = np.random.default_rng() if rng is None else rng
        self.layers = []
        fan_in = spec.input_dim
        for i, width in enumerate(spec.hidden_dims):
            block = {"linear": _init_linear(fan_in, width, rng, f"hidden{i}")}
            if spec.use_layer_norm:
                block["norm"] = (Parameter(np.ones(width), name=f"hidden{i}.ln_gain"),
                                 Parameter(np.zeros(width), name=f"hidden{i}.ln_bias"))
            self.layers.append(block)
            fan_in = width
        self.head = _init_linear(fan_in, spec.output_dim, rng, "head")

    @property
    def params(self) -> list[Parameter]:
        out = []
        for block in self.layers:
            out.extend(block["linear"])
            out.extend(block.get("norm", ()))
        out.extend(self.head)
        return out

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params)

    def __call__(self, x, train=False, rng=None, track_params=True) -> Tensor:
        """Run the network and return the output tensor (graph attached).

        ``track_params=False`` treats the weights as constants: gradients can
        still flow to the input but nothing is accumulated in the parameters.
        """
        x = T.as_tensor(x)
        if x.shape[-1] != self.spec.input_dim:
            raise DimensionError(f"expected input of width {self.spec.input_dim}, got shape {x.shape}")
        wrap = (lambda p: p) if track_params else (lambda p: Tensor(p.data))
        rate = self.spec.dropout_rate
        h = x
        for block in self.layers:
            w, b = block["linear"]
            mask = None
            if train and rate > 0.0:
                if rng is None:
                    raise ValueError("train-mode dropout needs an rng")
                mask = dropout_mask(h.shape[:-1] + (w.shape[1],), rate, rng)
            g, beta = (wrap(p) for p in block["norm"]) if "norm" in block else (None, None)
            h = T.hidden_block(h, wrap(w), wrap(b), mask, g, beta, LAYER_NORM_EPS)
        w, b = self.head
        return T.linear(h, wrap(w), wrap(b))

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.params}

    def load_state_dict(self, state):
        for p in self.params:
            p.assign(state[p.name])

    def clone(self) -> "MLP":
        twin = MLP.__new__(MLP)
        twin.spec = self.spec
        twin.layers = [{k: tuple(Parameter(p.data, name=p.name) for p in v) for k, v in blk.items()}
                       for blk in self.layers]
        twin.head = tuple(Parameter(p.data, name=p.name) for p in self.head)
        return twin


def _init_linear(fan_in, fan_out, rng, name):
    bound = 1.0 / np.sqrt(fan_in)
    w = Parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), name=f"{name}.weight")
    b = Parameter(rng.uniform(-bound, bound, size=fan_out), name=f"{name}.bias")
    return w, b


@dataclass
class Tape:
    output: Tensor
    params: list
    versions: list = field(default_factory=list)


def forward(net: MLP, x, mode="eval", rng=None):
    """Functional entry point: returns ``(output array, tape)``."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    out = net(x, train=(mode == "train"), rng=rng)
    params = net.params
    return out.data, Tape(out, params, [p.version for p in params])


def backward(tape: Tape, output_grad):
    """Accumulate gradients of ``sum(output * output_grad)`` into the parameters."""
    for p, v in zip(tape.params, tape.versions):
        if p.version != v:
            raise TapeError(f"tape is stale: parameter {p.name} changed since the forward pass")
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.shape != tape.output.shape:
        raise TapeError(f"output_grad shape {output_grad.shape} does not match tape output {tape.output.shape}")
    T.backprop(tape.output, output_grad)


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def create(cls, params, learning_rate=3e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params],
                   0, learning_rate, beta1, beta2, epsilon)


def adam_step(params, state: AdamState):
    """Bias-corrected Adam update in place, then zero the gradients."""
    if len(params) != len(state.first_moment):
        raise DimensionError("Adam state does not match the parameter list")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        if g.shape != p.data.shape:
            raise DimensionError(f"{p.name}: gradient shape {g.shape} != value shape {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
        p.version += 1
        p.zero_grad()
    return params


def polyak_update(target, online, rho: float):
    """target <- rho * target + (1 - rho) * online."""
    if not 0.0 <= rho <= 1.0:
        raise DomainError(f"rho must lie in [0, 1], got {rho}")
    if len(target) != len(online):
        raise DimensionError("parameter lists differ in length")
    for t, o in zip(target, online):
        if t.data.shape != o.data.shape:
            raise DimensionError(f"{t.name}: shape {t.data.shape} != {o.data.shape}")
        t.assign(rho * t.data + (1.0 - rho) * o.data)
    return target


def grad_norm(params) -> float:
    return float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in params)))
