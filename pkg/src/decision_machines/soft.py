"""Differentiable relaxations of logical decision machines.

The hard machine picks ``argmax(B~ sgn(S x - t))``. Here the signum becomes a
saturating activation and the argmax a temperature softmax, which turns the
tree into a one-layer key/value attention block: the query is the activated
margin vector, the keys are the template rows and the values are the leaf
values. The same weighting generalizes to the selection-prediction scheme
``sum_i sim(W_i, f(x)) / sum_j sim(W_j, f(x)) * g_i(x)``.

Analytic input gradients are hand-coded; :func:`finite_difference_check`
compares them with central differences.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .compiler import DecisionMachine, augment, load_machine, ternary
from .inference import decide, margins, sgn_modified

ACTIVATIONS = ("sign", "satlin", "tanh")
_ACTIVATION_ALIASES = {"saturated-linear": "satlin", "signum": "sign"}
KERNELS = ("exp-dot", "gaussian-rbf", "softmax-logical", "hard-delta")


class NoSelectedExpert(ValueError):
    pass


@dataclass(frozen=True)
class SoftConfig:
    activation: str = "satlin"
    epsilon: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        act = _ACTIVATION_ALIASES.get(self.activation, self.activation)
        if act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        object.__setattr__(self, "activation", act)
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


def activate(config: SoftConfig, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if config.activation == "sign":
        return sgn_modified(z).astype(float)
    if config.activation == "satlin":
        return np.clip(z / config.epsilon, -1.0, 1.0)
    return np.tanh(z)


def activation_slope(config: SoftConfig, z) -> np.ndarray:
    """Derivative of :func:`activate`; zero on the flat pieces of sign and satlin."""
    z = np.asarray(z, dtype=float)
    if config.activation == "sign":
        return np.zeros_like(z)
    if config.activation == "satlin":
        return np.where(np.abs(z) < config.epsilon, 1.0 / config.epsilon, 0.0)
    return 1.0 - np.tanh(z) ** 2


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max())
    return e / e.sum()


def _mix(weights: np.ndarray, values: np.ndarray) -> float:
    # offset by the first value: equal values come back exactly
    ref = values[0]
    return float(ref + weights @ (values - ref))


def _require_numeric_input(machine: DecisionMachine) -> None:
    if machine.feature_transform:
        raise ValueError("soft machines do not support categorical features (expanded tests sit inside the gap)")


def soft_scores(machine: DecisionMachine, x: Sequence[float], config: SoftConfig) -> np.ndarray:
    """``B~ sigma(S x - t)``: logical similarities against a relaxed result vector."""
    _require_numeric_input(machine)
    x = machine.prepare(x)
    if machine.L == 1:
        return np.ones(1)
    z = margins(machine, x)
    if np.isnan(z).any():
        raise ValueError("NaN test margin")
    return (machine.B @ activate(config, z)) / machine.row_norms


def soft_decide(machine: DecisionMachine, x: Sequence[float], config: SoftConfig) -> int:
    return int(np.argmax(soft_scores(machine, x, config)))


def soft_weights(machine: DecisionMachine, x: Sequence[float], config: SoftConfig) -> np.ndarray:
    return _softmax(soft_scores(machine, x, config) / config.tau)


def soft_predict(machine: DecisionMachine, x: Sequence[float], config: SoftConfig) -> float:
    return _mix(soft_weights(machine, x, config), machine.values)


def soft_predict_grad(machine: DecisionMachine, x: Sequence[float], config: SoftConfig) -> np.ndarray:
    """Gradient of :func:`soft_predict` with respect to ``x``."""
    _require_numeric_input(machine)
    x = machine.prepare(x)
    if machine.L == 1:
        return np.zeros_like(x)
    z = margins(machine, x)
    p = soft_weights(machine, x, config)
    v = machine.values
    centered = p * (v - _mix(p, v))
    back = (machine.B.T @ (centered / machine.row_norms)) * activation_slope(config, z)
    return machine.S.T @ back / config.tau


def attention_eval(machine: DecisionMachine, x: Sequence[float], config: SoftConfig) -> float:
    """Soft prediction written as key/value attention.

    query = sigma([S | t] (x, -1)), keys = template rows scaled by ``1/|B_i|_1``,
    values = leaf values.
    """
    _require_numeric_input(machine)
    values = machine.values
    if machine.L == 1:
        return float(values[0])
    S_aug, x_aug = augment(machine, machine.prepare(x))
    pre = S_aug @ x_aug
    if np.isnan(pre).any():
        raise ValueError("NaN test margin")
    query = activate(config, pre)
    keys, key_scale = machine.B, machine.row_norms
    attn = _softmax(((keys @ query) / key_scale) / config.tau)
    return _mix(attn, values)


def hard_attention_eval(machine: DecisionMachine, x: Sequence[float]) -> float:
    """Sign query with exact one-hot delta weights; reproduces the logical machine."""
    values = machine.values
    x = machine.prepare(x)
    if machine.L == 1:
        return float(values[0])
    h = sgn_modified(margins(machine, x)).astype(np.int64)
    unit = (machine.B.astype(np.int64) @ h) == machine.row_norms
    picked = values[unit]
    return float(picked[0]) if picked.size == 1 else float(picked.sum() / picked.size)


# -- experts ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Expert:
    kind: str  # "constant" | "affine" | "logistic-link"
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bias: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "affine", "logistic-link"):
            raise ValueError(f"unknown expert kind {self.kind!r}")
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))

    @classmethod
    def constant(cls, value: float) -> "Expert":
        return cls("constant", bias=float(value))

    def _linear(self, x: np.ndarray) -> float:
        if self.weights.shape != x.shape:
            raise ValueError(f"expert expects {self.weights.shape[0]} inputs, got {x.shape[0]}")
        return float(self.weights @ x + self.bias)

    def __call__(self, x) -> float:
        if self.kind == "constant":
            return self.bias
        x = np.asarray(x, dtype=float)
        u = self._linear(x)
        if self.kind == "affine":
            return u
        return 1.0 / (1.0 + math.exp(-u)) if u >= 0 else math.exp(u) / (1.0 + math.exp(u))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(x)
        if self.kind == "affine":
            return self.weights.copy()
        s = self(x)
        return s * (1.0 - s) * self.weights

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "params": {"value": self.bias}}
        return {"kind": self.kind, "params": {"weights": self.weights.tolist(), "bias": self.bias}}

    @classmethod
    def from_dict(cls, doc: dict) -> "Expert":
        params = doc.get("params", {})
        if doc["kind"] == "constant":
            return cls.constant(params["value"])
        return cls(doc["kind"], np.asarray(params["weights"], dtype=float), float(params.get("bias", 0.0)))


# -- selection-prediction ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class MachineFeatureMap:
    """``f(x) = sigma(S x - t)``: the hidden vector of a machine, used as the query."""

    machine: DecisionMachine
    config: SoftConfig = SoftConfig("sign")
    path: str | None = None

    def __call__(self, x) -> np.ndarray:
        _require_numeric_input(self.machine)
        return activate(self.config, margins(self.machine, self.machine.prepare(x)))

    def jacobian(self, x) -> np.ndarray:
        z = margins(self.machine, self.machine.prepare(x))
        return activation_slope(self.config, z)[:, None] * self.machine.S


@dataclass(frozen=True, eq=False)
class SelectionPredictionModel:
    keys: np.ndarray
    kernel: str
    experts: tuple[Expert, ...]
    tau: float = 1.0
    feature_map: MachineFeatureMap | None = None  # None = identity

    def __post_init__(self):
        keys = np.atleast_2d(np.asarray(self.keys, dtype=float))
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "experts", tuple(self.experts))
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; expected one of {KERNELS}")
        if len(self.experts) < 1 or len(self.experts) != keys.shape[0]:
            raise ValueError("need one expert per key and at least one key")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.kernel in ("softmax-logical", "hard-delta"):
            ternary(keys)
            if (np.abs(keys).sum(axis=1) == 0).any() and keys.shape[1] > 0:
                raise ValueError("logical kernels need nonzero template keys")

    @property
    def key_norms(self) -> np.ndarray:
        norms = np.abs(self.keys).sum(axis=1)
        return np.where(norms == 0, 1.0, norms)

    def query(self, x) -> np.ndarray:
        if self.feature_map is None:
            return np.asarray(x, dtype=float)
        return self.feature_map(x)

    def logits(self, q: np.ndarray) -> np.ndarray:
        """``log sim(W_i, q)`` for the smooth kernels."""
        if self.kernel == "exp-dot":
            return (self.keys @ q) / self.tau
        if self.kernel == "gaussian-rbf":
            d = q - self.keys
            return -np.einsum("ij,ij->i", d, d) / self.tau
        if self.kernel == "softmax-logical":
            return ((self.keys @ q) / self.key_norms) / self.tau
        raise ValueError("hard-delta kernel has no logits")

    def logit_gradients(self, q: np.ndarray) -> np.ndarray:
        """Row i: gradient of ``logits(q)[i]`` with respect to ``q``."""
        if self.kernel == "exp-dot":
            return self.keys / self.tau
        if self.kernel == "gaussian-rbf":
            return -2.0 * (q - self.keys) / self.tau
        if self.kernel == "softmax-logical":
            return self.keys / self.key_norms[:, None] / self.tau
        return np.zeros_like(self.keys)


def sp_weights(model: SelectionPredictionModel, x) -> np.ndarray:
    q = model.query(x)
    if np.isnan(q).any():
        raise ValueError("NaN in feature map")
    if model.kernel == "hard-delta":
        sim = ((model.keys @ q) == np.abs(model.keys).sum(axis=1)).astype(float)
        mass = sim.sum()
        if mass == 0:
            raise NoSelectedExpert("no selected expert: every hard-delta similarity is zero")
        return sim / mass
    return _softmax(model.logits(q))


def sp_predict(model: SelectionPredictionModel, x) -> float:
    """Similarity-weighted average of the experts evaluated at ``x``."""
    p = sp_weights(model, x)
    if model.kernel == "hard-delta":
        chosen = np.flatnonzero(p)
        if chosen.size == 1:
            return model.experts[chosen[0]](x)
        return float(sum(p[i] * model.experts[i](x) for i in chosen))
    g = np.array([e(x) for e in model.experts])
    return _mix(p, g)


def sp_predict_grad(model: SelectionPredictionModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    p = sp_weights(model, x)
    g = np.array([e(x) for e in model.experts])
    G = np.array([e.gradient(x) for e in model.experts])
    grad = p @ G
    if model.kernel == "hard-delta":
        return grad
    q = model.query(x)
    A = model.logit_gradients(q)
    if model.feature_map is not None:
        A = A @ model.feature_map.jacobian(x)
    return grad + (p * (g - _mix(p, g))) @ A


def glm_tree_predict(machine: DecisionMachine, experts: Sequence[Expert], x) -> float:
    """Hard selection: the expert attached to the leaf that ``x`` reaches."""
    if len(experts) != machine.L:
        raise ValueError(f"need {machine.L} experts, got {len(experts)}")
    return experts[decide(machine, x)](x)


def sglmt_model(machine: DecisionMachine, experts: Sequence[Expert], tau: float = 1.0,
                activation: str = "sign", epsilon: float = 1.0) -> SelectionPredictionModel:
    """Softmax over logical similarities of the machine's sign vector, one expert per leaf."""
    return SelectionPredictionModel(machine.B, "softmax-logical", tuple(experts), tau,
                                    MachineFeatureMap(machine, SoftConfig(activation, epsilon, tau)))


def logical_model(machine: DecisionMachine, experts: Sequence[Expert] | None = None) -> SelectionPredictionModel:
    """Hard-delta selection-prediction model equivalent to the logical machine."""
    if experts is None:
        experts = [Expert.constant(v) for v in machine.values]
    return SelectionPredictionModel(machine.B, "hard-delta", tuple(experts), 1.0,
                                    MachineFeatureMap(machine, SoftConfig("sign")))


def soften(machine: DecisionMachine, config: SoftConfig, kernel: str = "softmax-logical",
           path: str | None = None) -> SelectionPredictionModel:
    """Selection-prediction model with constant leaf experts over a machine's hidden vector.

    ``path`` is where the machine lives on disk; it is needed to serialize the model.
    """
    if kernel not in ("softmax-logical", "hard-delta"):
        raise ValueError("a machine can only be softened with a logical kernel")
    if machine.L < 2:
        raise ValueError("a single-leaf machine has nothing to soften")
    _require_numeric_input(machine)
    experts = tuple(Expert.constant(v) for v in machine.values)
    act = SoftConfig("sign", config.epsilon, config.tau) if kernel == "hard-delta" else config
    return SelectionPredictionModel(machine.B, kernel, experts, config.tau, MachineFeatureMap(machine, act, path))


def sp_model_to_dict(model: SelectionPredictionModel) -> dict:
    doc = {
        "kernel": model.kernel,
        "tau": model.tau,
        "keys": model.keys.tolist(),
        "experts": [e.to_dict() for e in model.experts],
        "feature_map": "identity",
    }
    fm = model.feature_map
    if fm is not None:
        if fm.path is None:
            raise ValueError("machine feature map needs a path to be serialized")
        doc["feature_map"] = f"machine:{fm.path}"
        doc["activation"] = fm.config.activation
        doc["epsilon"] = fm.config.epsilon
    return doc


def sp_model_from_dict(doc: dict, base_dir: str | None = None) -> SelectionPredictionModel:
    fm = None
    ref = doc.get("feature_map", "identity")
    if ref != "identity":
        if not ref.startswith("machine:"):
            raise ValueError(f"unknown feature map {ref!r}")
        path = ref[len("machine:"):]
        full = path if base_dir is None or os.path.isabs(path) else os.path.join(base_dir, path)
        tau = float(doc.get("tau", 1.0))
        cfg = SoftConfig(doc.get("activation", "sign"), float(doc.get("epsilon", 1.0)), tau)
        fm = MachineFeatureMap(load_machine(full), cfg, path)
    return SelectionPredictionModel(
        np.asarray(doc["keys"], dtype=float), doc["kernel"],
        tuple(Expert.from_dict(e) for e in doc["experts"]), float(doc.get("tau", 1.0)), fm,
    )


def load_sp_model(path) -> SelectionPredictionModel:
    with open(path) as fh:
        return sp_model_from_dict(json.load(fh), os.path.dirname(os.path.abspath(path)))


# -- gradient checking ------------------------------------------------------

@dataclass
class CoordinateCheck:
    index: int
    analytic: float
    numeric: float
    rel_error: float
    ok: bool
    skipped: bool = False
    notice: str = ""


@dataclass
class GradientReport:
    coords: list[CoordinateCheck]
    rtol: float

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.coords if not c.skipped)

    @property
    def checked(self) -> int:
        return sum(not c.skipped for c in self.coords)

    @property
    def max_rel_error(self) -> float:
        errs = [c.rel_error for c in self.coords if not c.skipped]
        return max(errs) if errs else 0.0


def finite_difference_check(fn: Callable, grad_fn: Callable, x, h: float = 1e-6, rtol: float = 1e-5,
                            floor: float = 1e-3,
                            kink_distance: Callable[[np.ndarray, int], float] | None = None) -> GradientReport:
    """Compare ``grad_fn(x)`` with central differences ``(fn(x+h e_k) - fn(x-h e_k)) / 2h``.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero
    components from being judged on rounding noise alone. Coordinates whose
    stencil would straddle a kink (``kink_distance(x, k) < 2h``) are skipped.
    """
    x = np.asarray(x, dtype=float)
    analytic = np.asarray(grad_fn(x), dtype=float)
    coords = []
    for k in range(x.size):
        if kink_distance is not None and kink_distance(x, k) < 2 * h:
            coords.append(CoordinateCheck(k, float(analytic[k]), math.nan, 0.0, True, True,
                                          "skipped: within 2h of a kink"))
            continue
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        numeric = (fn(xp) - fn(xm)) / (2 * h)
        a = float(analytic[k])
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        coords.append(CoordinateCheck(k, a, float(numeric), err, err <= rtol))
    return GradientReport(coords, rtol)


def kink_distance_for(machine: DecisionMachine, config: SoftConfig) -> Callable[[np.ndarray, int], float]:
    """Distance, along coordinate ``k``, from ``x`` to the nearest activation kink."""
    if config.activation == "tanh":
        return lambda x, k: math.inf
    kinks = (0.0,) if config.activation == "sign" else (-config.epsilon, config.epsilon)

    def dist(x: np.ndarray, k: int) -> float:
        z = margins(machine, x)
        best = math.inf
        for j in np.flatnonzero(machine.S[:, k]):
            for c in kinks:
                best = min(best, abs(z[j] - c) / abs(machine.S[j, k]))
        return best

    return dist
