"""Zero-anchored input-convex networks and the auxiliary MLP.

Parameters of a network are a list of layer dictionaries mapping tensor
names to arrays.  Kernels are stored ``(fan_in, fan_out)`` so a layer reads
``x @ W``.  Every forward function is written with the dispatching
primitives of :mod:`thermoforge.diffcore`, so the same code runs on plain
arrays, duals (input derivatives) and tape variables (parameter gradients).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import diffcore as ad

ENERGY_BOUND = 1e-7
DISSIPATION_BOUND = 0.0
BOUNDS = {"energy": ENERGY_BOUND, "dissipation": DISSIPATION_BOUND}


class ConfigurationError(ValueError):
    """Network specification and parameters do not fit together."""


def _identity(x):
    return x


ACTIVATIONS: dict[str, Callable] = {
    "exp": ad.exp_clamped,
    "softplus": ad.softplus,
    "relu": ad.relu,
    "gelu": ad.gelu,
    "tanh": ad.tanh,
    "identity": _identity,
}
CONVEX_MONOTONE = {"exp", "softplus", "relu", "identity"}


@dataclass(frozen=True)
class NetworkSpec:
    kind: str  # "ficnn", "picnn" or "mlp"
    n_inputs: int
    widths: tuple
    activations: tuple
    n_outputs: int = 1
    output_activation: str = "identity"
    output_bias: bool = True
    constraint: str | None = None  # "energy", "dissipation" or None
    n_param_inputs: int = 0
    param_widths: tuple = ()
    param_activations: tuple = ()

    def __post_init__(self):
        if self.kind not in ("ficnn", "picnn", "mlp"):
            raise ConfigurationError(f"unknown network kind {self.kind!r}")
        if len(self.widths) != len(self.activations):
            raise ConfigurationError("one activation per hidden layer required")
        for a in (*self.activations, self.output_activation, *self.param_activations):
            if a not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {a!r}")
        if self.kind != "mlp":
            bad = [a for a in (*self.activations, self.output_activation) if a not in CONVEX_MONOTONE]
            if bad:
                raise ConfigurationError(f"convex path needs convex non-decreasing activations, got {bad}")
        if self.kind == "picnn":
            if len(self.param_widths) != len(self.widths) or len(self.param_activations) != len(self.widths):
                raise ConfigurationError("PICNN needs one parameter-branch layer per convex layer")
            if self.n_param_inputs < 1:
                raise ConfigurationError("PICNN needs parameter inputs")
        if self.constraint not in (None, "energy", "dissipation"):
            raise ConfigurationError(f"unknown constraint class {self.constraint!r}")

    def to_dict(self):
        d = asdict(self)
        for k in ("widths", "activations", "param_widths", "param_activations"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("widths", "activations", "param_widths", "param_activations"):
            d[k] = tuple(d.get(k, ()))
        return cls(**d)


def default_specs() -> dict[str, NetworkSpec]:
    """Architectures of the five subnetworks with the published defaults."""
    return {
        "FICNN_Fs": NetworkSpec("ficnn", 5, (12, 12), ("exp", "exp"), 1, "softplus", True, "energy"),
        "FICNN_F": NetworkSpec("ficnn", 4, (12, 12, 12), ("exp", "softplus", "softplus"), 12, "identity", True, "energy"),
        "FICNN_s": NetworkSpec("ficnn", 1, (12, 12, 12), ("exp", "exp", "exp"), 12, "identity", True, "energy"),
        "PICNN_g": NetworkSpec(
            "picnn", 3, (12, 12, 12), ("softplus",) * 3, 1, "relu", False, "dissipation",
            n_param_inputs=2, param_widths=(6, 6, 6), param_activations=("gelu",) * 3,
        ),
        "MLP_s": NetworkSpec("mlp", 4, (12, 12), ("gelu", "gelu"), 1, "identity", True, None),
    }


# shapes and constraint classes ---------------------------------------------


def layer_shapes(spec: NetworkSpec) -> list[dict[str, tuple]]:
    """Tensor shapes of every layer (hidden layers followed by the output)."""
    d = spec.n_inputs
    sizes = list(spec.widths) + [spec.n_outputs]
    layers = []
    if spec.kind == "ficnn":
        for l, n in enumerate(sizes):
            shp = {"V": (d, n)}
            if l > 0:
                shp["W"] = (sizes[l - 1], n)
            if l < len(sizes) - 1 or spec.output_bias:
                shp["b"] = (n,)
            layers.append(shp)
    elif spec.kind == "mlp":
        prev = d
        for l, n in enumerate(sizes):
            shp = {"W": (prev, n)}
            if l < len(sizes) - 1 or spec.output_bias:
                shp["b"] = (n,)
            layers.append(shp)
            prev = n
    else:
        m_sizes = [spec.n_param_inputs] + list(spec.param_widths)
        last = len(sizes) - 1
        for l, n in enumerate(sizes):
            m = m_sizes[l]
            shp = {"Vc": (d, n), "Vcp": (m, d), "ccp": (d,)}
            if l > 0:
                prev = sizes[l - 1]
                shp.update({"Wc": (prev, n), "Wcp": (m, prev), "bcp": (prev,)})
            if l < last or spec.output_bias:
                shp.update({"Ucp": (m, n), "bc": (n,)})
            if l < last:
                shp.update({"Wp": (m, m_sizes[l + 1]), "bp": (m_sizes[l + 1],)})
            layers.append(shp)
    return layers


def constrained_names(spec: NetworkSpec) -> set[str]:
    if spec.constraint is None:
        return set()
    if spec.kind == "ficnn":
        return {"W", "V"}
    if spec.kind == "picnn":
        return {"Wc", "Vc"}
    return set()


GATE_BIASES = ("bcp", "ccp")


def is_bias(name: str) -> bool:
    return name.startswith("b") or name.startswith("c")


def init_params(spec: NetworkSpec, seed) -> list[dict[str, np.ndarray]]:
    """Deterministic initialization.

    Constrained kernels are drawn strictly feasible from
    ``U[1e-7, 1/fan_in]``; other kernels from ``U[-1/sqrt(fan_in),
    1/sqrt(fan_in)]``; biases start at zero except the PICNN gate biases
    (``bcp``, ``ccp``), which start at one so the ReLU gates are open at the
    rest state.
    """
    rng = np.random.default_rng(seed)
    cons = constrained_names(spec)
    params = []
    for shapes in layer_shapes(spec):
        layer = {}
        for name in sorted(shapes):
            shp = shapes[name]
            if name in GATE_BIASES and spec.kind == "picnn":
                layer[name] = np.ones(shp)
            elif is_bias(name):
                layer[name] = np.zeros(shp)
            elif name in cons:
                layer[name] = rng.uniform(ENERGY_BOUND, 1.0 / shp[0], size=shp)
            else:
                lim = 1.0 / np.sqrt(shp[0])
                layer[name] = rng.uniform(-lim, lim, size=shp)
        params.append(layer)
    return params


def check_params(spec: NetworkSpec, params) -> None:
    shapes = layer_shapes(spec)
    if len(params) != len(shapes):
        raise ConfigurationError(f"expected {len(shapes)} layers, got {len(params)}")
    for l, (shp, layer) in enumerate(zip(shapes, params)):
        if set(shp) != set(layer):
            raise ConfigurationError(f"layer {l}: expected tensors {sorted(shp)}, got {sorted(layer)}")
        for name, s in shp.items():
            if tuple(np.shape(ad.value(layer[name]))) != s:
                raise ConfigurationError(f"layer {l} tensor {name}: expected shape {s}")


def project_constraints(spec: NetworkSpec, params):
    """Clamp constrained kernels to their bound; everything else untouched."""
    cons = constrained_names(spec)
    if not cons:
        return [dict(layer) for layer in params]
    bound = BOUNDS[spec.constraint]
    return [
        {k: (np.maximum(v, bound) if k in cons else v) for k, v in layer.items()}
        for layer in params
    ]


def satisfies_constraints(spec: NetworkSpec, params) -> bool:
    cons = constrained_names(spec)
    if not cons:
        return True
    bound = BOUNDS[spec.constraint]
    return all(np.all(np.asarray(layer[k]) >= bound) for layer in params for k in cons if k in layer)


# forward passes ---------------------------------------------------------------


def _check_width(x, n, what):
    if np.shape(ad.value(x))[-1] != n:
        raise ConfigurationError(f"{what}: expected last dimension {n}")


def ficnn_forward(spec: NetworkSpec, params, x0):
    """Zero-anchored fully input-convex network, ``x0`` of shape ``(..., d)``.

    Each layer computes ``act(W x + V x0 + b) - act(b)`` (no ``W`` term in the
    first layer), so the output is exactly zero at ``x0 = 0``.
    """
    _check_width(x0, spec.n_inputs, "FICNN input")
    acts = [ACTIVATIONS[a] for a in spec.activations] + [ACTIVATIONS[spec.output_activation]]
    x = None
    for l, (layer, act) in enumerate(zip(params, acts)):
        z = x0 @ layer["V"]
        if l > 0:
            z = z + x @ layer["W"]
        if "b" in layer:
            b = layer["b"]
            x = act(z + b) - act(b)
        else:
            x = act(z) - act(np.zeros(np.shape(ad.value(layer["V"]))[1]))
    return x


def mlp_forward(spec: NetworkSpec, params, x):
    """Zero-anchored perceptron: ``f(W x + b) - f(b)`` per layer."""
    _check_width(x, spec.n_inputs, "MLP input")
    acts = [ACTIVATIONS[a] for a in spec.activations] + [ACTIVATIONS[spec.output_activation]]
    for layer, act in zip(params, acts):
        z = x @ layer["W"]
        if "b" in layer:
            b = layer["b"]
            x = act(z + b) - act(b)
        else:
            x = act(z) - act(np.zeros(np.shape(ad.value(layer["W"]))[1]))
    return x


def picnn_forward(spec: NetworkSpec, params, xc, xp):
    """Partially input-convex network: convex in ``xc``, parametrized by ``xp``.

    Convex-branch terms are gated by ReLU functions of the parameter branch
    and carry ``xc`` multiplicatively, and the ``U xp + b`` offset is removed
    by the anchoring subtraction, so the output vanishes at ``xc = 0`` for any
    ``xp``.  Without an output bias the last layer has neither the offset nor
    the subtraction, which keeps a non-negative output activation
    non-negative.
    """
    _check_width(xc, spec.n_inputs, "PICNN convex input")
    _check_width(xp, spec.n_param_inputs, "PICNN parameter input")
    acts = [ACTIVATIONS[a] for a in spec.activations] + [ACTIVATIONS[spec.output_activation]]
    pacts = [ACTIVATIONS[a] for a in spec.param_activations]
    x0c = xc
    x, p = None, xp
    last = len(params) - 1
    for l, (layer, act) in enumerate(zip(params, acts)):
        z = (x0c * ad.relu(p @ layer["Vcp"] + layer["ccp"])) @ layer["Vc"]
        if l > 0:
            z = z + (x * ad.relu(p @ layer["Wcp"] + layer["bcp"])) @ layer["Wc"]
        if "Ucp" in layer:
            offset = p @ layer["Ucp"] + layer["bc"]
            x_new = act(z + offset) - act(offset)
        else:
            x_new = act(z)
        if l < last:
            bp = layer["bp"]
            p = pacts[l](p @ layer["Wp"] + bp) - pacts[l](bp)
        x = x_new
    return x


def forward(spec: NetworkSpec, params, *inputs):
    if spec.kind == "ficnn":
        return ficnn_forward(spec, params, *inputs)
    if spec.kind == "picnn":
        return picnn_forward(spec, params, *inputs)
    return mlp_forward(spec, params, *inputs)


# serialization ---------------------------------------------------------------


def params_to_jsonable(spec: NetworkSpec, params) -> dict:
    return {
        "spec": spec.to_dict(),
        "constraint": spec.constraint,
        "layers": [
            {name: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=np.float64).tolist()} for name, v in sorted(layer.items())}
            for layer in params
        ],
    }


def params_from_jsonable(doc: dict):
    spec = NetworkSpec.from_dict(doc["spec"])
    params = []
    for layer in doc["layers"]:
        params.append(
            {name: np.asarray(t["data"], dtype=np.float64).reshape(t["shape"]) for name, t in layer.items()}
        )
    check_params(spec, params)
    return spec, params

