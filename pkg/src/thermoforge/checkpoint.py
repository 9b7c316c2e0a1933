"""JSON checkpoints of learned models.

Python's float repr is the shortest string that round-trips, so parameters
survive save/load bit-exactly.
"""

from __future__ import annotations

import json

from . import netarch
from .constitutive import NETWORKS, NeuralThermoModel

FORMAT = "thermoforge-model/1"


def model_to_dict(model: NeuralThermoModel, normalization=None, extra=None) -> dict:
    n_P, n_T = model.constants()
    doc = {
        "format": FORMAT,
        "networks": {n: netarch.params_to_jsonable(model.specs[n], model.params[n]) for n in NETWORKS},
        "T0": model.T0,
        "s0": 0.0,
        "eps_gr": model.eps_gr,
        "nT_mode": model.nT_mode,
        "n_P": n_P,
        "n_T": n_T,
        "temperature_scale": model.temperature_scale,
        "energy_scale": model.energy_scale,
        "gradient_scale": model.gradient_scale,
        "dissipation_scale": model.phi_scale,
    }
    if normalization is not None:
        doc["normalization"] = normalization.to_dict()
    if extra:
        doc["extra"] = extra
    return doc


def model_from_dict(doc: dict) -> NeuralThermoModel:
    if doc.get("format") != FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    specs, params = {}, {}
    for n in NETWORKS:
        specs[n], params[n] = netarch.params_from_jsonable(doc["networks"][n])
    model = NeuralThermoModel(
        params,
        specs,
        T0=float(doc["T0"]),
        eps_gr=float(doc["eps_gr"]),
        nT_mode=doc["nT_mode"],
        temperature_scale=float(doc["temperature_scale"]),
        energy_scale=float(doc["energy_scale"]),
        gradient_scale=float(doc.get("gradient_scale", 1.0)),
        dissipation_scale=float(doc.get("dissipation_scale", doc["energy_scale"])),
    )
    # recomputed constants must agree with the frozen ones
    n_P, n_T = model.constants()
    if (n_P, n_T) != (float(doc["n_P"]), float(doc["n_T"])):
        raise ValueError("stored normalization constants do not match the parameters")
    return model


def save_model(path, model: NeuralThermoModel, normalization=None, extra=None):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, normalization, extra), fh)


def load_model(path) -> NeuralThermoModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def load_normalization(path):
    from .training.data import NormalizationState

    with open(path) as fh:
        doc = json.load(fh)
    return NormalizationState.from_dict(doc["normalization"]) if "normalization" in doc else None
