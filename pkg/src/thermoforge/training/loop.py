"""Training driver: full-batch Adam with projection, best-model tracking,
CSV logging and bit-exact resume."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import diffcore as ad
from .. import netarch
from ..checkpoint import model_from_dict, model_to_dict, save_model
from ..constitutive import ENERGY_NETS, NETWORKS, NeuralThermoModel, init_model_params
from .data import MaterialPointSamples, NormalizationState, Scenario, normalization_for, prepare
from .losses import (
    LossBreakdown,
    LossWeights,
    ModelSettings,
    RegularizationSpec,
    calibrate_scales,
    fem_loss,
    materialpoint_loss,
    regularization_loss,
)
from .optim import ACTIVITY_NETS, AdamState, activity_report, adam_update, flatten, unflatten

log = logging.getLogger(__name__)

MODES = ("fem", "material-point")
LOG_COLUMNS = ["epoch", "L_D", "L_N", "L_R", "L_aux", "L_total"] + [f"activity_{n}" for n in ACTIVITY_NETS]


class TrainingAborted(RuntimeError):
    def __init__(self, message, epoch, best_model=None):
        super().__init__(message)
        self.epoch = epoch
        self.best_model = best_model


@dataclass
class TrainConfig:
    mode: str = "fem"
    epochs: int = 3000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float | None = None
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    regularization: RegularizationSpec = field(default_factory=RegularizationSpec)
    nT_mode: str = "computed"
    T0: float = 293.15
    eps_gr: float = 1e-6
    energy_scale: float | str = "auto"  # "auto": least-squares fit at initialization (fem), max |P11| (material point)
    dissipation_scale: float | str = "auto"  # "auto": least-squares fit at initialization
    balances: str = "coupled"  # "thermal": rigid heat conductor, energy balance only
    checkpoint_every: int = 0  # 0: only at the end

    def __post_init__(self):
        if self.mode not in MODES:
            raise netarch.ConfigurationError(f"mode must be one of {MODES}")
        if self.epochs < 0 or self.lr <= 0.0:
            raise netarch.ConfigurationError("epochs must be >= 0 and lr > 0")
        for name in ("energy_scale", "dissipation_scale"):
            v = getattr(self, name)
            if v != "auto" and not (isinstance(v, (int, float)) and v > 0.0):
                raise netarch.ConfigurationError(f'{name} must be "auto" or positive')
        if self.mode == "material-point":
            # uniaxial data carry no thermal information to fix the temperature scale
            self.nT_mode = "fixed"

    def to_dict(self):
        d = asdict(self)
        d["regularization"] = self.regularization.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        w = d.pop("weights", {})
        if "lambda_A" in d:
            w = dict(w, A=d.pop("lambda_A"))
        reg = d.pop("regularization", None)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise netarch.ConfigurationError(f"unknown training options {sorted(unknown)}")
        return cls(
            weights=LossWeights(**w),
            regularization=RegularizationSpec.from_dict(reg) if reg is not None else RegularizationSpec(),
            **d,
        )


@dataclass
class TrainRecord:
    epoch: int
    L_D: float
    L_N: float
    L_R: float
    L_aux: float
    L_total: float
    activity: dict
    best_epoch: int

    def row(self):
        return [self.epoch, self.L_D, self.L_N, self.L_R, self.L_aux, self.L_total] + [self.activity[n] for n in ACTIVITY_NETS]


@dataclass
class TrainResult:
    history: list
    best_model: NeuralThermoModel
    final_model: NeuralThermoModel
    normalization: NormalizationState
    best_epoch: int

    @property
    def best_loss(self):
        return self.history[self.best_epoch].L_total if self.history else math.nan


def _trainable(config: TrainConfig):
    return ENERGY_NETS if config.mode == "material-point" else NETWORKS


def _material_point_norm(samples: MaterialPointSamples):
    return NormalizationState(
        mechanical=float(np.abs(samples.P11).max()) or 1.0, thermal=1.0, temperature=float(np.abs(samples.T).max())
    )


class _Objective:
    """Total loss of the configured mode as a function of the flat arrays of
    the trainable subnetworks."""

    def __init__(self, config, specs, norm, prepared=None, samples=None):
        self.config = config
        self.specs = specs
        self.norm = norm
        self.prepared = prepared
        self.samples = samples
        self.names = _trainable(config)
        self.settings = ModelSettings(
            config.T0 / norm.temperature, config.eps_gr, config.nT_mode, norm.energy, norm.gradient, norm.dissipation
        )

    def __call__(self, template, arrays):
        params = unflatten(template, self.names, arrays)
        c = self.config
        if c.mode == "fem":
            return fem_loss(self.specs, params, self.prepared, c.weights, c.regularization, self.settings, self.norm.temperature)
        res = materialpoint_loss(self.specs, params, self.samples, self.settings, self.norm.temperature, self.norm.mechanical)
        if res.n_failed:
            log.warning("%d material-point samples excluded (entropy solve failed)", res.n_failed)
        L_R = regularization_loss(params, RegularizationSpec({k: v for k, v in c.regularization.coefficients.items() if k in self.names}))
        total = res.loss + L_R * c.weights.R
        parts = LossBreakdown(*(float(np.asarray(ad.value(v))) for v in (res.loss, 0.0, L_R, 0.0, total)))
        return total, parts

    def value_and_grad(self, params):
        arrays = flatten(params, self.names)
        box = {}

        def f(*xs):
            total, parts = self(params, list(xs))
            box["parts"] = parts
            return total

        try:
            _, grads = ad.value_and_grad(f, arrays)
        except (ad.NonFiniteError, FloatingPointError):
            return box.get("parts"), None
        return box["parts"], grads

    def evaluate(self, params):
        return self(params, flatten(params, self.names))[1]


def _model(config, specs, params, norm):
    return NeuralThermoModel(
        params, specs, T0=config.T0, eps_gr=config.eps_gr, nT_mode=config.nT_mode,
        temperature_scale=norm.temperature, energy_scale=norm.energy, gradient_scale=norm.gradient,
        dissipation_scale=norm.dissipation,
    )


def _write_log(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for rec in history:
            w.writerow([rec.epoch] + [repr(float(v)) for v in rec.row()[1:]])


def _params_doc(specs, params):
    return {n: netarch.params_to_jsonable(specs[n], params[n]) for n in NETWORKS}


def _params_from_doc(doc):
    return {n: netarch.params_from_jsonable(doc[n])[1] for n in NETWORKS}


def save_state(path, config, specs, norm, epoch, params, adam, best_epoch, best_params, history):
    doc = {
        "config": config.to_dict(),
        "normalization": norm.to_dict(),
        "epoch": epoch,
        "params": _params_doc(specs, params),
        "adam": adam.to_dict() if adam is not None else None,
        "best_epoch": best_epoch,
        "best_params": _params_doc(specs, best_params) if best_params is not None else None,
        "history": [asdict(r) for r in history],
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def _fix_scales(config, specs, params, norm, prepared):
    """Resolve the energy and dissipation scales into ``norm``."""
    E, D = config.energy_scale, config.dissipation_scale
    if config.mode == "material-point":
        norm.energy = norm.mechanical if E == "auto" else float(E)
        norm.dissipation = None if D == "auto" else float(D)
        return
    settings = ModelSettings(config.T0 / norm.temperature, config.eps_gr, config.nT_mode, 1.0, norm.gradient)
    E_fit, D_fit = calibrate_scales(
        specs, params, prepared, settings, norm.temperature, config.weights, None if E == "auto" else float(E)
    )
    norm.energy = E_fit
    norm.dissipation = D_fit if D == "auto" else float(D)
    log.info("energy scale %.6g, dissipation scale %.6g", norm.energy, norm.dissipation)


def train(config: TrainConfig, scenarios=None, samples: MaterialPointSamples | None = None, out_dir=None, resume=None, specs=None):
    """Fit a model.  ``scenarios`` (fem mode) or ``samples`` (material-point
    mode) supply the data; ``resume`` is a path to a saved training state.

    With ``out_dir`` the run writes ``train_log.csv``, ``best_model.json``,
    ``final_model.json`` and ``train_state.json``.
    """
    specs = specs or netarch.default_specs()
    prepared = None
    if config.mode == "fem":
        if not scenarios:
            raise netarch.ConfigurationError("fem mode needs at least one scenario")
        norm = normalization_for(scenarios)
    else:
        if samples is None:
            raise netarch.ConfigurationError("material-point mode needs samples")
        norm = _material_point_norm(samples)
    names = _trainable(config)

    if resume is not None:
        with open(resume) as fh:
            st = json.load(fh)
        norm = NormalizationState.from_dict(st["normalization"])
        start = int(st["epoch"])
        params = _params_from_doc(st["params"])
        adam = AdamState.from_dict(st["adam"], flatten(params, names)) if st["adam"] else None
        best_epoch = int(st["best_epoch"])
        best_params = _params_from_doc(st["best_params"]) if st["best_params"] else None
        history = [TrainRecord(**r) for r in st["history"]]
    else:
        start = 0
        params = init_model_params(config.seed, specs)
        adam = None
        best_epoch, best_params, history = -1, None, []

    if config.mode == "fem":
        prepared = [prepare(sc, norm, config.balances) for sc in scenarios]
    if resume is None:
        _fix_scales(config, specs, params, norm, prepared)
    objective = _Objective(config, specs, norm, prepared=prepared, samples=samples)

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        state_path = os.path.join(out_dir, "train_state.json")

    def finish():
        if out_dir:
            _write_log(os.path.join(out_dir, "train_log.csv"), history)
            save_state(state_path, config, specs, norm, epoch_next, params, adam, best_epoch, best_params, history)
            if best_params is not None:
                save_model(os.path.join(out_dir, "best_model.json"), _model(config, specs, best_params, norm), norm,
                           {"epoch": best_epoch})
            save_model(os.path.join(out_dir, "final_model.json"), _model(config, specs, params, norm), norm, {"epoch": epoch_next})

    epoch_next = start
    for epoch in range(start, config.epochs):
        parts, grads = objective.value_and_grad(params)
        if grads is None or parts is None or not math.isfinite(parts.total):
            finish()
            best = _model(config, specs, best_params, norm) if best_params is not None else None
            raise TrainingAborted(f"non-finite loss at epoch {epoch}", epoch, best)
        if best_params is None or parts.total < history[best_epoch].L_total:
            best_epoch, best_params = epoch, params
        act = activity_report(params)
        rec = TrainRecord(epoch, parts.D, parts.N, parts.R, parts.aux, parts.total, act, best_epoch)
        history.append(rec)
        if epoch % 50 == 0 or epoch == config.epochs - 1:
            log.info("epoch %d: L_D %.3e L_N %.3e L_R %.3e L_aux %.3e total %.3e", epoch, parts.D, parts.N, parts.R, parts.aux, parts.total)
        arrays = flatten(params, names)
        if adam is None:
            adam = AdamState.zeros_like(arrays)
        new, adam = adam_update(arrays, grads, adam, config.lr, config.beta1, config.beta2, config.adam_eps, config.clip_norm)
        params = unflatten(params, names, new)
        for n in names:
            params[n] = netarch.project_constraints(specs[n], params[n])
        epoch_next = epoch + 1
        if out_dir and config.checkpoint_every and epoch_next % config.checkpoint_every == 0:
            finish()

    finish()
    best = best_params if best_params is not None else params
    return TrainResult(history, _model(config, specs, best, norm), _model(config, specs, params, norm), norm, max(best_epoch, 0))


def load_training_data(paths):
    return [Scenario.load(p) for p in paths]
