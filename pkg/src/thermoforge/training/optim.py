"""Adam with constraint projection, parameter flattening and the activity
metric."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import netarch
from ..constitutive import DISSIPATION_NET, ENERGY_NETS


def flatten(params, names):
    """Deterministically ordered list of the arrays of ``names``."""
    return [params[n][i][k] for n in names for i in range(len(params[n])) for k in sorted(params[n][i])]


def unflatten(template, names, arrays):
    out = {n: [dict(layer) for layer in template[n]] for n in template}
    it = iter(arrays)
    for n in names:
        for i in range(len(out[n])):
            for k in sorted(out[n][i]):
                out[n][i][k] = next(it)
    return out


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays):
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)

    def to_dict(self):
        return {"t": self.t, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}

    @classmethod
    def from_dict(cls, d, template):
        shape = [np.shape(a) for a in template]
        m = [np.asarray(a, dtype=np.float64).reshape(s) for a, s in zip(d["m"], shape)]
        v = [np.asarray(a, dtype=np.float64).reshape(s) for a, s in zip(d["v"], shape)]
        return cls(m, v, int(d["t"]))


def clip_by_global_norm(grads, clip_norm):
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if clip_norm is None or norm <= clip_norm or norm == 0.0:
        return grads
    return [g * (clip_norm / norm) for g in grads]


def adam_update(arrays, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
    """One bias-corrected Adam update on flat arrays; returns new arrays and
    state (inputs are not modified)."""
    grads = clip_by_global_norm([np.asarray(g, dtype=np.float64) for g in grads], clip_norm)
    t = state.t + 1
    m = [beta1 * mi + (1.0 - beta1) * g for mi, g in zip(state.m, grads)]
    v = [beta2 * vi + (1.0 - beta2) * g * g for vi, g in zip(state.v, grads)]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new = [a - lr * (mi / c1) / (np.sqrt(vi / c2) + eps) for a, mi, vi in zip(arrays, m, v)]
    return new, AdamState(m, v, t)


def adam_step(specs, params, grads, state: AdamState | None, names, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
    """Adam on the subnetworks ``names`` followed by projection onto the
    constraint set.  ``grads`` mirrors the structure of ``params``."""
    arrays = flatten(params, names)
    g = flatten(grads, names)
    if state is None:
        state = AdamState.zeros_like(arrays)
    new, state = adam_update(arrays, g, state, lr, beta1, beta2, eps, clip_norm)
    out = unflatten(params, names, new)
    for n in names:
        out[n] = netarch.project_constraints(specs[n], out[n])
    return out, state


ACTIVITY_NETS = ENERGY_NETS + (DISSIPATION_NET,)


def activity_report(params, names=ACTIVITY_NETS):
    """Share of each subnetwork in the summed Frobenius norms of all
    parameter tensors."""
    agg = np.array([sum(float(np.linalg.norm(np.asarray(a).ravel())) for a in flatten(params, [n])) for n in names])
    total = agg.sum()
    if total == 0.0:
        return {n: 0.0 for n in names}
    shares = agg / total
    return dict(zip(names, shares.tolist()))
