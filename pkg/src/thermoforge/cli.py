"""Command-line entry point: ``thermoforge {generate,train,infer,simulate,report}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .checkpoint import load_model
from .constitutive import ConvergenceError, ModelInvalidError
from .fem.io import read_table, reaction_series, write_fields, write_reactions
from .fem.problem import Problem
from .fem.solver import NeuralMaterial, SolverError, forward_solve, reaction_vectors
from .refmodels import reference_model
from .scenarios import beam_test, generate, heat_bar, plate_scenarios
from .training import MaterialPointSamples, Scenario, TrainConfig, TrainingAborted, train
from .training.loop import LOG_COLUMNS

log = logging.getLogger("thermoforge")

EXIT_FAILURE = 1


class CommandError(RuntimeError):
    pass


# helpers ----------------------------------------------------------------------------


def _load_config(path):
    if path is None:
        return {}, None
    with open(path) as fh:
        return json.load(fh), os.path.dirname(os.path.abspath(path))


def _resolve(base, p):
    if p is None or os.path.isabs(p) or base is None:
        return p
    return os.path.join(base, p)


def _sha256(path):
    h = hashlib.sha256()
    if os.path.isdir(path):
        for root, _, files in sorted(os.walk(path)):
            for f in sorted(files):
                with open(os.path.join(root, f), "rb") as fh:
                    h.update(f.encode())
                    h.update(fh.read())
    else:
        with open(path, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def _write_manifest(out, args, inputs, outputs, status):
    import scipy

    doc = {
        "command": args.command,
        "config": os.path.abspath(args.config) if args.config else None,
        "seed": args.seed,
        "threads": args.threads,
        "mode": getattr(args, "mode", None),
        "inputs": {p: _sha256(p) for p in inputs if p and os.path.exists(p)},
        "output_dir": os.path.abspath(out),
        "outputs": sorted(os.path.relpath(p, out) for p in outputs),
        "status": status,
        "versions": {"thermoforge": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()},
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=1)


BENCHMARKS = ("heat_bar", "plate_deformation", "plate_thermal", "plate_combined", "beam", "beam_isothermal")


def _problem_from_config(cfg, base):
    if "problem" in cfg:
        return Problem.from_json(_resolve(base, cfg["problem"]))
    name = cfg.get("benchmark")
    opts = cfg.get("options", {})
    if name == "heat_bar":
        return heat_bar(**opts)
    if name and name.startswith("plate_"):
        return plate_scenarios(**opts)[name.split("_", 1)[1]]
    if name == "beam":
        return beam_test(**opts)
    if name == "beam_isothermal":
        return beam_test(isothermal=True, **opts)
    raise CommandError(f"config needs 'problem' (path) or 'benchmark' (one of {BENCHMARKS})")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def _export_history(out, problem, x, R, node_sets=None):
    outputs = write_fields(os.path.join(out, "fields"), problem, x)
    for ns in node_sets or sorted(problem.mesh.node_sets):
        if ns != "all":
            outputs.append(write_reactions(os.path.join(out, f"reactions_{ns}.csv"), problem, R, ns))
    return outputs


# commands -----------------------------------------------------------------------------


def cmd_generate(args, cfg, base):
    """Forward solve with a reference model and store a training scenario."""
    problem = _problem_from_config(cfg, base)
    ref_cfg = cfg.get("reference", {"kind": "thermal"})
    ref = reference_model(ref_cfg.get("kind", "thermal"), **ref_cfg.get("params", {}))
    name = cfg.get("name", cfg.get("benchmark", "scenario"))
    sc = generate(problem, ref, name)
    out_sc = os.path.join(args.out, "scenario")
    sc.save(out_sc)
    outputs = [os.path.join(out_sc, f) for f in ("problem.json", "fields.npz", "scenario.json")]
    outputs += _export_history(args.out, problem, sc.x, sc.reactions)
    return [p for p in [cfg.get("problem") and _resolve(base, cfg["problem"])] if p], outputs


def cmd_train(args, cfg, base):
    cfg = dict(cfg)
    scenario_dirs = [_resolve(base, p) for p in cfg.pop("scenarios", [])]
    samples_path = _resolve(base, cfg.pop("samples", None))
    resume = _resolve(base, cfg.pop("resume", None))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.mode is not None:
        cfg["mode"] = args.mode
    config = TrainConfig.from_dict(cfg)
    inputs = list(scenario_dirs)
    if config.mode == "fem":
        result = train(config, scenarios=[Scenario.load(d) for d in scenario_dirs], out_dir=args.out, resume=resume)
    else:
        if samples_path is None:
            raise CommandError("material-point mode needs 'samples' (CSV with T, F11, P11)")
        inputs.append(samples_path)
        result = train(config, samples=MaterialPointSamples.from_csv(samples_path), out_dir=args.out, resume=resume)
    log.info("best epoch %d, loss %.6e", result.best_epoch, result.best_loss)
    outs = [os.path.join(args.out, f) for f in ("train_log.csv", "best_model.json", "final_model.json", "train_state.json")]
    return inputs, outs


STATE_COLUMNS = ["F11", "F12", "F13", "F21", "F22", "F23", "F31", "F32", "F33", "T", "g1", "g2", "g3"]


def _read_states(path):
    tab = read_table(path)
    n = len(next(iter(tab.values())))
    F = np.stack([tab.get(c, np.full(n, 1.0 if c in ("F11", "F22", "F33") else 0.0)) for c in STATE_COLUMNS[:9]], axis=1).reshape(n, 3, 3)
    if "T" not in tab:
        raise CommandError("state CSV needs a T column")
    g = np.stack([tab.get(c, np.zeros(n)) for c in STATE_COLUMNS[10:]], axis=1)
    return F, tab["T"], g


def _pointwise(model, F, T, g, mode):
    """Predictions at each state; points whose entropy solve fails are
    reported with ``converged = 0``."""
    rows = []
    for i in range(len(T)):
        Fi, Ti, gi = F[i : i + 1], T[i : i + 1], g[i : i + 1]
        try:
            s = model.entropy_mlp_predict(Fi, Ti) if mode == "mlp" else model.solve_entropy(Fi, Ti)
            P, T_state = model.stress_and_temperature(Fi, s)
            q = model.heat_flux(gi, Fi, s)
            e = model.internal_energy(Fi, s)
            phi = model.dissipation_potential(gi, Fi, s)
            ok = 1
        except (ConvergenceError, ModelInvalidError, FloatingPointError, ValueError) as exc:
            log.warning("state %d: %s", i, exc)
            s = np.full(1, np.nan)
            P, q = np.full((1, 3, 3), np.nan), np.full((1, 3), np.nan)
            T_state = e = phi = np.full(1, np.nan)
            ok = 0
        rows.append([i, mode, ok, s[0], T_state[0], e[0], phi[0], *P[0].ravel(), *q[0]])
    return rows


def cmd_infer(args, cfg, base):
    ckpt = _resolve(base, cfg.get("checkpoint"))
    if ckpt is None:
        raise CommandError("config needs 'checkpoint'")
    model = load_model(ckpt)
    modes = ["newton", "mlp"] if cfg.get("compare_mlp", False) else ["newton"]
    inputs, outputs = [ckpt], []
    failed = False
    if "states" in cfg:
        path = _resolve(base, cfg["states"])
        inputs.append(path)
        F, T, g = _read_states(path)
        header = ["state", "entropy_mode", "converged", "s", "T_state", "e", "phi"]
        header += [f"P{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)] + ["q1", "q2", "q3"]
        rows = [r for m in modes for r in _pointwise(model, F, T, g, m)]
        failed = any(r[2] == 0 for r in rows)
        outputs.append(_write_csv(os.path.join(args.out, "predictions.csv"), header, rows))
    if "scenario" in cfg:
        sdir = _resolve(base, cfg["scenario"])
        inputs.append(sdir)
        sc = Scenario.load(sdir)
        p = sc.problem
        node_sets = cfg.get("node_sets") or [n for n in sorted(p.mesh.node_sets) if n != "all"]
        for mode in modes:
            mat = NeuralMaterial(model, mode)
            hist = forward_solve(p, mat)
            R = reaction_vectors(p, hist, mat)
            sub = os.path.join(args.out, mode)
            outputs += _export_history(sub, p, hist.x, R, node_sets)
            for ns in node_sets:
                Fr, Qr = reaction_series(p, sc.reactions, ns)
                Fp, Qp = reaction_series(p, R, ns)
                rows = [[n + 1, *Fr[n], *Fp[n], Qr[n], Qp[n]] for n in range(p.n_steps)]
                header = ["step", "Fx_ref", "Fy_ref", "Fz_ref", "Fx_pred", "Fy_pred", "Fz_pred", "Q_ref", "Q_pred"]
                outputs.append(_write_csv(os.path.join(args.out, f"parity_{mode}_{ns}.csv"), header, rows))
    if not outputs:
        raise CommandError("config needs 'states' and/or 'scenario'")
    if failed:
        raise _PartialFailure(inputs, outputs, "entropy solve failed at some states")
    return inputs, outputs


class _PartialFailure(RuntimeError):
    def __init__(self, inputs, outputs, message):
        super().__init__(message)
        self.inputs, self.outputs = inputs, outputs


def cmd_simulate(args, cfg, base):
    problem = _problem_from_config(cfg, base)
    inputs = [p for p in [cfg.get("problem") and _resolve(base, cfg["problem"])] if p]
    mcfg = cfg.get("model", {"reference": "thermal"})
    if "checkpoint" in mcfg:
        path = _resolve(base, mcfg["checkpoint"])
        inputs.append(path)
        material = NeuralMaterial(load_model(path), mcfg.get("entropy_mode", "newton"))
    else:
        material = reference_model(mcfg.get("reference", "thermal"), **mcfg.get("params", {}))
    hist = forward_solve(problem, material)
    R = reaction_vectors(problem, hist, material)
    outputs = _export_history(args.out, problem, hist.x, R)
    problem.to_json(os.path.join(args.out, "problem.json"))
    return inputs, outputs + [os.path.join(args.out, "problem.json")]


def cmd_report(args, cfg, base):
    run = args.run_dir or _resolve(base, cfg.get("run_dir"))
    if run is None:
        raise CommandError("report needs a run directory")
    outputs, inputs = [], []
    log_path = os.path.join(run, "train_log.csv")
    if os.path.exists(log_path):
        inputs.append(log_path)
        tab = read_table(log_path)
        loss_cols = LOG_COLUMNS[:6]
        rows = zip(*(tab[c] for c in loss_cols))
        outputs.append(_write_csv(os.path.join(args.out, "loss_curve.csv"), loss_cols, ([int(r[0]), *r[1:]] for r in rows)))
        act_cols = [c for c in LOG_COLUMNS if c.startswith("activity_")]
        acts = np.stack([tab[c] for c in act_cols], axis=1)
        rows = [[int(e), *a] for e, a in zip(tab["epoch"], acts)]
        outputs.append(_write_csv(os.path.join(args.out, "activity.csv"), ["epoch"] + [c[len("activity_"):] for c in act_cols], rows))
    for f in sorted(os.listdir(run)):
        if f.startswith("parity_") and f.endswith(".csv"):
            inputs.append(os.path.join(run, f))
            tab = read_table(os.path.join(run, f))
            header = ["step", "quantity", "reference", "prediction"]
            rows = []
            for q in ("Fx", "Fy", "Fz", "Q"):
                ref, pred = tab[f"{q}_ref"], tab[f"{q}_pred"]
                rows += [[int(s), q, r, p] for s, r, p in zip(tab["step"], ref, pred)]
            outputs.append(_write_csv(os.path.join(args.out, "report_" + f), header, rows))
    if not outputs:
        raise CommandError(f"nothing to report in {run!r}")
    return inputs, outputs


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "infer": cmd_infer, "simulate": cmd_simulate, "report": cmd_report}


def build_parser():
    parser = argparse.ArgumentParser(prog="thermoforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMANDS[name].__doc__)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="seed for all randomness")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="BLAS thread count (1 gives bitwise reproducibility)")
        p.add_argument("--mode", choices=("fem", "material-point"), default=None)
        if name == "report":
            p.add_argument("run_dir", nargs="?", help="directory of a train or infer run")
    return parser


def _configure_logging():
    level = os.environ.get("THERMOFORGE_LOG", "info").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "INFO"
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    from threadpoolctl import threadpool_limits

    os.makedirs(args.out, exist_ok=True)
    cfg, base = _load_config(args.config)
    inputs = [os.path.abspath(args.config)] if args.config else []
    t0 = time.time()
    with threadpool_limits(limits=max(1, args.threads)):
        try:
            ins, outs = COMMANDS[args.command](args, cfg, base)
            status, code = "ok", 0
        except _PartialFailure as exc:
            ins, outs = exc.inputs, exc.outputs
            status, code = f"failed: {exc}", EXIT_FAILURE
            log.error("%s", exc)
        except (CommandError, SolverError, TrainingAborted, ConvergenceError, ModelInvalidError, OSError, ValueError) as exc:
            ins, outs = [], []
            status, code = f"failed: {exc}", EXIT_FAILURE
            log.error("%s", exc)
    _write_manifest(args.out, args, inputs + list(ins), outs, status)
    log.info("%s finished in %.1f s (%s)", args.command, time.time() - t0, status)
    return code


if __name__ == "__main__":
    sys.exit(main())
