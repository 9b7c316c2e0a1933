"""Acceptance suite: one pass/fail line per criterion, printed in the
terminal summary.  Criterion 9 needs ``--runslow``."""

import csv

import numpy as np
import pytest
from scipy.optimize import brentq

from thermoforge import constitutive as cm
from thermoforge import netarch
from thermoforge.checkpoint import load_model, save_model
from thermoforge.constitutive import NeuralThermoModel
from thermoforge.fem import NeuralMaterial, forward_solve, reactions
from thermoforge.kinematics import cofactor, random_rotation
from thermoforge.refmodels import CoupledModelParams, ThermalModelParams
from thermoforge.scenarios import beam_test, generate, heat_bar, heat_bar_reference, plate_scenarios, structural_reference
from thermoforge.training import LossWeights, MaterialPointSamples, NormalizationState, TrainConfig, prepare, train
from thermoforge.training.loop import _Objective
from thermoforge.training.optim import flatten

from conftest import random_F
import test_fem as fem_checks
from test_training import small_problem

T0 = 293.15


def models(n, **kw):
    kw = {"temperature_scale": T0, "energy_scale": 1.0, **kw}
    return [NeuralThermoModel.initialize(seed, **kw) for seed in range(n)]


def rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


# 1 ---------------------------------------------------------------------------------------------


def normalization_metrics(ms):
    I = np.eye(3)
    e = max(abs(float(m.internal_energy(I, 0.0))) for m in ms)
    P = max(float(np.abs(m.piola_stress(I, 0.0)).max()) for m in ms)
    dT = max(abs(float(m.temperature_of(I, 0.0)) - T0) for m in ms)
    return e, P, dT


def test_criterion_1_normalization(criterion):
    e, P, dT = normalization_metrics(models(100))
    ok = e == 0.0 and P < 1e-10 and dT < 1e-8 * T0
    criterion(1, f"100 inits: max|e(I,0)|={e:.1e} (exact 0), max|P(I,0)|={P:.1e} (<1e-10), max|T(I,0)-T0|={dT:.1e} (<{1e-8 * T0:.1e})", ok)
    assert ok


# 2 ---------------------------------------------------------------------------------------------


def admissibility_metrics(ms, n_per_model, rng):
    worst = dict(energy_def=-np.inf, energy_s=-np.inf, phi=-np.inf, slope=np.inf, phi_min=np.inf, phi0=0.0, qg=np.inf)
    lam = 0.37
    for m in ms:
        specs, params = m.specs, m.params
        a, b = rng.uniform(-0.5, 0.5, (2, n_per_model, 3))
        s = rng.uniform(-1.0, 1.0, n_per_model)
        f = lambda x, t: np.asarray(cm.aux_energy_core(specs, params, x[:, 0], x[:, 1], x[:, 2], t))
        gap = f(lam * a + (1 - lam) * b, s) - (lam * f(a, s) + (1 - lam) * f(b, s))
        worst["energy_def"] = max(worst["energy_def"], gap.max())
        s1, s2 = rng.uniform(-1.0, 1.0, (2, n_per_model))
        gap = f(a, lam * s1 + (1 - lam) * s2) - (lam * f(a, s1) + (1 - lam) * f(a, s2))
        worst["energy_s"] = max(worst["energy_s"], gap.max())

        F = random_F(rng, n_per_model, 0.15)
        sp = rng.uniform(-1.0, 1.0, n_per_model)
        g1, g2 = rng.standard_normal((2, n_per_model, 3))
        phi = lambda g: m.dissipation_potential(g, F, sp)
        gap = phi(lam * g1 + (1 - lam) * g2) - (lam * phi(g1) + (1 - lam) * phi(g2))
        worst["phi"] = max(worst["phi"], gap.max())
        worst["phi_min"] = min(worst["phi_min"], phi(g1).min())
        worst["phi0"] = max(worst["phi0"], np.abs(phi(np.zeros_like(g1))).max())
        worst["qg"] = min(worst["qg"], np.einsum("ni,ni->n", m.heat_flux(g1, F, sp), g1).min())
        worst["slope"] = min(worst["slope"], m.temperature_slope(F, sp).min())
    return worst


def test_criterion_2_convexity_admissibility(criterion):
    w = admissibility_metrics(models(10), 1000, np.random.default_rng(2))
    ok = (
        w["energy_def"] <= 1e-12 and w["energy_s"] <= 1e-12 and w["phi"] <= 1e-12 and w["slope"] > 0.0
        and w["phi_min"] >= 0.0 and w["phi0"] == 0.0 and w["qg"] >= -1e-12
    )
    criterion(
        2,
        f"1e4 states: secant gaps e(def)={w['energy_def']:.1e} e(s)={w['energy_s']:.1e} phi={w['phi']:.1e} (<=1e-12), "
        f"min d2e/ds2={w['slope']:.2e} (>0), min phi={w['phi_min']:.1e}, |phi(0)|={w['phi0']:.0e}, min q.g={w['qg']:.1e}",
        ok,
    )
    assert ok


# 3 ---------------------------------------------------------------------------------------------


def symmetry_metrics(m, n, rng):
    err = 0.0
    for k in range(n):
        Q = random_rotation(1000 + k)
        F = random_F(rng, 1, 0.15)[0]
        s = rng.uniform(-1.0, 1.0)
        g = rng.standard_normal(3)
        e = m.internal_energy(F, s)
        P = m.piola_stress(F, s)
        phi = m.dissipation_potential(g, F, s)
        q = m.heat_flux(g, F, s)
        err = max(
            err,
            rel(m.internal_energy(Q @ F, s), e),
            rel(m.internal_energy(F @ Q, s), e),
            rel(m.piola_stress(Q @ F, s), Q @ P),
            rel(m.dissipation_potential(g, Q @ F, s), phi),
            rel(m.heat_flux(g, Q @ F, s), q),
            rel(m.dissipation_potential(Q.T @ g, F @ Q, s), phi),
            rel(m.heat_flux(Q.T @ g, F @ Q, s), Q.T @ q),
        )
    return err


def test_criterion_3_symmetry(criterion):
    err = symmetry_metrics(models(1, energy_scale=1000.0)[0], 100, np.random.default_rng(3))
    ok = err < 1e-9
    criterion(3, f"100 rotations: max rel err of e, P, phi, q identities = {err:.1e} (<1e-9)", ok)
    assert ok


# 4 ---------------------------------------------------------------------------------------------


def d5(f, h):
    return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)


def loss_fixture():
    truth = NeuralThermoModel.initialize(0, T0=T0, temperature_scale=320.0, energy_scale=2000.0, gradient_scale=0.01, dissipation_scale=3.0)
    sc = generate(small_problem(), truth)
    norm = NormalizationState(1.0, 1.0, 320.0, 0.01, 2000.0, 3.0)
    config = TrainConfig(energy_scale=2000.0, dissipation_scale=3.0)
    return _Objective(config, netarch.default_specs(), norm, prepared=[prepare(sc, norm)])


def test_criterion_4_differentiation(criterion):
    rng = np.random.default_rng(4)
    m = models(1, energy_scale=1000.0)[0]
    e_err = phi_err = 0.0
    for F in random_F(rng, 100, 0.15):
        s = rng.uniform(-1.0, 1.0)
        g = rng.standard_normal(3) * 0.5
        P, T = m.stress_and_temperature(F, s)
        P_fd = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                E = np.zeros((3, 3))
                E[i, j] = 1.0
                P_fd[i, j] = d5(lambda h: m.internal_energy(F + h * E, s), 1e-4)
        T_fd = d5(lambda h: m.internal_energy(F, s + h), 1e-4)
        q = m.heat_flux(g, F, s)
        q_fd = np.array([d5(lambda h: m.dissipation_potential(g + h * e, F, s), 1e-4) for e in np.eye(3)])
        e_err = max(e_err, rel(P, P_fd), rel(T, T_fd))
        phi_err = max(phi_err, rel(q, q_fd))

    obj = loss_fixture()
    loss_err = 0.0
    for seed in range(100):
        params = NeuralThermoModel.initialize(seed).params
        _, grads = obj.value_and_grad(params)
        arrays = flatten(params, obj.names)
        dirs = [np.random.default_rng(seed).standard_normal(a.shape) for a in arrays]
        engine = sum(float(np.sum(gr * d)) for gr, d in zip(grads, dirs))
        fd = d5(lambda h: obj(params, [a + h * d for a, d in zip(arrays, dirs)])[1].total, 1e-4)
        loss_err = max(loss_err, rel(engine, fd))
    ok = max(e_err, phi_err, loss_err) < 1e-6
    criterion(4, f"100 configs: rel err e={e_err:.1e}, phi={phi_err:.1e}, total loss (directional)={loss_err:.1e} (<1e-6)", ok)
    assert ok


# 5 ---------------------------------------------------------------------------------------------


def test_criterion_5_entropy_inversion(criterion):
    rng = np.random.default_rng(5)
    resid = bisect = 0.0
    iters = 0
    orders = []
    for m in models(10, energy_scale=1000.0):
        F = random_F(rng, 100, 0.1)
        T = rng.uniform(250.0, 350.0, 100)
        log = cm.EntropySolveLog()
        s = m.solve_entropy(F, T, max_iter=20, log=log, fallback=False)
        iters = max(iters, log.iterations)
        resid = max(resid, np.abs(m.temperature_of(F, s) - T).max())
        for n in range(0, 100, 10):
            root = brentq(lambda x: m.temperature_of(F[n], x) - T[n], -200.0, 200.0, xtol=1e-14)
            bisect = max(bisect, abs(s[n] - root))
        r = np.array(log.residuals)
        r = r[r > 1e-13]
        if len(r) >= 3:
            orders.append(np.log(r[-1] / r[-2]) / np.log(r[-2] / r[-3]))
    order = min(orders)
    ok = resid < 1e-10 * T0 and iters <= 20 and bisect < 1e-8 and order > 1.8
    criterion(5, f"1e3 triples: max residual={resid:.3e} K (<{1e-10 * T0:.3e}), iterations<={iters} (<=20), "
                 f"|s-s_bisect|={bisect:.1e} (<1e-8), min observed order={order:.2f} (quadratic)", ok)
    assert ok


# 6 ---------------------------------------------------------------------------------------------


def test_criterion_6_reference_models(criterion):
    rng = np.random.default_rng(6)
    th, co = ThermalModelParams(), CoupledModelParams()
    F = random_F(rng, 20, 0.1)
    T = rng.uniform(250.0, 350.0, 20)
    g = rng.standard_normal((20, 3)) * 0.05
    s_err = rel(th.entropy(F, T), th.c_T0 * np.log(T / th.T0))
    s_fd = np.array([-d5(lambda h: th.helmholtz(F[n], T[n] + h), 1e-2) for n in range(20)])
    s_fd_err = rel(th.entropy(F, T), s_fd)
    C = np.einsum("nki,nkj->nij", F, F)
    q_err = rel(th.heat_flux(g, F, T), th.lambda_T * T[:, None] * np.einsum("nij,nj->ni", cofactor(C), g))
    q_fd = np.array([[d5(lambda h: th.conduction_potential(g[n] + h * e, F[n], T[n]), 1e-4) for e in np.eye(3)] for n in range(20)])
    q_fd_err = rel(th.heat_flux(g, F, T), q_fd)
    P_rest = float(np.abs(co.stress(np.eye(3), co.T0)).max())
    rt = max(rel(m.temperature_from_entropy(F, m.entropy(F, T)), T) for m in (th, co))
    ok = max(s_err, s_fd_err, q_err, q_fd_err) < 1e-8 and P_rest < 1e-9 and rt < 1e-8
    criterion(6, f"entropy err symbolic={s_err:.1e} FD={s_fd_err:.1e}, flux err symbolic={q_err:.1e} FD={q_fd_err:.1e} (<1e-8), "
                 f"coupled |P(I,T0)|={P_rest:.1e}, Legendre round trip={rt:.1e} (<1e-8)", ok)
    assert ok


# 7 ---------------------------------------------------------------------------------------------


def rigid_and_patch_metrics():
    from thermoforge.fem import assemble, distorted_patch, element_residuals, local_fields, point_kinematics
    from thermoforge.fem.solver import ReferenceMaterial

    rng = np.random.default_rng(7)
    co, th = CoupledModelParams(), ThermalModelParams()
    mesh = distorted_patch(seed=3)
    H = 0.02 * rng.standard_normal((3, 3))
    patch = 0.0
    for mat in (co, th):
        p, u, _ = fem_checks._patch_problem(mesh, H, mat.T0)
        x = p.dofs.join(u, np.full(mesh.n_nodes, mat.T0))
        xe = local_fields(p, np.stack([x, x]))
        kin = point_kinematics(p, xe)
        s = mat.entropy(kin.F, kin.T)
        re, _ = element_residuals(p, ReferenceMaterial(mat), xe[1:], s[:1], np.array([1.0]))
        r = assemble(p, re)[0]
        interior = mesh.node_sets["interior"]
        free = np.concatenate([p.dofs.u(interior, k) for k in range(3)] + [p.dofs.n_u + np.asarray(interior)])
        scale = np.abs(mat.stress(kin.F[1], kin.T[1])).max()
        patch = max(patch, np.abs(r[free]).max() / scale)
    # rigid motion of the stress-free state
    p = fem_checks._bar(n=3, steps=[fem_checks.Step(1.0)])
    R = random_rotation(11)
    u = p.mesh.nodes @ (R - np.eye(3)).T + rng.standard_normal(3)
    rigid = 0.0
    for mat in (co, th):
        x = p.dofs.join(u, np.full(p.mesh.n_nodes, mat.T0))
        x0 = p.initial_state()
        kin = point_kinematics(p, local_fields(p, x0[None]))
        s0 = mat.entropy(kin.F, np.full_like(kin.T, mat.T0))
        re, _ = element_residuals(p, ReferenceMaterial(mat), local_fields(p, x[None]), s0, np.array([1.0]))
        # residual in units of a 1% stretch reference load
        stretch = p.dofs.join(p.mesh.nodes * [0.01, 0.0, 0.0], np.full(p.mesh.n_nodes, mat.T0))
        re_ref, _ = element_residuals(p, ReferenceMaterial(mat), local_fields(p, stretch[None]), s0, np.array([1.0]))
        rigid = max(rigid, np.abs(assemble(p, re)[0]).max() / np.abs(assemble(p, re_ref)[0]).max())
    return patch, rigid


def test_criterion_7_forward_solver(criterion):
    p = fem_checks.conduction_bar(8, 330.0, T0, 6, 1e4)
    T = forward_solve(p, ThermalModelParams()).T(p)[-1]
    X = p.mesh.nodes[:, 0]
    steady = np.abs(T - (330.0 + (T0 - 330.0) * X / 4.0)).max() / 330.0
    coarse, fine = fem_checks.transient_error(8, 10), fem_checks.transient_error(32, 80)
    patch, rigid = rigid_and_patch_metrics()
    tr_eps, expected = fem_checks.free_expansion_error()
    expansion = float(np.abs(tr_eps / expected - 1.0).max())
    ok = steady < 1e-8 and fine < 0.01 and fine < coarse and patch < 1e-10 and rigid < 1e-9 and expansion < 0.02
    criterion(7, f"steady profile err={steady:.1e} (<1e-8), transient Fourier err {coarse:.2%} -> {fine:.2%} (<1%), "
                 f"patch={patch:.1e} (<1e-10), rigid={rigid:.1e} (<1e-9), expansion tr(eps) off by {expansion:.2%} (<2%)", ok)
    assert ok


# 8 ---------------------------------------------------------------------------------------------


def boundary_flux_errors(problem, reference, material):
    h = forward_solve(problem, material)
    out = {}
    for side in ("xmin", "xmax"):
        _, Q = reactions(problem, h, material, side)
        Q_ref = reference.reactions[:, problem.dofs.n_u :][:, problem.mesh.node_sets[side]].sum(1)
        out[side] = (rel(Q, Q_ref), Q, Q_ref)
    return out


def test_criterion_8_heat_diffusion_discovery(criterion, tmp_path):
    problem = heat_bar(n_elements=16)
    sc = generate(problem, heat_bar_reference(), "heat_bar")
    cfg = TrainConfig(epochs=3000, lr=1e-3, weights=LossWeights(A=1e3), balances="thermal")
    model = train(cfg, [sc]).best_model
    save_model(tmp_path / "heat_bar_model.json", model)
    newton = boundary_flux_errors(problem, sc, NeuralMaterial(model, "newton"))
    mlp = boundary_flux_errors(problem, sc, NeuralMaterial(model, "mlp"))
    with open(tmp_path / "parity.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "side", "Q_ref", "Q_newton", "Q_mlp"])
        for side in ("xmin", "xmax"):
            for n, (r, a, b) in enumerate(zip(newton[side][2], newton[side][1], mlp[side][1])):
                w.writerow([n + 1, side, r, a, b])
    mismatch = 0.0
    for side in ("xmin", "xmax"):
        q_n, q_m, q_r = newton[side][1], mlp[side][1], newton[side][2]
        mismatch = max(mismatch, np.sqrt(np.mean((q_m - q_n) ** 2)) / np.ptp(q_r))
    e_in, e_out = newton["xmin"][0], newton["xmax"][0]
    ok = e_in < 0.10 and e_out < 0.10 and mismatch < 0.01
    criterion(8, f"16-element bar, 3000 epochs: flux rel L2 interior={e_in:.2%} exterior={e_out:.2%} (<10%), "
                 f"MLP-vs-Newton RMS={mismatch:.2%} of flux range (<1%)", ok)
    assert ok


# 9 ---------------------------------------------------------------------------------------------


def reaction_errors(problem, reference_model, learned, node_set):
    ref = reference_model
    h_ref = forward_solve(problem, ref)
    F_ref, Q_ref = reactions(problem, h_ref, ref, node_set)
    mat = NeuralMaterial(learned, "newton")
    h = forward_solve(problem, mat)
    F, Q = reactions(problem, h, mat, node_set)
    return rel(F, F_ref), rel(Q, Q_ref)


@pytest.mark.slow
def test_criterion_9_structural_discovery(criterion):
    ref = structural_reference()
    plates = plate_scenarios(n_steps=20, dt=0.5)
    scenarios = [generate(p, ref, name) for name, p in plates.items()]
    model = train(TrainConfig(epochs=2000, lr=1e-3, weights=LossWeights(A=1e1)), scenarios).best_model
    mech, therm = reaction_errors(beam_test(), ref, model, "end1")
    iso_mech, _ = reaction_errors(beam_test(isothermal=True), ref, model, "end1")
    ok = mech < 0.15 and therm < 0.25 and iso_mech < 0.15
    criterion(9, f"{plates['combined'].mesh.n_elements}-element plate, 2000 epochs, curved beam: mechanical={mech:.2%} (<15%), "
                 f"thermal={therm:.2%} (<25%), isothermal mechanical={iso_mech:.2%} (<15%)", ok)
    assert ok


# 10 ---------------------------------------------------------------------------------------------


def test_criterion_10_material_point_mode(criterion, tmp_path):
    rng = np.random.default_rng(10)
    F11 = rng.uniform(0.85, 1.4, 40)
    T = rng.choice([273.15, 293.15, 323.15], 40)
    P11 = 0.4 * (1 - 0.002 * (T - T0)) * (F11 - F11**-2) + rng.normal(0, 0.005, 40)
    path = tmp_path / "user.csv"
    MaterialPointSamples(T, F11, P11).to_csv(path)
    cfg = TrainConfig(mode="material-point", epochs=200, lr=1e-2)
    res = train(cfg, samples=MaterialPointSamples.from_csv(path))
    best = np.minimum.accumulate([r.L_total for r in res.history])
    tracked = [res.history[r.best_epoch].L_total for r in res.history]
    monotone = bool(np.all(np.diff(tracked) <= 0.0)) and np.array_equal(tracked, best)
    nT = res.best_model.constants()[1]
    ok = len(res.history) == 200 and nT == 1.0 and monotone and cfg.nT_mode == "fixed"
    criterion(10, f"user CSV, 200 epochs: completed={len(res.history) == 200}, n_T={nT}, best loss monotone={monotone} "
                  f"({tracked[0]:.2e} -> {tracked[-1]:.2e})", ok)
    assert ok


# 11 ---------------------------------------------------------------------------------------------


def test_criterion_11_metrics_and_checkpoint(criterion, tmp_path):
    X = np.linspace(0.9, 1.2, 8)
    samples = MaterialPointSamples(np.full(8, T0), X, 0.3 * (X - X**-2))
    res = train(TrainConfig(mode="material-point", epochs=30, lr=1e-2), samples=samples)
    act_err = max(abs(sum(r.activity.values()) - 1.0) for r in res.history)
    original = NeuralThermoModel.initialize(21, temperature_scale=T0, energy_scale=1000.0, gradient_scale=0.05, dissipation_scale=7.0)
    save_model(tmp_path / "m.json", original)
    loaded = load_model(tmp_path / "m.json")
    rng = np.random.default_rng(11)
    suites = (
        normalization_metrics([loaded]),
        admissibility_metrics([loaded], 1000, rng),
        symmetry_metrics(loaded, 20, rng),
    )
    e, P, dT = suites[0]
    w = suites[1]
    norm_ok = e == 0.0 and P < 1e-10 * 1000.0 and dT < 1e-8 * T0
    adm_ok = max(w["energy_def"], w["energy_s"], w["phi"]) <= 1e-12 and w["slope"] > 0 and w["phi_min"] >= 0 and w["qg"] >= -1e-12
    sym_ok = suites[2] < 1e-9
    F = random_F(rng, 5, 0.1)
    same = np.array_equal(loaded.piola_stress(F, 0.2), original.piola_stress(F, 0.2))
    ok = act_err <= 1e-12 and norm_ok and adm_ok and sym_ok and same
    criterion(11, f"activity sum err={act_err:.1e} (<=1e-12) over {len(res.history)} epochs; reloaded model: "
                  f"suite1={norm_ok} suite2={adm_ok} suite3={sym_ok} bit-identical stress={same}", ok)
    assert ok
