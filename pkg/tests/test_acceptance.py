"""End-to-end acceptance checks.

Each test here is one headline claim about the system, checked at full
scale: multi-seed estimation batteries on the builtin simulators, exact
gradient and density tolerances, determinism down to file bytes, and wire
protocol parity with the in-process simulators.  The ten-seed batteries
are module fixtures shared by the tests that read different aspects of
the same runs.

Expected wall time is dominated by the simulator batteries (roughly
twenty minutes single-threaded); everything else finishes in seconds.
Each test prints one summary line with the measured quantities next to
their bounds.
"""

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from asbi.cli import validate_plugin
from asbi.density import BoxPrior, MoGDensity, TruncatedMoG, mog_log_pdf, mog_sample
from asbi.experiment import ExperimentConfig, dumps_canonical, run_sweep
from asbi.inference import RunConfig, run_asbi, run_experiment, utility
from asbi.mdn import (
    InputStandardizer,
    MdnArchitecture,
    MdnParams,
    TargetTransform,
    TrainConfig,
    init_params,
    nll_grad,
    nll_loss,
    train_mdn,
)
from asbi.metrics import log_prob_true, rep_err
from asbi.rng import generator
from asbi.simproto import launch, shutdown, simulate_batch
from asbi.simulators import TargetEnvironment, get_simulator

N_SEEDS = 10
TOY_THETA = np.array([-3.0, 1.0])
UNIFORM_LOG_DENSITY = -np.log(100.0)  # box [-5,5]^2

REFERENCE_PLUGIN = Path(__file__).resolve().parents[1] / "plugin-ts" / "dist" / "main.js"


_CAPTURE_MANAGER = None


@pytest.fixture(scope="session", autouse=True)
def _route_say_past_capture(request):
    global _CAPTURE_MANAGER
    _CAPTURE_MANAGER = request.config.pluginmanager.getplugin("capturemanager")


def say(line: str):
    # written past pytest's capture so plain `pytest -v` logs keep the
    # measured value behind every verdict
    text = f"\n[acceptance] {line}\n"
    if _CAPTURE_MANAGER is not None:
        with _CAPTURE_MANAGER.global_and_fixture_disabled():
            sys.stdout.write(text)
            sys.stdout.flush()
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


# ---- shared ten-seed batteries --------------------------------------------

@dataclass
class ToyRun:
    log_probs: list
    actions: list
    rep_err0: float


def _toy_battery(method: str) -> list:
    sim = get_simulator("toy")
    runs = []
    for seed in range(N_SEEDS):
        env = TargetEnvironment(sim, TOY_THETA, seed=1000 + seed)
        cfg = RunConfig(
            method=method, rounds=4, sims_per_round=2000, utility_samples=1000,
            utility_repeats=3, mixture_k=5, hidden_sizes=(128, 128),
            train=TrainConfig(iterations=2000, batch_size=50), seed=seed,
        )
        hist = run_experiment(sim, env, cfg)
        mean, _ = rep_err(sim, hist.rounds[-1].posterior, TOY_THETA, np.array([0.0]),
                          200, np.random.default_rng(9000 + seed))
        runs.append(ToyRun(
            log_probs=[log_prob_true(r.posterior, TOY_THETA) for r in hist.rounds],
            actions=[float(r.action.values[0]) for r in hist.rounds],
            rep_err0=mean,
        ))
    return runs


@pytest.fixture(scope="module")
def toy_active_runs():
    return _toy_battery("asbi")


@pytest.fixture(scope="module")
def toy_static_runs():
    return _toy_battery("nsbi")


@pytest.fixture(scope="module")
def toy_likelihood_runs():
    return _toy_battery("alhi")


def _box_battery(level: float) -> list:
    sim = get_simulator("box")
    late_means = []
    for seed in range(N_SEEDS):
        env = TargetEnvironment(sim, np.full(3, level), seed=2000 + seed)
        cfg = RunConfig(
            method="asbi", rounds=6, sims_per_round=1500, utility_samples=500,
            utility_repeats=2, mixture_k=5, hidden_sizes=(64, 64),
            train=TrainConfig(iterations=1500, batch_size=50), seed=seed,
        )
        hist = run_asbi(sim, env, cfg)
        velocities = [float(r.action.values[0]) for r in hist.rounds]
        late_means.append(float(np.mean(velocities[3:6])))
    return late_means


# ---- 1: convergence on the analytic problem --------------------------------

def test_toy_convergence_over_10_seeds(toy_active_runs):
    finals = [r.log_probs[-1] for r in toy_active_runs]
    round1 = [r.log_probs[0] for r in toy_active_runs]
    med_final = float(np.median(finals))
    med_round1 = float(np.median(round1))
    ok = med_final >= 0.5 and med_round1 > UNIFORM_LOG_DENSITY
    say(f"toy convergence: median final log q(theta_true) = {med_final:+.3f} "
        f"(needs >= 0.5), median after round 1 = {med_round1:+.3f} "
        f"(needs > {UNIFORM_LOG_DENSITY:.3f}) -> {'PASS' if ok else 'FAIL'}")
    assert med_final >= 0.5
    assert med_round1 > UNIFORM_LOG_DENSITY


# ---- 2: first-round action choice ------------------------------------------

def test_round1_action_choice_over_10_seeds(toy_active_runs):
    """First-round concentration onto the extreme positive action.

    The check demands that at least 8 of 10 seeds choose xi = 5.0 in the
    very first round.  Measured behavior is different and systematic: on
    most seeds the first-round information-gain surface peaks at small or
    negative actions, whose huge exp(3 - xi) response gain pins the first
    parameter while the prior is still wide, and xi = 5.0 only wins once
    later rounds have shrunk that uncertainty.  The gap is well outside
    Monte-Carlo noise at these utility sample sizes, so the threshold is
    left as stated and the observed choice distribution is printed below
    rather than papered over.
    """
    picks = [r.actions[0] for r in toy_active_runs]
    hits = sum(1 for a in picks if a == 5.0)
    ok = hits >= 8
    say(f"round-1 action: argmax == 5.0 on {hits}/10 seeds (needs >= 8); "
        f"choices = {sorted(picks)} -> {'PASS' if ok else 'FAIL'}")
    assert hits >= 8


# ---- 3: ordering against the baselines --------------------------------------

def test_final_accuracy_ordering_across_methods(
    toy_active_runs, toy_static_runs, toy_likelihood_runs
):
    def med_final(runs):
        return float(np.median([r.log_probs[-1] for r in runs]))

    def med_rep(runs):
        return float(np.median([r.rep_err0 for r in runs]))

    active, static, likelihood = (med_final(toy_active_runs),
                                  med_final(toy_static_runs),
                                  med_final(toy_likelihood_runs))
    rep_active, rep_static = med_rep(toy_active_runs), med_rep(toy_static_runs)
    ok = active > static and active > likelihood and rep_active < rep_static
    say(f"method ordering: median final log q active={active:+.3f} > "
        f"static={static:+.3f} and > likelihood={likelihood:+.3f}; "
        f"median rep err at action 0: active={rep_active:.3f} < "
        f"static={rep_static:.3f} -> {'PASS' if ok else 'FAIL'}")
    assert active > static
    assert active > likelihood
    assert rep_active < rep_static


# ---- 4: adaptivity on the box surrogate --------------------------------------

def test_box_velocity_adaptivity():
    heavy = _box_battery(0.8)
    light = _box_battery(0.2)
    gap = float(np.mean(heavy) - np.mean(light))
    ok = gap >= 1.0
    say(f"box adaptivity: mean selected velocity rounds 4-6, "
        f"theta=0.8: {np.mean(heavy):.3f} vs theta=0.2: {np.mean(light):.3f}, "
        f"gap = {gap:.3f} (needs >= 1.0) -> {'PASS' if ok else 'FAIL'}")
    assert gap >= 1.0


# ---- 5: training gradients ---------------------------------------------------

def test_training_gradients_match_finite_differences():
    g = np.random.default_rng(42)
    worst = 0.0
    for _ in range(20):
        arch = MdnArchitecture(
            input_dim=int(g.integers(1, 4)),
            output_dim=int(g.integers(1, 4)),
            hidden_sizes=tuple(int(h) for h in g.choice([4, 6, 8], size=g.integers(1, 3))),
            k=int(g.integers(1, 4)),
            activation=str(g.choice(["tanh", "relu"])),
            covariance=str(g.choice(["full", "diag"])),
        )
        batch = int(g.integers(3, 9))
        inputs = g.normal(size=(batch, arch.input_dim)) * g.uniform(0.5, 3.0)
        targets = g.normal(size=(batch, arch.output_dim)) * g.uniform(0.5, 2.0)
        istd = InputStandardizer.fit(inputs)
        ttf = TargetTransform.from_data(targets)
        params = init_params(arch, g, np.full(arch.output_dim, -1.0),
                             np.ones(arch.output_dim), np.full(arch.output_dim, 0.7))
        flat = params.flatten() + g.normal(0.0, 0.3, size=arch.n_params)
        params = MdnParams.from_flat(arch, flat)
        grad = nll_grad(arch, params, istd, ttf, inputs, targets)
        coords = g.choice(arch.n_params, size=min(50, arch.n_params), replace=False)
        step = 1e-5
        for c in coords:
            up, down = flat.copy(), flat.copy()
            up[c] += step
            down[c] -= step
            fd = (nll_loss(arch, MdnParams.from_flat(arch, up), istd, ttf, inputs, targets)
                  - nll_loss(arch, MdnParams.from_flat(arch, down), istd, ttf, inputs,
                             targets)) / (2 * step)
            diff = abs(grad[c] - fd)
            if max(abs(grad[c]), abs(fd)) < 1e-6:
                # below the central-difference noise floor (~1e-10 at this
                # step) relative error is unmeasurable; require absolute
                # agreement at that floor instead
                assert diff < 1e-9, (
                    f"coordinate {c}: analytic {grad[c]:.10g} vs central "
                    f"difference {fd:.10g} (absolute gap {diff:.2e})")
                continue
            rel = diff / max(abs(grad[c]), abs(fd))
            worst = max(worst, rel)
            assert rel < 1e-4, (
                f"coordinate {c}: analytic {grad[c]:.10g} vs central difference "
                f"{fd:.10g} (relative error {rel:.2e})")
    say(f"gradients: 20 architectures x 50 coordinates, worst relative error "
        f"{worst:.2e} (needs < 1e-4) -> PASS")


# ---- 6: conditional density against grid quadrature --------------------------

def test_conditional_density_matches_grid_quadrature():
    sim = get_simulator("toy")
    prior = sim.spec.param_bounds
    xi = np.array([3.0])

    rng = np.random.default_rng(101)
    n = 10_000
    thetas = prior.sample(rng, n)
    xs = np.empty((n, 1))
    for i in range(n):
        xs[i] = sim.simulate(thetas[i], xi, int(rng.integers(0, 2**62))).values
    arch = MdnArchitecture(input_dim=1, output_dim=2, hidden_sizes=(128, 128), k=5)
    est, _ = train_mdn(arch, xs, thetas,
                       TrainConfig(iterations=8000, batch_size=100, seed=3),
                       target_bounds=(prior.lower, prior.upper))

    m = 200
    edges = np.linspace(-5.0, 5.0, m + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    g1, g2 = np.meshgrid(mid, mid, indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()])

    obs_rng = np.random.default_rng(55)
    kls = []
    for _ in range(5):
        theta_star = prior.sample(obs_rng, 1)[0]
        # at this action the noiseless response is theta_1 + 3 theta_2
        x_star = theta_star[0] + 3.0 * theta_star[1] + obs_rng.normal()
        log_p = -0.5 * (x_star - (pts[:, 0] + 3.0 * pts[:, 1])) ** 2
        log_p -= log_p.max()
        p = np.exp(log_p)
        p /= p.sum()
        log_q = mog_log_pdf(est.condition(np.array([x_star])), pts)
        log_q -= log_q.max()
        q = np.exp(log_q)
        q /= q.sum()
        mask = p > 0
        kls.append(float(np.sum(
            p[mask] * (np.log(p[mask]) - np.log(np.maximum(q[mask], 1e-300))))))
    ok = all(k < 0.15 for k in kls)
    say("posterior vs 200x200 quadrature: KL = "
        + ", ".join(f"{k:.4f}" for k in kls)
        + f" (each needs < 0.15) -> {'PASS' if ok else 'FAIL'}")
    assert ok, f"KL values {kls}"


# ---- 7: density toolbox tolerances -------------------------------------------

def random_mog(rng, dim, k):
    weights = rng.dirichlet(np.ones(k) * 3.0)
    means = rng.uniform(-2.0, 2.0, size=(k, dim))
    chols = np.zeros((k, dim, dim))
    for j in range(k):
        a = rng.normal(scale=0.4, size=(dim, dim))
        chols[j] = np.linalg.cholesky(a @ a.T + np.eye(dim) * rng.uniform(0.2, 1.0))
    return MoGDensity(weights=weights, means=means, chol_factors=chols)


def test_density_toolbox_tolerances():
    rng = np.random.default_rng(7)

    # mixture normalization by quadrature, d = 1 and d = 2
    worst_norm = 0.0
    for dim in (1, 2):
        for _ in range(3):
            mog = random_mog(rng, dim, k=int(rng.integers(1, 4)))
            if dim == 1:
                grid = np.linspace(-12.0, 12.0, 4001)[:, None]
                mass = np.trapezoid(np.exp(mog_log_pdf(mog, grid)), grid[:, 0])
            else:
                axis = np.linspace(-12.0, 12.0, 481)
                h = axis[1] - axis[0]
                g1, g2 = np.meshgrid(axis, axis, indexing="ij")
                pts = np.column_stack([g1.ravel(), g2.ravel()])
                mass = np.exp(mog_log_pdf(mog, pts)).sum() * h * h
            worst_norm = max(worst_norm, abs(mass - 1.0))
    assert worst_norm < 1e-3

    # truncated normalization over its box
    box = BoxPrior(np.array([-1.5, -1.5]), np.array([2.0, 2.0]))
    worst_trunc = 0.0
    for i in range(3):
        trunc = TruncatedMoG.estimate(random_mog(rng, 2, k=2), box,
                                      generator(900 + i, "acceptance-trunc"))
        axis1 = np.linspace(-1.5, 2.0, 351)
        h1 = axis1[1] - axis1[0]
        g1, g2 = np.meshgrid(axis1, axis1, indexing="ij")
        pts = np.column_stack([g1.ravel(), g2.ravel()])
        mass = np.exp(trunc.log_pdf(pts)).sum() * h1 * h1
        worst_trunc = max(worst_trunc, abs(mass - 1.0))
    assert worst_trunc < 2e-2

    # sampling law: chi-square over equal-probability bins (expected
    # counts stay large, keeping the test statistic well calibrated)
    mog = random_mog(rng, 1, k=2)
    draws = mog_sample(mog, np.random.default_rng(11), 40_000)[:, 0]
    fine = np.linspace(-8.0, 8.0, 16001)
    pdf = np.exp(mog_log_pdf(mog, fine[:, None]))
    cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5 * np.diff(fine))])
    cdf /= cdf[-1]
    levels = np.linspace(0.002, 0.998, 25)
    edges = np.interp(levels, cdf, fine)
    inside = (draws >= edges[0]) & (draws <= edges[-1])
    counts, _ = np.histogram(draws[inside], bins=edges)
    probs = np.diff(levels) / (levels[-1] - levels[0])
    _, p_value = stats.chisquare(counts, probs * counts.sum())
    assert p_value > 1e-3

    # utility is zero when the surrogate equals the prior
    sim = get_simulator("toy")
    prior = sim.spec.param_bounds

    class PriorEstimator:
        def log_prob(self, inputs, targets):
            return np.atleast_1d(prior.log_pdf(targets))

    m_samples, repeats = 400, 2
    report = utility(PriorEstimator(), sim, prior, sim.spec.action_grid.action(3),
                     m=m_samples, repeats=repeats, run_seed=0, round_index=1)
    tol = 3.0 / np.sqrt(m_samples * repeats)
    assert abs(report.u_mean) <= tol

    say(f"density toolbox: mixture mass off by {worst_norm:.2e} (< 1e-3), "
        f"truncated mass off by {worst_trunc:.2e} (< 2e-2), sampling chi-square "
        f"p = {p_value:.4f} (> 1e-3), prior-equal utility = {report.u_mean:.2e} "
        f"(|.| <= {tol:.3f}) -> PASS")


# ---- 8: determinism -----------------------------------------------------------

TINY_RECORD = {
    "simulator": "toy",
    "run": {
        "method": "asbi", "rounds": 2, "sims_per_round": 150,
        "utility_samples": 80, "utility_repeats": 1, "mixture_k": 3,
        "hidden_sizes": [24, 24],
        "train": {"iterations": 150, "batch_size": 40}, "seed": 0,
    },
    "target": {"hidden_theta": [-3.0, 1.0], "env_seed": 5},
    "metrics": {"rep_err_actions": [[0.0]], "rep_err_samples": 40},
}


def test_seeded_reruns_are_byte_identical(tmp_path):
    cfg = ExperimentConfig.from_record(TINY_RECORD)
    sim = get_simulator("toy")

    def one_history():
        env = TargetEnvironment(sim, TOY_THETA, seed=5)
        return dumps_canonical(run_experiment(sim, env, cfg.run).to_record())

    first, second = one_history(), one_history()
    assert first == second

    sweeps = []
    for workers in (1, 2):
        out = tmp_path / f"parallel-{workers}"
        run_sweep(TINY_RECORD, [0, 1], out, parallel=workers)
        sweeps.append((out / "sweep.json").read_bytes())
    assert sweeps[0] == sweeps[1]
    quantiles = json.loads(sweeps[0])["log_prob_quantiles"]
    say(f"determinism: repeated run serialization byte-identical "
        f"({len(first)} bytes); sweep aggregates identical for "
        f"--parallel 1 vs 2 ({len(quantiles)} quantile rows) -> PASS")


# ---- 9: wire protocol parity ---------------------------------------------------

def _seeded_requests(n, seed):
    sim = get_simulator("toy")
    grid = sim.spec.action_grid.values
    rng = np.random.default_rng(seed)
    thetas = sim.spec.param_bounds.sample(rng, n)
    actions = grid[rng.integers(0, grid.shape[0], size=n)]
    seeds = rng.integers(0, 2**62, size=n)
    return sim, [(thetas[i], actions[i], int(seeds[i])) for i in range(n)]


def test_wire_protocol_matches_direct_simulator():
    n = 10_000
    sim, requests = _seeded_requests(n, 2024)
    direct = [sim.simulate(theta, action, seed) for theta, action, seed in requests]

    for extra, label in (([], "in order"), (["--shuffle-window", "8"], "shuffled")):
        handle = launch([sys.executable, "-m", "asbi.plugin", "toy"] + extra)
        try:
            got = simulate_batch(handle, requests, timeout=300.0)
        finally:
            shutdown(handle)
        for i, (ours, theirs) in enumerate(zip(direct, got)):
            assert np.array_equal(ours.values, theirs.values) and \
                ours.valid == theirs.valid, f"request {i} differs ({label})"
    say(f"wire protocol: {n} seeded requests bitwise-equal to direct calls, "
        f"in order and with shuffled responses -> PASS")


# ---- reference plugin (cross-language) ------------------------------------------

@pytest.mark.skipif(not REFERENCE_PLUGIN.exists(),
                    reason="reference plugin is not built")
def test_reference_plugin_equivalence(tmp_path):
    command = ["node", str(REFERENCE_PLUGIN), "toy"]
    n = 1000
    sim, requests = _seeded_requests(n, 515)
    direct = [sim.simulate(theta, action, seed) for theta, action, seed in requests]
    handle = launch(command)
    try:
        got = simulate_batch(handle, requests, timeout=300.0)
    finally:
        shutdown(handle)
    worst = 0.0
    for i, (ours, theirs) in enumerate(zip(direct, got)):
        a, b = ours.values, theirs.values
        rel = float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)),
                                                      1e-300)))
        worst = max(worst, rel)
        assert rel <= 1e-12, f"request {i}: relative gap {rel:.2e}"

    checklist = validate_plugin(command, theta=[0.0, 0.0], action=[0.0])
    assert checklist == 0
    say(f"reference plugin: {n} seeded requests match within relative "
        f"{worst:.2e} (needs <= 1e-12); conformance checklist clean -> PASS")
