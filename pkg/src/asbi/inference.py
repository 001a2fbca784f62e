"""Sequential likelihood-free parameter estimation.

Four run loops share one round structure: draw simulations from the
current prior, fit a conditional density, pick an action, query the
target environment, and turn the conditioned density into the next
prior.  The active variants score every candidate action with a
Monte-Carlo information-gain utility; the passive ones pick uniformly
at random.  The posterior-estimation loop conditions a trained
q(theta | x, action) directly; the likelihood-surrogate loop trains
q(x | theta, action) and recovers the posterior by importance sampling
plus a kernel density fit.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .density import (
    BoxPrior,
    TruncatedMoG,
    density_from_record,
    density_to_record,
    kde_fit,
    truncated_log_pdf,
    truncated_sample,
)
from .mdn import MdnArchitecture, MdnEstimator, TrainConfig, cross_log_prob, train_mdn
from .rng import derive_seed, generator
from .simulators import Action, Observation, Simulator, TargetEnvironment

logger = logging.getLogger("asbi.inference")

METHODS = ("asbi", "nsbi", "alhi", "nlhi")
HISTORY_FORMAT = "asbi-history-v1"

# an action is dropped from the argmax when at least this fraction of its
# utility terms had non-finite log-densities
UNUSABLE_SKIP_FRACTION = 0.5


class RoundError(RuntimeError):
    """A round failed; carries the 1-based round index and the cause."""

    def __init__(self, round_index: int, message: str):
        super().__init__(f"round {round_index}: {message}")
        self.round_index = round_index


class AllActionsUnusable(RuntimeError):
    """Every candidate action was excluded from the argmax."""


@dataclass(frozen=True)
class RunConfig:
    """All knobs of one estimation run.

    sims_per_round is the fresh-simulation budget N of each round,
    utility_samples the Monte-Carlo sample count M per action and repeat.
    marginal_n, proposals, and n_particles only matter for the
    likelihood-surrogate methods.
    """

    method: str = "asbi"
    rounds: int = 4
    sims_per_round: int = 1000
    utility_samples: int = 1000
    utility_repeats: int = 3
    mixture_k: int = 5
    hidden_sizes: tuple = (128, 128)
    activation: str = "tanh"
    covariance: str = "full"
    train: TrainConfig = TrainConfig()
    seed: int = 0
    retrain_from_scratch: bool = True
    utility_reuse_training: bool = True
    marginal_n: int = 256
    proposals: int = 5000
    n_particles: int = 1000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.sims_per_round < self.train.batch_size:
            raise ValueError("sims_per_round must be >= train.batch_size")
        if self.utility_samples < 1:
            raise ValueError("utility_samples must be >= 1")
        if self.utility_repeats < 1:
            raise ValueError("utility_repeats must be >= 1")
        if self.marginal_n < 1:
            raise ValueError("marginal_n must be >= 1")
        if self.proposals < 1:
            raise ValueError("proposals must be >= 1")
        if self.n_particles < 100:
            raise ValueError("n_particles must be >= 100")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))

    def to_record(self) -> dict:
        rec = dataclasses.asdict(self)
        rec["hidden_sizes"] = list(self.hidden_sizes)
        return rec

    @classmethod
    def from_record(cls, record: dict) -> "RunConfig":
        if not isinstance(record, dict):
            raise ValueError("run config must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        for key in record:
            if key not in known:
                raise ValueError(f"unknown run config field: {key!r}")
        kwargs = dict(record)
        if "train" in kwargs:
            train_rec = kwargs["train"]
            if not isinstance(train_rec, dict):
                raise ValueError("train must be a mapping")
            train_known = {f.name for f in dataclasses.fields(TrainConfig)}
            for key in train_rec:
                if key not in train_known:
                    raise ValueError(f"unknown train config field: {key!r}")
            kwargs["train"] = TrainConfig(**train_rec)
        if "hidden_sizes" in kwargs:
            kwargs["hidden_sizes"] = tuple(kwargs["hidden_sizes"])
        return cls(**kwargs)


@dataclass(frozen=True)
class UtilityReport:
    """Monte-Carlo utility of one action: per-repeat values and their mean.

    skipped_terms counts log-density evaluations that came back non-finite;
    once they reach half the budget the action is excluded from the argmax.
    """

    action: Action
    u_mean: float
    u_per_repeat: list
    skipped_terms: int
    usable: bool

    def to_record(self) -> dict:
        return {
            "action": self.action.to_record(),
            "u_mean": self.u_mean,
            "u_per_repeat": [float(u) for u in self.u_per_repeat],
            "skipped_terms": self.skipped_terms,
            "usable": self.usable,
        }


@dataclass
class TrainingSet:
    """One round's simulation triples plus their provenance seeds."""

    thetas: np.ndarray
    action_indices: np.ndarray
    action_values: np.ndarray
    observations: list
    seeds: list

    def __len__(self):
        return self.thetas.shape[0]

    def rows_for_action(self, index: int) -> np.ndarray:
        return np.flatnonzero(self.action_indices == index)

    def obs_matrix(self, rows) -> np.ndarray:
        return np.stack([self.observations[i].values for i in rows])


def generate_training_set(
    simulator: Simulator,
    prior,
    n: int,
    run_seed: int,
    round_index: int,
) -> TrainingSet:
    """Draw n (theta, action, observation) triples from the current prior.

    Actions are uniform over the grid; every simulation gets its own
    derived seed so the set is reproducible and order-independent.
    """
    if n < 1:
        raise ValueError("training set size must be >= 1")
    grid = simulator.spec.action_grid
    indices = generator(run_seed, "actions", round_index).integers(0, len(grid), size=n)
    thetas = truncated_sample(prior, generator(run_seed, "theta", round_index), n)
    action_values = grid.values[indices]
    seeds = [derive_seed(run_seed, "sims", round_index, i) for i in range(n)]
    observations = simulator.simulate_batch(thetas, action_values, seeds)
    return TrainingSet(
        thetas=thetas,
        action_indices=np.asarray(indices, dtype=np.int64),
        action_values=action_values,
        observations=observations,
        seeds=seeds,
    )


def _groups_in(simulator: Simulator, training_set: TrainingSet) -> dict:
    """Map group id -> row indices of the training set."""
    groups: dict[int, list] = {}
    for i in range(len(training_set)):
        g = simulator.observation_group(training_set.action_values[i])
        groups.setdefault(g, []).append(i)
    return {g: np.asarray(rows) for g, rows in sorted(groups.items())}


def _arch_for(cfg: RunConfig, input_dim: int, output_dim: int) -> MdnArchitecture:
    return MdnArchitecture(
        input_dim=input_dim,
        output_dim=output_dim,
        hidden_sizes=cfg.hidden_sizes,
        k=cfg.mixture_k,
        activation=cfg.activation,
        covariance=cfg.covariance,
    )


def train_posterior_estimators(
    simulator: Simulator,
    training_set: TrainingSet,
    cfg: RunConfig,
    round_index: int,
    previous: dict | None = None,
):
    """Fit q(theta | x, action) per observation group.

    Returns (estimators, loss_traces, seeds), each keyed by group id.
    previous supplies warm-start estimators when retraining from scratch
    is disabled.
    """
    spec = simulator.spec
    box = spec.param_bounds
    action_dim = spec.action_grid.value_dim
    estimators, traces, seeds = {}, {}, {}
    for g, rows in _groups_in(simulator, training_set).items():
        obs = training_set.obs_matrix(rows)
        inputs = np.concatenate([obs, training_set.action_values[rows]], axis=1)
        targets = training_set.thetas[rows]
        arch = _arch_for(cfg, simulator.group_obs_dim(g) + action_dim, spec.param_dim)
        seed = derive_seed(cfg.seed, "train", round_index, g)
        train_cfg = dataclasses.replace(cfg.train, seed=seed)
        warm = previous.get(g) if previous else None
        est, trace = train_mdn(
            arch,
            inputs,
            targets,
            train_cfg,
            target_bounds=(box.lower, box.upper),
            warm_start=warm,
            input_groups=training_set.action_indices[rows],
        )
        estimators[g], traces[g], seeds[g] = est, trace, seed
    return estimators, traces, seeds


def train_nle(
    simulator: Simulator,
    training_set: TrainingSet,
    cfg: RunConfig,
    round_index: int,
    previous: dict | None = None,
):
    """Fit the likelihood surrogate q(x | theta, action) per group."""
    spec = simulator.spec
    action_dim = spec.action_grid.value_dim
    estimators, traces, seeds = {}, {}, {}
    for g, rows in _groups_in(simulator, training_set).items():
        inputs = np.concatenate(
            [training_set.thetas[rows], training_set.action_values[rows]], axis=1
        )
        targets = training_set.obs_matrix(rows)
        arch = _arch_for(cfg, spec.param_dim + action_dim, simulator.group_obs_dim(g))
        seed = derive_seed(cfg.seed, "train", round_index, g)
        train_cfg = dataclasses.replace(cfg.train, seed=seed)
        warm = previous.get(g) if previous else None
        est, trace = train_mdn(
            arch,
            inputs,
            targets,
            train_cfg,
            warm_start=warm,
            input_groups=training_set.action_indices[rows],
        )
        estimators[g], traces[g], seeds[g] = est, trace, seed
    return estimators, traces, seeds


def _with_action(rows: np.ndarray, action: Action) -> np.ndarray:
    tiled = np.broadcast_to(action.values, (rows.shape[0], action.values.shape[0]))
    return np.concatenate([rows, tiled], axis=1)


def _eval_pairs(
    simulator: Simulator,
    prior,
    action: Action,
    m: int,
    rep: int,
    run_seed: int,
    round_index: int,
    pool_thetas: np.ndarray | None,
    pool_obs: np.ndarray | None,
):
    """m (theta, x) pairs for one utility repeat.

    Consecutive repeats take disjoint slices of the reusable pool; any
    shortfall is topped up with fresh prior draws and simulations under
    a repeat-specific seed stream.
    """
    take_thetas = np.empty((0, simulator.spec.param_dim))
    take_obs = np.empty((0, pool_obs.shape[1] if pool_obs is not None else 0))
    if pool_thetas is not None:
        lo, hi = rep * m, (rep + 1) * m
        take_thetas = pool_thetas[lo:hi]
        take_obs = pool_obs[lo:hi]
    need = m - take_thetas.shape[0]
    if need > 0:
        rng = generator(run_seed, "utility-theta", round_index, action.index, rep)
        fresh_thetas = truncated_sample(prior, rng, need)
        seeds = [
            derive_seed(run_seed, "utility-sims", round_index, action.index, rep, i)
            for i in range(need)
        ]
        rows = np.broadcast_to(action.values, (need, action.values.shape[0]))
        fresh_obs = np.stack(
            [o.values for o in simulator.simulate_batch(fresh_thetas, rows, seeds)]
        )
        if take_thetas.shape[0]:
            return (
                np.concatenate([take_thetas, fresh_thetas]),
                np.concatenate([take_obs, fresh_obs]),
            )
        return fresh_thetas, fresh_obs
    return take_thetas, take_obs


def _pool_for(training_set: TrainingSet | None, action: Action):
    if training_set is None:
        return None, None
    rows = training_set.rows_for_action(action.index)
    if rows.size == 0:
        return None, None
    return training_set.thetas[rows], training_set.obs_matrix(rows)


def utility(
    estimator: MdnEstimator,
    simulator: Simulator,
    prior,
    action: Action,
    m: int,
    repeats: int,
    run_seed: int,
    round_index: int,
    training_set: TrainingSet | None = None,
) -> UtilityReport:
    """Expected information gain of an action, by Monte Carlo.

    Each repeat draws m pairs theta ~ prior, x ~ simulate(theta, action)
    and averages log q(theta | x, action) - log prior(theta).  Terms with
    a non-finite log-density are skipped and counted.  Pairs come from
    training_set's matching triples when given (they were drawn from the
    same prior), topped up with fresh simulations.
    """
    if m < 1 or repeats < 1:
        raise ValueError("utility needs m >= 1 and repeats >= 1")
    pool_thetas, pool_obs = _pool_for(training_set, action)
    u_per_repeat = []
    skipped = 0
    for rep in range(repeats):
        thetas, obs = _eval_pairs(
            simulator, prior, action, m, rep, run_seed, round_index, pool_thetas, pool_obs
        )
        log_q = estimator.log_prob(_with_action(obs, action), thetas)
        log_p = np.atleast_1d(truncated_log_pdf(prior, thetas))
        terms = log_q - log_p
        finite = np.isfinite(terms)
        skipped += int(np.sum(~finite))
        u_per_repeat.append(float(np.mean(terms[finite])) if np.any(finite) else math.nan)
    usable = skipped < UNUSABLE_SKIP_FRACTION * m * repeats and all(
        math.isfinite(u) for u in u_per_repeat
    )
    u_mean = float(np.mean(u_per_repeat))
    if not usable:
        logger.warning(
            "action %d unusable: %d of %d utility terms skipped",
            action.index,
            skipped,
            m * repeats,
        )
    return UtilityReport(
        action=action,
        u_mean=u_mean,
        u_per_repeat=u_per_repeat,
        skipped_terms=skipped,
        usable=usable,
    )


def select_action(reports: list) -> Action:
    """Argmax of u_mean over usable reports; ties go to the lowest index."""
    usable = [r for r in reports if r.usable]
    if not usable:
        raise AllActionsUnusable("no action produced a usable utility estimate")
    best = max(usable, key=lambda r: (r.u_mean, -r.action.index))
    return best.action


def npe_posterior(
    estimator: MdnEstimator,
    box: BoxPrior,
    observation: Observation,
    action: Action,
    run_seed: int,
    round_index: int,
) -> TruncatedMoG:
    """Condition the trained density on the real observation, box-truncate."""
    context = np.concatenate([observation.values, action.values])
    mog = estimator.condition(context)
    return TruncatedMoG.estimate(mog, box, generator(run_seed, "mass", round_index))


def _cross_matrix(estimator, contexts: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """(B, T) log-density matrix; one batched pass for the trained network,
    a per-context loop for duck-typed estimators."""
    if isinstance(estimator, MdnEstimator):
        return cross_log_prob(estimator, contexts, targets)
    rows = [
        estimator.log_prob(np.broadcast_to(c, (targets.shape[0], c.shape[0])), targets)
        for c in contexts
    ]
    return np.stack(rows)


def alhi_utility(
    estimator: MdnEstimator,
    simulator: Simulator,
    prior,
    action: Action,
    m: int,
    marginal_n: int,
    run_seed: int,
    round_index: int,
    training_set: TrainingSet | None = None,
    marginal_thetas: np.ndarray | None = None,
) -> UtilityReport:
    """Information gain from the likelihood surrogate.

    U = (1/m) sum_i [log q(x_i | theta_i, a) - log (1/n) sum_j q(x_i | theta_j, a)]
    with a single theta_j marginal set shared across i and the inner sum
    done in log space.  marginal_thetas overrides the theta_j draw (used
    by tests to force the ratio to collapse).
    """
    if m < 1 or marginal_n < 1:
        raise ValueError("alhi utility needs m >= 1 and marginal_n >= 1")
    pool_thetas, pool_obs = _pool_for(training_set, action)
    thetas, obs = _eval_pairs(
        simulator, prior, action, m, 0, run_seed, round_index, pool_thetas, pool_obs
    )
    log_q = estimator.log_prob(_with_action(thetas, action), obs)
    if marginal_thetas is None:
        rng = generator(run_seed, "marginal", round_index, action.index)
        marginal_thetas = truncated_sample(prior, rng, marginal_n)
    else:
        marginal_thetas = np.asarray(marginal_thetas, dtype=np.float64)
        if marginal_thetas.shape != (marginal_n, simulator.spec.param_dim):
            raise ValueError("marginal_thetas must be (marginal_n, param_dim)")
    cross = _cross_matrix(estimator, _with_action(marginal_thetas, action), obs)
    peak = np.max(cross, axis=0)
    log_marg = peak + np.log(np.mean(np.exp(cross - peak), axis=0))
    terms = log_q - log_marg
    finite = np.isfinite(terms)
    skipped = int(np.sum(~finite))
    u = float(np.mean(terms[finite])) if np.any(finite) else math.nan
    usable = skipped < UNUSABLE_SKIP_FRACTION * m and math.isfinite(u)
    if not usable:
        logger.warning(
            "action %d unusable: %d of %d surrogate terms skipped",
            action.index,
            skipped,
            m,
        )
    return UtilityReport(
        action=action, u_mean=u, u_per_repeat=[u], skipped_terms=skipped, usable=usable
    )


def alhi_posterior(
    estimator: MdnEstimator,
    prior,
    observation: Observation,
    action: Action,
    proposals: int,
    n_particles: int,
    run_seed: int,
    round_index: int,
) -> TruncatedMoG:
    """Posterior by self-normalized importance sampling plus a KDE fit.

    Proposals come from the prior, weighted by the surrogate likelihood
    of the real observation; the weighted set is resampled and smoothed
    into a box-truncated density usable as the next prior.
    """
    if n_particles < 100:
        raise ValueError("n_particles must be >= 100")
    box = prior.box if isinstance(prior, TruncatedMoG) else prior
    rng = generator(run_seed, "alhi-posterior", round_index)
    thetas = truncated_sample(prior, rng, proposals)
    contexts = _with_action(thetas, action)
    targets = np.broadcast_to(observation.values, (proposals, observation.values.shape[0]))
    log_w = estimator.log_prob(contexts, targets)
    finite = np.isfinite(log_w)
    if not np.any(finite):
        logger.warning("all %d importance weights vanished; falling back to prior draws",
                       proposals)
        weights = np.full(proposals, 1.0 / proposals)
    else:
        shifted = np.where(finite, log_w - np.max(log_w[finite]), -np.inf)
        weights = np.exp(shifted)
        weights /= weights.sum()
    ess = 1.0 / float(np.sum(weights**2))
    if ess < 10.0:
        logger.warning("effective sample size %.2f below 10 after weighting", ess)
    idx = rng.choice(proposals, size=n_particles, p=weights)
    kde = kde_fit(thetas[idx], floor_width=box.widths)
    return TruncatedMoG.estimate(kde.as_mog(), box, rng)


@dataclass
class RoundRecord:
    """Everything one round produced.  prior is the density the round
    sampled from; the serialized form omits it (it is the previous
    round's posterior, stored there)."""

    round_index: int
    prior: object
    training_seeds: dict
    loss_traces: dict
    utilities: list
    action: Action
    observation: Observation
    posterior: object

    def to_record(self) -> dict:
        return {
            "round": self.round_index,
            "training_seeds": {str(g): s for g, s in self.training_seeds.items()},
            "loss_traces": {str(g): [float(v) for v in t] for g, t in self.loss_traces.items()},
            "utilities": [u.to_record() for u in self.utilities],
            "action": self.action.to_record(),
            "observation": self.observation.to_record(),
            "posterior": density_to_record(self.posterior),
        }


@dataclass
class RoundHistory:
    """Ordered per-round records of one run."""

    method: str
    rounds: list = field(default_factory=list)

    @property
    def entries(self):
        return [(r.round_index, r.action, r.observation) for r in self.rounds]

    @property
    def posteriors(self):
        return [r.posterior for r in self.rounds]

    def to_record(self) -> dict:
        return {
            "format": HISTORY_FORMAT,
            "method": self.method,
            "rounds": [r.to_record() for r in self.rounds],
        }

    @staticmethod
    def posteriors_from_record(record: dict) -> list:
        validate_history_record(record)
        return [density_from_record(r["posterior"]) for r in record["rounds"]]


def validate_history_record(record: dict) -> None:
    """Schema check shared by all four methods' run logs."""
    if not isinstance(record, dict):
        raise ValueError("history record must be a mapping")
    if record.get("format") != HISTORY_FORMAT:
        raise ValueError(f"unknown history format: {record.get('format')!r}")
    if record.get("method") not in METHODS:
        raise ValueError(f"unknown method: {record.get('method')!r}")
    rounds = record.get("rounds")
    if not isinstance(rounds, list):
        raise ValueError("rounds must be a list")
    for i, rnd in enumerate(rounds):
        if not isinstance(rnd, dict):
            raise ValueError(f"round {i} must be a mapping")
        missing = {
            "round",
            "training_seeds",
            "loss_traces",
            "utilities",
            "action",
            "observation",
            "posterior",
        } - rnd.keys()
        if missing:
            raise ValueError(f"round {i} missing fields: {sorted(missing)}")
        if rnd["round"] != i + 1:
            raise ValueError(f"round {i} has index {rnd['round']}, expected {i + 1}")
        action = rnd["action"]
        if not isinstance(action, dict) or "values" not in action or "index" not in action:
            raise ValueError(f"round {i} action malformed")
        obs = rnd["observation"]
        if not isinstance(obs, dict) or "values" not in obs or "valid" not in obs:
            raise ValueError(f"round {i} observation malformed")
        for u in rnd["utilities"]:
            missing = {"action", "u_mean", "u_per_repeat", "skipped_terms", "usable"} - u.keys()
            if missing:
                raise ValueError(f"round {i} utility report missing {sorted(missing)}")
        density_from_record(rnd["posterior"])


def _random_action(grid, run_seed: int, round_index: int) -> Action:
    rng = generator(run_seed, "random-action", round_index)
    return grid.action(int(rng.integers(0, len(grid))))


def _run_npe(simulator: Simulator, env: TargetEnvironment, cfg: RunConfig, active: bool):
    """Shared loop of the posterior-estimation methods."""
    spec = simulator.spec
    box = spec.param_bounds
    history = RoundHistory(method=cfg.method)
    prior = box
    estimators = None
    for r in range(1, cfg.rounds + 1):
        try:
            training_set = generate_training_set(
                simulator, prior, cfg.sims_per_round, cfg.seed, r
            )
            previous = None if cfg.retrain_from_scratch else estimators
            estimators, traces, seeds = train_posterior_estimators(
                simulator, training_set, cfg, r, previous
            )
            reports = []
            if active:
                for action in spec.action_grid:
                    g = simulator.observation_group(action.values)
                    reports.append(
                        utility(
                            estimators[g],
                            simulator,
                            prior,
                            action,
                            cfg.utility_samples,
                            cfg.utility_repeats,
                            cfg.seed,
                            r,
                            training_set if cfg.utility_reuse_training else None,
                        )
                    )
                chosen = select_action(reports)
            else:
                chosen = _random_action(spec.action_grid, cfg.seed, r)
            observation = env.observe(chosen.values)
            g = simulator.observation_group(chosen.values)
            posterior = npe_posterior(estimators[g], box, observation, chosen, cfg.seed, r)
        except Exception as exc:
            raise RoundError(r, str(exc)) from exc
        history.rounds.append(
            RoundRecord(
                round_index=r,
                prior=prior,
                training_seeds=seeds,
                loss_traces=traces,
                utilities=reports,
                action=chosen,
                observation=observation,
                posterior=posterior,
            )
        )
        prior = posterior
    return history


def _run_nle(simulator: Simulator, env: TargetEnvironment, cfg: RunConfig, active: bool):
    """Shared loop of the likelihood-surrogate methods."""
    spec = simulator.spec
    history = RoundHistory(method=cfg.method)
    prior = spec.param_bounds
    estimators = None
    for r in range(1, cfg.rounds + 1):
        try:
            training_set = generate_training_set(
                simulator, prior, cfg.sims_per_round, cfg.seed, r
            )
            previous = None if cfg.retrain_from_scratch else estimators
            estimators, traces, seeds = train_nle(simulator, training_set, cfg, r, previous)
            reports = []
            if active:
                for action in spec.action_grid:
                    g = simulator.observation_group(action.values)
                    reports.append(
                        alhi_utility(
                            estimators[g],
                            simulator,
                            prior,
                            action,
                            cfg.utility_samples,
                            cfg.marginal_n,
                            cfg.seed,
                            r,
                            training_set if cfg.utility_reuse_training else None,
                        )
                    )
                chosen = select_action(reports)
            else:
                chosen = _random_action(spec.action_grid, cfg.seed, r)
            observation = env.observe(chosen.values)
            g = simulator.observation_group(chosen.values)
            posterior = alhi_posterior(
                estimators[g],
                prior,
                observation,
                chosen,
                cfg.proposals,
                cfg.n_particles,
                cfg.seed,
                r,
            )
        except Exception as exc:
            raise RoundError(r, str(exc)) from exc
        history.rounds.append(
            RoundRecord(
                round_index=r,
                prior=prior,
                training_seeds=seeds,
                loss_traces=traces,
                utilities=reports,
                action=chosen,
                observation=observation,
                posterior=posterior,
            )
        )
        prior = posterior
    return history


def run_asbi(simulator, env, cfg: RunConfig) -> RoundHistory:
    if cfg.method != "asbi":
        raise ValueError("config method must be 'asbi'")
    return _run_npe(simulator, env, cfg, active=True)


def run_nsbi(simulator, env, cfg: RunConfig) -> RoundHistory:
    if cfg.method != "nsbi":
        raise ValueError("config method must be 'nsbi'")
    return _run_npe(simulator, env, cfg, active=False)


def run_alhi(simulator, env, cfg: RunConfig) -> RoundHistory:
    if cfg.method != "alhi":
        raise ValueError("config method must be 'alhi'")
    return _run_nle(simulator, env, cfg, active=True)


def run_nlhi(simulator, env, cfg: RunConfig) -> RoundHistory:
    if cfg.method != "nlhi":
        raise ValueError("config method must be 'nlhi'")
    return _run_nle(simulator, env, cfg, active=False)


_RUNNERS = {"asbi": run_asbi, "nsbi": run_nsbi, "alhi": run_alhi, "nlhi": run_nlhi}


def run_experiment(simulator, env, cfg: RunConfig) -> RoundHistory:
    """Dispatch to the configured method's run loop."""
    return _RUNNERS[cfg.method](simulator, env, cfg)
