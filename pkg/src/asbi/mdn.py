"""Mixture-density network: forward pass, exact gradients, Adam training.

A feed-forward net maps a context vector (observation plus action for
posterior estimation, parameters plus action for likelihood estimation)
to the parameters of a Gaussian mixture over the target: K softmax
weights, K affine means, K softplus-floored Cholesky diagonals, and the
strictly-lower Cholesky entries taken as-is.

Everything is plain numpy.  Gradients of the negative log-likelihood are
reverse-mode derivatives written out by hand through the mixture head
(log-sum-exp responsibilities, triangular solves, softplus/softmax
chains) and the hidden layers; a finite-difference suite in the tests
holds them to 1e-4 relative.

Contexts are standardized per training set.  Targets are standardized
too: to the unit box implied by parameter bounds when bounds are given,
else to zero mean and unit scale.  The mixture emitted for a context is
mapped back to raw target units (affine pushforward of means and
Cholesky factors; log-densities shift by the log-Jacobian), so callers
never see the standardized space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from asbi.density import MoGDensity

_LOG_TAU = math.log(2.0 * math.pi)
DIAG_FLOOR = 1e-4
SCALE_FLOOR = 1e-8
MAD_TO_SIGMA = 1.4826

_ACTIVATIONS = ("tanh", "relu")
_COVARIANCES = ("full", "diag")


@dataclass(frozen=True)
class MdnArchitecture:
    """Shape of the network; fully determines the parameter layout."""

    input_dim: int
    output_dim: int
    hidden_sizes: tuple = (128, 128)
    k: int = 5
    activation: str = "tanh"
    covariance: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1 or self.output_dim < 1 or self.k < 1:
            raise ValueError("input_dim, output_dim, and k must be positive")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be a nonempty tuple of positive ints")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        if self.covariance not in _COVARIANCES:
            raise ValueError(f"covariance must be one of {_COVARIANCES}")

    @property
    def n_subdiag(self) -> int:
        d = self.output_dim
        return d * (d - 1) // 2 if self.covariance == "full" else 0

    @property
    def head_width(self) -> int:
        d = self.output_dim
        return self.k * (1 + 2 * d + self.n_subdiag)

    @property
    def layer_shapes(self) -> list:
        dims = [self.input_dim, *self.hidden_sizes, self.head_width]
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    @property
    def n_params(self) -> int:
        return sum(n_in * n_out + n_out for n_in, n_out in self.layer_shapes)


@dataclass
class MdnParams:
    """Per-layer (weights, bias) pairs; flattenable to one vector."""

    layers: list

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    @classmethod
    def from_flat(cls, arch: MdnArchitecture, flat: np.ndarray) -> "MdnParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (arch.n_params,):
            raise ValueError(f"expected {arch.n_params} parameters, got {flat.shape}")
        layers = []
        pos = 0
        for n_in, n_out in arch.layer_shapes:
            w = flat[pos : pos + n_in * n_out].reshape(n_in, n_out)
            pos += n_in * n_out
            b = flat[pos : pos + n_out]
            pos += n_out
            layers.append((w.copy(), b.copy()))
        return cls(layers=layers)

    def copy(self) -> "MdnParams":
        return MdnParams(layers=[(w.copy(), b.copy()) for w, b in self.layers])


@dataclass(frozen=True)
class InputStandardizer:
    """Per-coordinate affine map to zero mean, unit scale (scale floored).

    Both statistics are robust: the center is the per-coordinate median and
    the scale is 1.4826 times the median absolute deviation, which match the
    mean and standard deviation on Gaussian columns but are not dominated by
    heavy-tailed ones.  When ``groups`` labels the rows (conditioning
    contexts with very different response ranges), deviations are taken from
    each group's own median, so the scale tracks the within-group variation
    that actually carries signal rather than the distance between group
    centers.  Columns whose robust spread degenerates to zero fall back to
    the plain standard deviation.
    """

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, inputs: np.ndarray, groups: np.ndarray | None = None) -> "InputStandardizer":
        inputs = np.asarray(inputs, dtype=np.float64)
        centers = np.median(inputs, axis=0)
        if groups is None:
            deviations = np.abs(inputs - centers)
        else:
            groups = np.asarray(groups)
            if groups.shape != (inputs.shape[0],):
                raise ValueError("groups must label each input row")
            deviations = np.empty_like(inputs)
            for g in np.unique(groups):
                rows = groups == g
                deviations[rows] = np.abs(inputs[rows] - np.median(inputs[rows], axis=0))
        robust = MAD_TO_SIGMA * np.median(deviations, axis=0)
        scale = np.where(robust > 0.0, robust, inputs.std(axis=0))
        return cls(
            mean=centers,
            scale=np.maximum(scale, SCALE_FLOOR),
        )

    def apply(self, inputs: np.ndarray) -> np.ndarray:
        return (np.asarray(inputs, dtype=np.float64) - self.mean) / self.scale


@dataclass(frozen=True)
class TargetTransform:
    """Affine target map z = (t - shift) / scale and its mixture pushforward."""

    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def from_box(cls, lower, upper) -> "TargetTransform":
        lower = np.asarray(lower, dtype=np.float64)
        upper = np.asarray(upper, dtype=np.float64)
        return cls(shift=lower, scale=upper - lower)

    @classmethod
    def from_data(cls, targets: np.ndarray) -> "TargetTransform":
        targets = np.asarray(targets, dtype=np.float64)
        return cls(
            shift=targets.mean(axis=0),
            scale=np.maximum(targets.std(axis=0), SCALE_FLOOR),
        )

    @property
    def log_jacobian(self) -> float:
        """log|d target / d z| = sum of log scales."""
        return float(np.sum(np.log(self.scale)))

    def standardize(self, targets: np.ndarray) -> np.ndarray:
        return (np.asarray(targets, dtype=np.float64) - self.shift) / self.scale

    def push_means(self, mu_z: np.ndarray) -> np.ndarray:
        return self.shift + mu_z * self.scale

    def push_chol(self, chol_z: np.ndarray) -> np.ndarray:
        # row scaling: (S L)(S L)^T = S (L L^T) S
        return chol_z * self.scale[..., :, None]


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 50
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    grad_clip_norm: float = 10.0


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, iteration: int, last_loss: float):
        super().__init__(
            f"training loss became non-finite at iteration {iteration} "
            f"(last finite loss {last_loss:.6g})"
        )
        self.iteration = iteration
        self.last_loss = last_loss


def _act(arch: MdnArchitecture, pre: np.ndarray) -> np.ndarray:
    if arch.activation == "tanh":
        return np.tanh(pre)
    return np.maximum(pre, 0.0)


def _act_grad(arch: MdnArchitecture, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if arch.activation == "tanh":
        return 1.0 - post * post
    return (pre > 0.0).astype(np.float64)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _tril_index_pairs(d: int):
    return np.tril_indices(d, k=-1)


def _forward_net(arch: MdnArchitecture, params: MdnParams, x_std: np.ndarray):
    """Hidden stack + linear head.  Returns (activations, pre-activations, head)."""
    acts = [x_std]
    pres = []
    a = x_std
    for w, b in params.layers[:-1]:
        pre = a @ w + b
        a = _act(arch, pre)
        pres.append(pre)
        acts.append(a)
    w_head, b_head = params.layers[-1]
    head = a @ w_head + b_head
    return acts, pres, head


def _split_head(arch: MdnArchitecture, head: np.ndarray):
    """Head activations -> standardized mixture parameters.

    Returns log-weights (B, K), means (B, K, d), Cholesky factors
    (B, K, d, d), plus raw diagonal entries for the backward chain.
    """
    b, _ = head.shape
    k, d, t = arch.k, arch.output_dim, arch.n_subdiag
    logits = head[:, :k]
    mu = head[:, k : k + k * d].reshape(b, k, d)
    diag_raw = head[:, k + k * d : k + 2 * k * d].reshape(b, k, d)
    log_w = logits - _logsumexp(logits, axis=1, keepdims=True)
    diag = _softplus(diag_raw) + DIAG_FLOOR
    chol = np.zeros((b, k, d, d))
    ii = np.arange(d)
    chol[:, :, ii, ii] = diag
    if t:
        rows, cols = _tril_index_pairs(d)
        sub = head[:, k + 2 * k * d :].reshape(b, k, t)
        chol[:, :, rows, cols] = sub
    return logits, log_w, mu, diag_raw, diag, chol


def _logsumexp(x: np.ndarray, axis: int, keepdims: bool = False) -> np.ndarray:
    peak = np.max(x, axis=axis, keepdims=True)
    out = peak + np.log(np.sum(np.exp(x - peak), axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


def _solve_lower(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """y = L^-1 rhs for stacked lower-triangular L: shapes (..., d, d), (..., d)."""
    d = rhs.shape[-1]
    y = np.empty_like(rhs)
    for i in range(d):
        acc = rhs[..., i]
        if i:
            acc = acc - np.einsum("...j,...j->...", chol[..., i, :i], y[..., :i])
        y[..., i] = acc / chol[..., i, i]
    return y


def _solve_lower_t(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """g = L^-T rhs (backward substitution)."""
    d = rhs.shape[-1]
    g = np.empty_like(rhs)
    for i in range(d - 1, -1, -1):
        acc = rhs[..., i]
        if i < d - 1:
            acc = acc - np.einsum("...j,...j->...", chol[..., i + 1 :, i], g[..., i + 1 :])
        g[..., i] = acc / chol[..., i, i]
    return g


def _mixture_log_prob_std(log_w, mu, chol, z):
    """log q(z | context) in standardized space.  z: (B, d)."""
    d = z.shape[-1]
    diff = z[:, None, :] - mu
    y = _solve_lower(chol, diff)
    ii = np.arange(d)
    log_det = np.sum(np.log(chol[:, :, ii, ii]), axis=2)
    log_n = -0.5 * d * _LOG_TAU - log_det - 0.5 * np.sum(y * y, axis=2)
    comp = log_w + log_n
    return _logsumexp(comp, axis=1), comp, y


def _loss_and_grad_std(arch, params, x_std, z_std, want_grad=True):
    """Mean NLL in standardized target space, with exact parameter gradients.

    Overflow is allowed to propagate as inf/nan; callers that train check the
    loss for finiteness, so the intermediate warnings are suppressed here.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _loss_and_grad_impl(arch, params, x_std, z_std, want_grad)


def _loss_and_grad_impl(arch, params, x_std, z_std, want_grad):
    b = x_std.shape[0]
    d = arch.output_dim
    acts, pres, head = _forward_net(arch, params, x_std)
    logits, log_w, mu, diag_raw, diag, chol = _split_head(arch, head)
    lse, comp, y = _mixture_log_prob_std(log_w, mu, chol, z_std)
    loss = float(-np.mean(lse))
    if not want_grad:
        return loss, None

    resp = np.exp(comp - lse[:, None])  # (B, K) responsibilities
    coef = resp / b
    pi = np.exp(log_w)

    g = _solve_lower_t(chol, y)  # (B, K, d)
    d_logits = (pi - resp) / b
    d_mu = -coef[:, :, None] * g
    d_diag = -coef[:, :, None] * (g * y - 1.0 / diag)
    d_diag_raw = d_diag * _sigmoid(diag_raw)
    pieces = [d_logits, d_mu.reshape(b, -1), d_diag_raw.reshape(b, -1)]
    if arch.n_subdiag:
        rows, cols = _tril_index_pairs(d)
        d_sub = -coef[:, :, None] * g[:, :, rows] * y[:, :, cols]
        pieces.append(d_sub.reshape(b, -1))
    d_head = np.concatenate(pieces, axis=1)

    grads = [None] * len(params.layers)
    w_head, _ = params.layers[-1]
    grads[-1] = (acts[-1].T @ d_head, d_head.sum(axis=0))
    d_a = d_head @ w_head.T
    for l in range(len(params.layers) - 2, -1, -1):
        w, _ = params.layers[l]
        d_pre = d_a * _act_grad(arch, pres[l], acts[l + 1])
        grads[l] = (acts[l].T @ d_pre, d_pre.sum(axis=0))
        d_a = d_pre @ w.T
    return loss, MdnParams(layers=grads)


def init_params(
    arch: MdnArchitecture,
    rng: np.random.Generator,
    z_min: np.ndarray,
    z_max: np.ndarray,
    z_std: np.ndarray,
) -> MdnParams:
    """Weight init: uniform +-sqrt(6/(fan_in+fan_out)) hidden layers, a
    damped head, and head biases that start the mixture as K components
    spread across the standardized target range with sigma about half the
    target standard deviation."""
    layers = []
    shapes = arch.layer_shapes
    for idx, (n_in, n_out) in enumerate(shapes):
        bound = math.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-bound, bound, size=(n_in, n_out))
        if idx == len(shapes) - 1:
            w *= 0.1
        layers.append((w, np.zeros(n_out)))

    k, d = arch.k, arch.output_dim
    b_head = layers[-1][1]
    fractions = (np.arange(k) + 0.5) / k
    mean_bias = z_min[None, :] + fractions[:, None] * (z_max - z_min)[None, :]
    b_head[k : k + k * d] = mean_bias.ravel()
    sigma0 = np.maximum(z_std / 2.0, 2 * DIAG_FLOOR)
    diag_bias = np.log(np.expm1(sigma0 - DIAG_FLOOR))
    b_head[k + k * d : k + 2 * k * d] = np.tile(diag_bias, k)
    return MdnParams(layers=layers)


@dataclass(frozen=True)
class MdnEstimator:
    """A trained conditional mixture: context in, mixture over targets out."""

    arch: MdnArchitecture
    params: MdnParams
    input_std: InputStandardizer
    target_tf: TargetTransform

    def _head_for(self, contexts: np.ndarray):
        x_std = self.input_std.apply(np.atleast_2d(contexts))
        _, _, head = _forward_net(self.arch, self.params, x_std)
        return _split_head(self.arch, head)

    def condition(self, context: np.ndarray) -> MoGDensity:
        """Mixture over targets, in raw target units, for one context."""
        context = np.asarray(context, dtype=np.float64)
        if context.ndim != 1 or context.shape[0] != self.arch.input_dim:
            raise ValueError(
                f"context must be a vector of length {self.arch.input_dim}, "
                f"got shape {context.shape}"
            )
        _, log_w, mu, _, _, chol = self._head_for(context[None, :])
        return MoGDensity(
            weights=np.exp(log_w[0] - _logsumexp(log_w[0], axis=0)),
            means=self.target_tf.push_means(mu[0]),
            chol_factors=self.target_tf.push_chol(chol[0]),
        )

    def log_prob(self, contexts: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """log q(target | context) per row, in raw target units."""
        contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        _, log_w, mu, _, _, chol = self._head_for(contexts)
        z = self.target_tf.standardize(targets)
        lse, _, _ = _mixture_log_prob_std(log_w, mu, chol, z)
        return lse - self.target_tf.log_jacobian

    def to_record(self) -> dict:
        return {
            "format": "mdn-estimator-v1",
            "architecture": {
                "input_dim": self.arch.input_dim,
                "output_dim": self.arch.output_dim,
                "hidden_sizes": list(self.arch.hidden_sizes),
                "k": self.arch.k,
                "activation": self.arch.activation,
                "covariance": self.arch.covariance,
            },
            "params": self.params.flatten().tolist(),
            "input_standardizer": {
                "mean": self.input_std.mean.tolist(),
                "scale": self.input_std.scale.tolist(),
            },
            "target_transform": {
                "shift": self.target_tf.shift.tolist(),
                "scale": self.target_tf.scale.tolist(),
            },
        }

    @classmethod
    def from_record(cls, record: dict) -> "MdnEstimator":
        if record.get("format") != "mdn-estimator-v1":
            raise ValueError(f"unrecognized estimator format: {record.get('format')!r}")
        arch = MdnArchitecture(
            input_dim=record["architecture"]["input_dim"],
            output_dim=record["architecture"]["output_dim"],
            hidden_sizes=tuple(record["architecture"]["hidden_sizes"]),
            k=record["architecture"]["k"],
            activation=record["architecture"]["activation"],
            covariance=record["architecture"]["covariance"],
        )
        return cls(
            arch=arch,
            params=MdnParams.from_flat(arch, np.array(record["params"])),
            input_std=InputStandardizer(
                mean=np.array(record["input_standardizer"]["mean"]),
                scale=np.array(record["input_standardizer"]["scale"]),
            ),
            target_tf=TargetTransform(
                shift=np.array(record["target_transform"]["shift"]),
                scale=np.array(record["target_transform"]["scale"]),
            ),
        )


def mdn_forward(estimator: MdnEstimator, context: np.ndarray) -> MoGDensity:
    """Operation-style alias for MdnEstimator.condition."""
    return estimator.condition(context)


def cross_log_prob(estimator: MdnEstimator, contexts, targets) -> np.ndarray:
    """All-pairs log q(target_t | context_b) as a (B, T) matrix.

    One forward pass per context; each conditioned mixture is then evaluated
    at every target. Equivalent to pairwise log_prob over the cross product
    but without the B*T repeated network evaluations.
    """
    arch = estimator.arch
    contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if contexts.shape[1] != arch.input_dim:
        raise ValueError(f"contexts must be (B, {arch.input_dim}), got {contexts.shape}")
    if targets.shape[1] != arch.output_dim:
        raise ValueError(f"targets must be (T, {arch.output_dim}), got {targets.shape}")
    _, log_w, mu, _, _, chol = estimator._head_for(contexts)
    z = estimator.target_tf.standardize(targets)
    d = arch.output_dim

    diff = z[None, None, :, :] - mu[:, :, None, :]  # (B, K, T, d)
    y = np.empty_like(diff)
    for i in range(d):
        acc = diff[..., i].copy()
        for j in range(i):
            acc -= chol[:, :, None, i, j] * y[..., j]
        y[..., i] = acc / chol[:, :, None, i, i]
    ii = np.arange(d)
    log_det = np.sum(np.log(chol[:, :, ii, ii]), axis=2)  # (B, K)
    comp = (log_w - 0.5 * d * _LOG_TAU - log_det)[:, :, None] - 0.5 * np.sum(y * y, axis=3)
    peak = np.max(comp, axis=1, keepdims=True)
    lse = peak[:, 0, :] + np.log(np.sum(np.exp(comp - peak), axis=1))
    return lse - estimator.target_tf.log_jacobian


def _check_batch(arch, inputs, targets):
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != arch.input_dim:
        raise ValueError(f"inputs must be (n, {arch.input_dim}), got {inputs.shape}")
    if targets.ndim != 2 or targets.shape != (inputs.shape[0], arch.output_dim):
        raise ValueError(
            f"targets must be ({inputs.shape[0]}, {arch.output_dim}), got {targets.shape}"
        )
    return inputs, targets


def nll_loss(
    arch: MdnArchitecture,
    params: MdnParams,
    input_std: InputStandardizer,
    target_tf: TargetTransform,
    inputs: np.ndarray,
    targets: np.ndarray,
) -> float:
    """Mean negative log-likelihood of the batch, in raw target units."""
    inputs, targets = _check_batch(arch, inputs, targets)
    loss, _ = _loss_and_grad_std(
        arch, params, input_std.apply(inputs), target_tf.standardize(targets), want_grad=False
    )
    return loss + target_tf.log_jacobian


def nll_grad(
    arch: MdnArchitecture,
    params: MdnParams,
    input_std: InputStandardizer,
    target_tf: TargetTransform,
    inputs: np.ndarray,
    targets: np.ndarray,
) -> np.ndarray:
    """Exact gradient of nll_loss w.r.t. the flattened parameters."""
    inputs, targets = _check_batch(arch, inputs, targets)
    _, grads = _loss_and_grad_std(
        arch, params, input_std.apply(inputs), target_tf.standardize(targets)
    )
    return grads.flatten()


def train_mdn(
    arch: MdnArchitecture,
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    target_bounds=None,
    warm_start: "MdnEstimator | None" = None,
    input_groups: np.ndarray | None = None,
):
    """Adam on minibatch NLL.  Returns (estimator, loss_trace).

    Minibatches are drawn uniformly with replacement from cfg.seed's
    stream.  Gradients are clipped in 2-norm.  A non-finite loss raises
    TrainingDiverged with the failing iteration and the last finite loss.
    target_bounds, when given as (lower, upper), pins the target transform
    to the unit box implied by those bounds; else it is fit to the data.
    warm_start reuses a previous estimator's parameters and standardizers
    (which are tied to the parameters) instead of a fresh initialization.
    input_groups optionally labels rows sharing a conditioning context so
    the input standardizer measures within-context spread.
    """
    inputs, targets = _check_batch(arch, inputs, targets)
    n = inputs.shape[0]
    if n < 1:
        raise ValueError("training needs at least one example")
    if warm_start is not None:
        if warm_start.arch != arch:
            raise ValueError("warm_start estimator architecture differs")
        input_std = warm_start.input_std
        target_tf = warm_start.target_tf
    else:
        input_std = InputStandardizer.fit(inputs, groups=input_groups)
        if target_bounds is not None:
            target_tf = TargetTransform.from_box(*target_bounds)
        else:
            target_tf = TargetTransform.from_data(targets)
    x_std = input_std.apply(inputs)
    z_std = target_tf.standardize(targets)

    rng = np.random.default_rng(cfg.seed)
    if warm_start is not None:
        params = warm_start.params.copy()
    else:
        params = init_params(
            arch, rng, z_std.min(axis=0), z_std.max(axis=0), np.maximum(z_std.std(axis=0), 1e-3)
        )

    flat = params.flatten()
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)
    trace = np.empty(cfg.iterations)
    last_finite = math.nan
    log_jac = target_tf.log_jacobian
    for t in range(1, cfg.iterations + 1):
        idx = rng.integers(0, n, size=cfg.batch_size)
        loss_z, grads = _loss_and_grad_std(arch, params, x_std[idx], z_std[idx])
        loss = loss_z + log_jac
        if not math.isfinite(loss):
            raise TrainingDiverged(iteration=t, last_loss=last_finite)
        last_finite = loss
        trace[t - 1] = loss

        g = grads.flatten()
        gnorm = float(np.linalg.norm(g))
        if gnorm > cfg.grad_clip_norm:
            g *= cfg.grad_clip_norm / gnorm
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        flat = flat - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        params = MdnParams.from_flat(arch, flat)

    estimator = MdnEstimator(
        arch=arch, params=params, input_std=input_std, target_tf=target_tf
    )
    return estimator, trace
