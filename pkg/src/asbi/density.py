"""Mixture, box, truncated, and kernel densities used across the engine.

Every density here exposes ``log_pdf`` (vectorized over rows) and
``sample``.  Mixtures store full lower-triangular Cholesky factors of the
component covariances; log-densities are evaluated with a log-sum-exp over
components, so values stay finite arbitrarily far into the tails.

Box-truncated mixtures keep a cached ``log_mass`` normalizer estimated
once by Monte Carlo (box-uniform samples); evaluating a truncated density
never re-runs the estimate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from asbi import rng as _rng

logger = logging.getLogger(__name__)

_LOG_TAU = math.log(2.0 * math.pi)

MASS_SAMPLES = 20_000
DEFAULT_MAX_TRIES = 1_000
_CHUNK = 4_096


def _as_rows(theta) -> tuple[np.ndarray, bool]:
    """Coerce a point or a stack of points to (n, d); flag scalar input."""
    arr = np.asarray(theta, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim == 2:
        return arr, False
    raise ValueError(f"expected a vector or a 2-d stack of vectors, got shape {arr.shape}")


@dataclass(frozen=True)
class BoxPrior:
    """Uniform density on an axis-aligned box [lower, upper]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=np.float64)
        upper = np.asarray(self.upper, dtype=np.float64)
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("box bounds must be finite")
        if not np.all(upper > lower):
            raise ValueError("upper bounds must exceed lower bounds")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def log_volume(self) -> float:
        return float(np.sum(np.log(self.widths)))

    def contains(self, theta) -> np.ndarray:
        rows, scalar = _as_rows(theta)
        inside = np.all((rows >= self.lower) & (rows <= self.upper), axis=1)
        return bool(inside[0]) if scalar else inside

    def log_pdf(self, theta):
        rows, scalar = _as_rows(theta)
        out = np.where(
            np.all((rows >= self.lower) & (rows <= self.upper), axis=1),
            -self.log_volume,
            -np.inf,
        )
        return float(out[0]) if scalar else out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lower + rng.random((n, self.dim)) * self.widths


@dataclass(frozen=True)
class MoGDensity:
    """Mixture of Gaussians with component covariances Sigma_k = L_k L_k^T.

    weights: (k,), nonnegative, summing to 1 within 1e-9.
    means: (k, dim).
    chol_factors: (k, dim, dim) lower-triangular, positive diagonal.
    """

    weights: np.ndarray
    means: np.ndarray
    chol_factors: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        chol = np.asarray(self.chol_factors, dtype=np.float64)
        if w.ndim != 1 or mu.ndim != 2 or chol.ndim != 3:
            raise ValueError("weights must be (k,), means (k, d), chol_factors (k, d, d)")
        k, d = mu.shape
        if w.shape[0] != k or chol.shape != (k, d, d):
            raise ValueError(
                f"inconsistent mixture shapes: weights {w.shape}, means {mu.shape}, "
                f"chol_factors {chol.shape}"
            )
        if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1 within 1e-9")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(chol))):
            raise ValueError("means and Cholesky factors must be finite")
        upper = np.triu_indices(d, k=1)
        if np.any(chol[:, upper[0], upper[1]] != 0.0):
            raise ValueError("Cholesky factors must be lower-triangular")
        diags = chol[:, np.arange(d), np.arange(d)]
        if np.any(diags <= 0):
            raise ValueError("Cholesky factors need strictly positive diagonals")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "chol_factors", chol)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    def _component_log_pdf(self, rows: np.ndarray) -> np.ndarray:
        """log N(row; mu_k, L_k L_k^T) for every row/component: (n, k)."""
        n, d = rows.shape
        k = self.k
        diff = rows[:, None, :] - self.means[None, :, :]  # (n, k, d)
        chol = self.chol_factors
        y = np.empty_like(diff)
        for i in range(d):
            acc = diff[:, :, i]
            if i:
                acc = acc - np.einsum("kj,nkj->nk", chol[:, i, :i], y[:, :, :i])
            y[:, :, i] = acc / chol[:, i, i]
        log_det = np.sum(np.log(chol[:, np.arange(d), np.arange(d)]), axis=1)  # (k,)
        quad = np.sum(y * y, axis=2)  # (n, k)
        return -0.5 * d * _LOG_TAU - log_det[None, :] - 0.5 * quad

    def log_pdf(self, theta):
        rows, scalar = _as_rows(theta)
        if rows.shape[1] != self.dim:
            raise ValueError(f"points have dim {rows.shape[1]}, mixture has dim {self.dim}")
        out = np.empty(rows.shape[0], dtype=np.float64)
        log_w = np.log(np.maximum(self.weights, 1e-300))
        for start in range(0, rows.shape[0], _CHUNK):
            comp = self._component_log_pdf(rows[start : start + _CHUNK])
            comp = comp + log_w[None, :]
            peak = np.max(comp, axis=1)
            out[start : start + _CHUNK] = peak + np.log(
                np.sum(np.exp(comp - peak[:, None]), axis=1)
            )
        return float(out[0]) if scalar else out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(self.k, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.einsum("nij,nj->ni", self.chol_factors[comp], z)

    def marginal_std(self) -> np.ndarray:
        """Per-dimension standard deviation of the mixture."""
        cov = np.einsum("kij,klj->kil", self.chol_factors, self.chol_factors)
        var_within = np.einsum("k,kii->i", self.weights, cov)
        mean = self.weights @ self.means
        var_between = self.weights @ (self.means - mean) ** 2
        return np.sqrt(var_within + var_between)


@dataclass(frozen=True)
class TruncatedMoG:
    """A mixture restricted to a box, renormalized by the cached log_mass.

    log_mass is log of the base-mixture probability inside the box,
    estimated once with box-uniform Monte Carlo samples.
    """

    base: MoGDensity
    box: BoxPrior
    log_mass: float

    @classmethod
    def estimate(
        cls,
        base: MoGDensity,
        box: BoxPrior,
        rng: np.random.Generator,
        n_mass: int = MASS_SAMPLES,
    ) -> "TruncatedMoG":
        if base.dim != box.dim:
            raise ValueError("mixture and box dimensions differ")
        points = box.sample(rng, n_mass)
        lp = base.log_pdf(points)
        peak = float(np.max(lp))
        # mass = volume * mean(pdf) over box-uniform points, in log space
        log_mean = peak + math.log(float(np.mean(np.exp(lp - peak))))
        # estimator noise can nudge the mass just above 1; cap at log(1)
        log_mass = min(box.log_volume + log_mean, 0.0)
        return cls(base=base, box=box, log_mass=float(log_mass))

    @property
    def dim(self) -> int:
        return self.base.dim

    def contains(self, theta):
        return self.box.contains(theta)

    def log_pdf(self, theta):
        rows, scalar = _as_rows(theta)
        inside = self.box.contains(rows)
        out = np.full(rows.shape[0], -np.inf)
        if np.any(inside):
            out[inside] = self.base.log_pdf(rows[inside]) - self.log_mass
        return float(out[0]) if scalar else out

    def sample(
        self,
        rng: np.random.Generator,
        n: int,
        max_tries: int = DEFAULT_MAX_TRIES,
    ) -> np.ndarray:
        return _rejection_sample(self.base, self.box, rng, n, max_tries)


def _rejection_sample(
    base: MoGDensity,
    box: BoxPrior,
    rng: np.random.Generator,
    n: int,
    max_tries: int,
) -> np.ndarray:
    """Propose from the base mixture, keep points inside the box.

    Each output slot gets at most max_tries proposals; slots still empty
    after that are filled with their last proposal clamped to the box and
    a clamp count goes to the log.  A sustained acceptance rate below 1e-4
    is reported as a warning.
    """
    out = np.empty((n, box.dim), dtype=np.float64)
    unfilled = np.arange(n)
    proposed = 0
    accepted = 0
    tries = 0
    while unfilled.size and tries < max_tries:
        cand = base.sample(rng, unfilled.size)
        proposed += unfilled.size
        ok = box.contains(cand)
        accepted += int(np.sum(ok))
        out[unfilled[ok]] = cand[ok]
        last = cand[~ok]
        unfilled = unfilled[~ok]
        tries += 1
    if unfilled.size:
        out[unfilled] = np.clip(last, box.lower, box.upper)
        logger.warning(
            "rejection sampling clamped %d of %d draws to the box after %d tries",
            unfilled.size,
            n,
            max_tries,
        )
    if proposed and accepted / proposed < 1e-4:
        logger.warning(
            "rejection acceptance rate %.2e below 1e-4 (%d/%d)",
            accepted / proposed,
            accepted,
            proposed,
        )
    return out


@dataclass(frozen=True)
class KdeDensity:
    """Gaussian kernel density with a per-dimension bandwidth.

    Exactly equivalent to a mixture with one diagonal component per
    sample; ``as_mog`` materializes that form.
    """

    samples: np.ndarray
    bandwidth: np.ndarray
    weights: np.ndarray

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def as_mog(self) -> MoGDensity:
        n, d = self.samples.shape
        chol = np.zeros((n, d, d))
        chol[:, np.arange(d), np.arange(d)] = self.bandwidth
        return MoGDensity(weights=self.weights, means=self.samples, chol_factors=chol)

    def log_pdf(self, theta):
        return self.as_mog().log_pdf(theta)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(self.samples.shape[0], size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim)) * self.bandwidth
        return self.samples[idx] + noise


def kde_fit(samples, weights=None, floor_width=None) -> KdeDensity:
    """Fit a Gaussian KDE with Silverman's per-dimension bandwidth.

    h_i = sigma_i * (4 / ((d + 2) n))^(1 / (d + 4)), with n replaced by the
    Kish effective sample size for weighted fits.  Bandwidths are floored
    at 1e-6 of ``floor_width`` per dimension when given (callers pass the
    parameter-box widths), else at an absolute 1e-6, so degenerate sample
    sets still yield a finite density.
    """
    pts = np.asarray(samples, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("samples must be a (n, d) array with n >= 1")
    n, d = pts.shape
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,) or np.any(w < 0) or not np.isfinite(w).all():
            raise ValueError("weights must be nonnegative, finite, one per sample")
        total = float(w.sum())
        if total <= 0:
            raise ValueError("weights must not all be zero")
        w = w / total
    mean = w @ pts
    var = w @ (pts - mean) ** 2
    sigma = np.sqrt(var)
    n_eff = 1.0 / float(np.sum(w**2))
    h = sigma * (4.0 / ((d + 2.0) * n_eff)) ** (1.0 / (d + 4.0))
    if floor_width is not None:
        floor = 1e-6 * np.broadcast_to(
            np.asarray(floor_width, dtype=np.float64), (d,)
        )
    else:
        floor = np.full(d, 1e-6)
    h = np.maximum(h, floor)
    return KdeDensity(samples=pts, bandwidth=h, weights=w)


# --- operation-style entry points -----------------------------------------


def mog_log_pdf(mixture: MoGDensity, theta):
    """Log-density of a Gaussian mixture at one point or a stack of points."""
    return mixture.log_pdf(theta)


def mog_sample(mixture: MoGDensity, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n points: categorical component choice, then mu_k + L_k z."""
    return mixture.sample(rng, n)


def truncated_sample(prior, rng: np.random.Generator, n: int, max_tries: int = DEFAULT_MAX_TRIES):
    """Draw from a box or box-truncated density.  See _rejection_sample."""
    if isinstance(prior, BoxPrior):
        return prior.sample(rng, n)
    if isinstance(prior, TruncatedMoG):
        return prior.sample(rng, n, max_tries=max_tries)
    raise TypeError(f"not a prior density: {type(prior).__name__}")


def truncated_log_pdf(prior, theta):
    """Log-density of a prior; points outside the box get -inf, never an error."""
    if isinstance(prior, (BoxPrior, TruncatedMoG)):
        return prior.log_pdf(theta)
    raise TypeError(f"not a prior density: {type(prior).__name__}")


# --- serialization ---------------------------------------------------------


def density_to_record(density) -> dict:
    """Plain-dict form of any density here, ready for structured-text dumps."""
    if isinstance(density, BoxPrior):
        return {
            "kind": "box",
            "lower": density.lower.tolist(),
            "upper": density.upper.tolist(),
        }
    if isinstance(density, MoGDensity):
        return {
            "kind": "mog",
            "dim": density.dim,
            "k": density.k,
            "weights": density.weights.tolist(),
            "means": density.means.tolist(),
            "chol_factors": density.chol_factors.tolist(),
        }
    if isinstance(density, TruncatedMoG):
        return {
            "kind": "truncated_mog",
            "base": density_to_record(density.base),
            "box": density_to_record(density.box),
            "log_mass": density.log_mass,
        }
    if isinstance(density, KdeDensity):
        return {
            "kind": "kde",
            "samples": density.samples.tolist(),
            "bandwidth": density.bandwidth.tolist(),
            "weights": density.weights.tolist(),
        }
    raise TypeError(f"cannot serialize {type(density).__name__}")


def density_from_record(record: dict):
    kind = record.get("kind")
    if kind == "box":
        return BoxPrior(np.array(record["lower"]), np.array(record["upper"]))
    if kind == "mog":
        return MoGDensity(
            weights=np.array(record["weights"]),
            means=np.array(record["means"]),
            chol_factors=np.array(record["chol_factors"]),
        )
    if kind == "truncated_mog":
        return TruncatedMoG(
            base=density_from_record(record["base"]),
            box=density_from_record(record["box"]),
            log_mass=float(record["log_mass"]),
        )
    if kind == "kde":
        return KdeDensity(
            samples=np.array(record["samples"]),
            bandwidth=np.array(record["bandwidth"]),
            weights=np.array(record["weights"]),
        )
    raise ValueError(f"unknown density kind: {kind!r}")
