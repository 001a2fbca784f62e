"""Evaluation metrics: ground-truth log-probability, reproduction error,
depth-grid intersection volume, and the mesh-coverage summary statistic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from asbi.density import truncated_log_pdf, truncated_sample


def log_prob_true(posterior, theta_true) -> float:
    """Log-density of the ground-truth parameter under a posterior.

    Returns -inf when theta_true lies outside the posterior's support box.
    """
    return float(truncated_log_pdf(posterior, np.asarray(theta_true, dtype=np.float64)))


def rep_err(simulator, posterior, theta_true, action_values, n, rng):
    """Reproduction error of a posterior at one action.

    Draws n parameters from the posterior, runs the simulator's noiseless
    path at the given action for each, and averages the task distance to the
    noiseless output at theta_true. Returns (mean, std).
    """
    if n < 1:
        raise ValueError("rep_err needs n >= 1")
    theta_true = np.asarray(theta_true, dtype=np.float64)
    action_values = np.asarray(action_values, dtype=np.float64)
    reference = simulator.noiseless(theta_true, action_values)
    thetas = truncated_sample(posterior, rng, n)
    dists = np.empty(n)
    for i in range(n):
        dists[i] = simulator.pair_distance(simulator.noiseless(thetas[i], action_values),
                                           reference)
    return float(dists.mean()), float(dists.std())


def _as_grid(grid):
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"depth grid must be 2-d, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("depth grid entries must be finite")
    return arr


def inter_vol_pair(x_real, x_sim) -> float:
    """Pixelwise-minimum overlap volume between two depth grids."""
    a = _as_grid(x_real)
    b = _as_grid(x_sim)
    if a.shape != b.shape:
        raise ValueError(f"grid shapes differ: {a.shape} vs {b.shape}")
    return float(np.minimum(a, b).sum())


def inter_vol(x_real, sims) -> float:
    """Mean overlap volume between a reference grid and simulated grids."""
    sims = list(sims)
    if not sims:
        raise ValueError("inter_vol needs at least one simulated grid")
    return float(np.mean([inter_vol_pair(x_real, s) for s in sims]))


def _centered_split(n: int, parts: int) -> list[int]:
    """Split n into `parts` contiguous sizes, giving remainders to the middle.

    The result is palindromic whenever the remainder allows, so a 180-degree
    grid rotation permutes tiles onto tiles.
    """
    base, rem = divmod(n, parts)
    sizes = [base] * parts
    order = sorted(range(parts), key=lambda i: (abs(i - (parts - 1) / 2.0), i))
    for i in range(rem):
        sizes[order[i]] += 1
    return sizes


def _tile_slices(n: int, parts: int) -> list[slice]:
    edges = np.cumsum([0] + _centered_split(n, parts))
    return [slice(int(edges[i]), int(edges[i + 1])) for i in range(parts)]


def _box_blur(grid, radius: int):
    """Mean over a (2r+1)^2 window with edge-clamped padding."""
    padded = np.pad(grid, radius, mode="edge")
    h, w = grid.shape
    total = np.zeros_like(grid)
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            total += padded[dy:dy + h, dx:dx + w]
    return total / float((2 * radius + 1) ** 2)


def _gaussian_blur(grid, radius: int):
    """Separable Gaussian (sigma = radius / 2) over the same clamped window."""
    sigma = max(radius / 2.0, 1e-12)
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    padded = np.pad(grid, radius, mode="edge")
    h, w = grid.shape
    rows = np.zeros((h, w + 2 * radius))
    for k, dy in enumerate(range(2 * radius + 1)):
        rows += kernel[k] * padded[dy:dy + h, :]
    out = np.zeros((h, w))
    for k, dx in enumerate(range(2 * radius + 1)):
        out += kernel[k] * rows[:, dx:dx + w]
    return out


def mesh_coverage(grid, radii=(1, 3, 5), threshold=1e-6, blur="box", tiling=(3, 4)):
    """Summary statistic of a depth grid: tile coverage ratios at several blurs.

    For each blur radius the grid is smoothed (edge-clamped), thresholded at
    `threshold` times its max into a binary mask, and partitioned into a
    tiling[0] x tiling[1] grid of areas; each area contributes its covered
    fraction. Output length is len(radii) * tiling[0] * tiling[1].
    """
    arr = _as_grid(grid)
    if np.any(arr < 0):
        raise ValueError("depth grid entries must be nonnegative")
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"mesh coverage needs a square grid, got {arr.shape}")
    n_rows, n_cols = tiling
    if arr.shape[0] < n_rows or arr.shape[1] < n_cols:
        raise ValueError(f"grid {arr.shape} smaller than {n_rows}x{n_cols} tiling")
    if blur == "box":
        blur_fn = _box_blur
    elif blur == "gaussian":
        blur_fn = _gaussian_blur
    else:
        raise ValueError(f"unknown blur kind {blur!r}")

    row_slices = _tile_slices(arr.shape[0], n_rows)
    col_slices = _tile_slices(arr.shape[1], n_cols)
    out = []
    for radius in radii:
        blurred = blur_fn(arr, int(radius))
        peak = blurred.max()
        mask = blurred >= threshold * peak if peak > 0 else np.zeros_like(blurred, bool)
        for rs in row_slices:
            for cs in col_slices:
                out.append(float(mask[rs, cs].mean()))
    return np.array(out)


@dataclass
class MetricReport:
    """Per-run metric bundle: one log-prob entry per round, reproduction
    errors keyed by action, optional per-round overlap volumes."""

    log_prob_true: list = field(default_factory=list)
    rep_err: dict = field(default_factory=dict)
    inter_vol: list | None = None

    def to_rows(self):
        """Flatten into (metric, round_or_action, value...) CSV rows."""
        rows = [("log_prob_true", str(r), f"{v:.17g}", "")
                for r, v in enumerate(self.log_prob_true, start=1)]
        for action, (mean, std) in self.rep_err.items():
            rows.append(("rep_err", str(action), f"{mean:.17g}", f"{std:.17g}"))
        if self.inter_vol is not None:
            rows.extend(("inter_vol", str(r), f"{v:.17g}", "")
                        for r, v in enumerate(self.inter_vol, start=1))
        return rows
