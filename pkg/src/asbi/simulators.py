"""Built-in stochastic simulators, their action grids, and the target
environment wrapper that hides the ground-truth parameter from inference.

Every simulator draws noise exclusively through the portable counter-based
streams in asbi.rng, so a (theta, action, seed) triple produces the same
observation bitwise whether simulated one at a time, in a batch, or by an
external plugin implementing the same recipe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from asbi.density import BoxPrior
from asbi.metrics import mesh_coverage
from asbi.rng import derive_seed, normals, normals_block


@dataclass(frozen=True)
class Action:
    """One entry of a discrete action grid."""

    values: np.ndarray
    index: int

    def to_record(self):
        return {"values": [float(v) for v in self.values], "index": self.index}


class ActionGrid:
    """Ordered, duplicate-free list of candidate actions."""

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError("action grid must be a nonempty 2-d array")
        rows = [tuple(r) for r in arr]
        if len(set(rows)) != len(rows):
            raise ValueError("action grid contains duplicate value vectors")
        self._values = arr
        self._index = {row: i for i, row in enumerate(rows)}

    def __len__(self):
        return self._values.shape[0]

    @property
    def value_dim(self) -> int:
        return self._values.shape[1]

    @property
    def values(self) -> np.ndarray:
        return self._values.copy()

    def action(self, index: int) -> Action:
        if not 0 <= index < len(self):
            raise ValueError(f"action index {index} outside grid of {len(self)}")
        return Action(values=self._values[index].copy(), index=index)

    def find(self, values) -> Action:
        """Resolve a value vector to its grid entry; exact match required."""
        row = tuple(np.asarray(values, dtype=np.float64).ravel())
        if row not in self._index:
            raise ValueError(f"action {list(row)} is not on the grid")
        return self.action(self._index[row])

    def __iter__(self):
        return (self.action(i) for i in range(len(self)))


@dataclass(frozen=True)
class Observation:
    """Simulator output: a value vector plus a validity flag."""

    values: np.ndarray
    valid: bool = True

    def to_record(self):
        return {"values": [float(v) for v in self.values], "valid": bool(self.valid)}

    @staticmethod
    def from_record(rec):
        return Observation(values=np.asarray(rec["values"], dtype=np.float64),
                           valid=bool(rec["valid"]))


@dataclass(frozen=True)
class SimulatorSpec:
    name: str
    param_dim: int
    param_bounds: BoxPrior
    action_grid: ActionGrid
    obs_dim: int
    backend: str

    def __post_init__(self):
        if self.param_dim <= 0 or self.obs_dim <= 0:
            raise ValueError("dimensions must be positive")
        if self.param_bounds.dim != self.param_dim:
            raise ValueError("parameter bounds do not match param_dim")


def _check_theta(spec, theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.param_dim,):
        raise ValueError(f"theta must have shape ({spec.param_dim},), got {theta.shape}")
    if not spec.param_bounds.contains(theta):
        raise ValueError(f"theta {theta.tolist()} outside parameter bounds")
    return theta


def _check_action(spec, values):
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if values.shape != (spec.action_grid.value_dim,):
        raise ValueError(
            f"action must have {spec.action_grid.value_dim} coordinates, got {values.shape}"
        )
    return values


class Simulator:
    """Shared surface of every builtin simulator."""

    spec: SimulatorSpec

    def noiseless(self, theta, action_values) -> Observation:
        raise NotImplementedError

    def simulate(self, theta, action_values, seed: int) -> Observation:
        raise NotImplementedError

    def simulate_batch(self, thetas, action_rows, seeds) -> list[Observation]:
        thetas = np.asarray(thetas, dtype=np.float64)
        action_rows = np.asarray(action_rows, dtype=np.float64)
        if action_rows.ndim == 1:
            action_rows = action_rows[:, None]
        return [self.simulate(thetas[i], action_rows[i], int(seeds[i]))
                for i in range(thetas.shape[0])]

    def observation_group(self, action_values) -> int:
        """Observations with the same group share a dimension and estimator."""
        return 0

    def group_obs_dim(self, group: int) -> int:
        return self.spec.obs_dim

    def pair_distance(self, a: Observation, b: Observation) -> float:
        """Task distance between two observations; Euclidean by default."""
        if a.valid and b.valid:
            return float(np.linalg.norm(a.values - b.values))
        if not a.valid and not b.valid:
            return 0.0
        raise NotImplementedError(f"{self.spec.name} has no valid/invalid distance rule")


class ToySimulator(Simulator):
    """Scalar response theta_1 * exp(3 - xi) + theta_2 * xi with unit noise.

    The exp(3 - xi) factor makes negative actions probe theta_1 at huge gain
    while large positive actions mostly weigh theta_2, so different actions
    carry very different information about each coordinate.
    """

    def __init__(self):
        grid = ActionGrid(np.linspace(-5.0, 5.0, 21))
        self.spec = SimulatorSpec(
            name="toy",
            param_dim=2,
            param_bounds=BoxPrior(np.array([-5.0, -5.0]), np.array([5.0, 5.0])),
            action_grid=grid,
            obs_dim=1,
            backend="builtin_toy",
        )

    @staticmethod
    def _mean_response(thetas, xis):
        # math.exp elementwise: identical in scalar and batched paths
        factors = np.array([math.exp(3.0 - float(v)) for v in xis])
        return thetas[:, 0] * factors + thetas[:, 1] * xis

    def noiseless(self, theta, action_values) -> Observation:
        theta = _check_theta(self.spec, theta)
        xi = _check_action(self.spec, action_values)
        value = self._mean_response(theta[None, :], xi)[0]
        return Observation(values=np.array([value]))

    def simulate(self, theta, action_values, seed: int) -> Observation:
        base = self.noiseless(theta, action_values)
        return Observation(values=base.values + normals(seed, 1))

    def simulate_batch(self, thetas, action_rows, seeds) -> list[Observation]:
        thetas = np.asarray(thetas, dtype=np.float64)
        action_rows = np.asarray(action_rows, dtype=np.float64).reshape(thetas.shape[0], 1)
        mean = self._mean_response(thetas, action_rows[:, 0])
        noise = normals_block(seeds, 1)[:, 0]
        x = mean + noise
        return [Observation(values=np.array([x[i]])) for i in range(len(x))]


#: constants of the collision surrogate, all in one place
BOX_CONSTANTS = {
    "pusher_mass": 1.0,
    "cube_mass_scale": 3.375,
    "density_floor": 0.05,
    "restitution": 0.5,
    "friction_scale": 0.5,
    "friction_floor": 0.02,
    "gravity": 9.81,
    "start": (0.30, 0.0, 0.075),
    "table_edge": 1.2,
    "noise_std": 0.005,
    "invalid_sentinel": (-1.0, -1.0, -1.0),
}


class BoxSimulator(Simulator):
    """Pushed-cube collision surrogate with an off-table invalid regime.

    A pusher at speed xi hits a cube whose mass grows with the density
    parameter; the cube slides against Coulomb friction and either stops on
    the table (valid observation of its rest position, millimeter noise on
    the horizontal coordinates) or crosses the table edge (invalid sentinel).
    """

    def __init__(self):
        grid = ActionGrid(np.linspace(0.0, 20.0, 41))
        self.spec = SimulatorSpec(
            name="box",
            param_dim=3,
            param_bounds=BoxPrior(np.zeros(3), np.ones(3)),
            action_grid=grid,
            obs_dim=3,
            backend="builtin_box",
        )
        self.constants = dict(BOX_CONSTANTS)

    def slide_distance(self, theta, xi: float) -> float:
        theta = _check_theta(self.spec, np.asarray(theta, dtype=np.float64))
        return float(self._slides(theta[None, :], np.array([float(xi)]))[0])

    def _slides(self, thetas, xis):
        c = self.constants
        m2 = c["cube_mass_scale"] * (thetas[:, 2] + c["density_floor"])
        v2 = (1.0 + c["restitution"]) * c["pusher_mass"] * xis / (c["pusher_mass"] + m2)
        mu = c["friction_scale"] * (thetas[:, 0] + thetas[:, 1]) + c["friction_floor"]
        return v2 * v2 / (2.0 * mu * c["gravity"])

    def _rest_position(self, theta, action_values):
        theta = _check_theta(self.spec, theta)
        xi = _check_action(self.spec, action_values)
        slide = self._slides(theta[None, :], xi)[0]
        x = self.constants["start"][0] + slide
        return x, x <= self.constants["table_edge"]

    def noiseless(self, theta, action_values) -> Observation:
        x, valid = self._rest_position(theta, action_values)
        if not valid:
            return Observation(values=np.array(self.constants["invalid_sentinel"]),
                               valid=False)
        start = self.constants["start"]
        return Observation(values=np.array([x, start[1], start[2]]))

    def simulate(self, theta, action_values, seed: int) -> Observation:
        x, valid = self._rest_position(theta, action_values)
        if not valid:
            return Observation(values=np.array(self.constants["invalid_sentinel"]),
                               valid=False)
        start = self.constants["start"]
        noise = normals(seed, 2) * self.constants["noise_std"]
        return Observation(values=np.array([x + noise[0], start[1] + noise[1], start[2]]))

    def simulate_batch(self, thetas, action_rows, seeds) -> list[Observation]:
        thetas = np.asarray(thetas, dtype=np.float64)
        action_rows = np.asarray(action_rows, dtype=np.float64).reshape(thetas.shape[0], 1)
        slides = self._slides(thetas, action_rows[:, 0])
        xs = self.constants["start"][0] + slides
        valid = xs <= self.constants["table_edge"]
        noise = normals_block(seeds, 2) * self.constants["noise_std"]
        sentinel = np.array(self.constants["invalid_sentinel"])
        start = self.constants["start"]
        out = []
        for i in range(len(xs)):
            if valid[i]:
                out.append(Observation(values=np.array(
                    [xs[i] + noise[i, 0], start[1] + noise[i, 1], start[2]])))
            else:
                out.append(Observation(values=sentinel.copy(), valid=False))
        return out

    def pair_distance(self, a: Observation, b: Observation) -> float:
        if a.valid and b.valid:
            return float(np.linalg.norm(a.values - b.values))
        if not a.valid and not b.valid:
            # both cubes left the table: indistinguishable outcomes
            return 0.0
        on_table = a if a.valid else b
        return float(abs(self.constants["table_edge"] - on_table.values[0]))


#: deposit-grid surrogate constants
DEPOSIT_GRID_SIZE = 16
DEPOSIT_NOISE_STD = 1e-3
DEPOSIT_CENTER_SCALE = 0.25


class DepositSimulator(Simulator):
    """Granular-deposit surrogate: a Gaussian mound on a 16x16 height grid.

    The action is (drop height h, lateral offset p, pour speed v, summary
    flag delta). The mound widens with h, v, and the restitution parameter
    and narrows with the two friction parameters; total mass is normalized
    to 1 before pixel noise. delta selects the observation encoding: the
    raw flattened grid (256 values) or the mesh-coverage summary (36).
    """

    def __init__(self):
        heights = (20.0, 80.0, 140.0)
        offsets = (-30.0, 0.0, 30.0)
        speeds = (0.5, 2.0, 5.0)
        rows = [(h, p, v, d)
                for h in heights for p in offsets for v in speeds for d in (0.0, 1.0)]
        self.spec = SimulatorSpec(
            name="deposit",
            param_dim=3,
            param_bounds=BoxPrior(np.zeros(3), np.ones(3)),
            action_grid=ActionGrid(np.array(rows)),
            obs_dim=DEPOSIT_GRID_SIZE * DEPOSIT_GRID_SIZE,
            backend="builtin_deposit",
        )

    def observation_group(self, action_values) -> int:
        return 1 if float(np.asarray(action_values).ravel()[3]) > 0.5 else 0

    def group_obs_dim(self, group: int) -> int:
        return 36 if group == 1 else self.spec.obs_dim

    def _mound(self, theta, h, p, v):
        n = DEPOSIT_GRID_SIZE
        pos = np.arange(n) - (n - 1) / 2.0
        yy = pos[:, None]
        xx = pos[None, :]
        center_y = DEPOSIT_CENTER_SCALE * p
        theta_f, theta_rf, theta_res = theta
        sigma = (3.0 * (1.0 + h / 100.0) * (1.0 + 0.1 * v) * (1.0 + theta_res)
                 / (1.0 + theta_f + theta_rf))
        g = np.exp(-(xx * xx + (yy - center_y) ** 2) / (2.0 * sigma * sigma))
        return g / g.sum()

    def _encode(self, grid, action_values):
        if self.observation_group(action_values) == 1:
            return mesh_coverage(np.clip(grid, 0.0, None))
        return grid.ravel()

    def noiseless(self, theta, action_values) -> Observation:
        theta = _check_theta(self.spec, theta)
        a = _check_action(self.spec, action_values)
        grid = self._mound(theta, a[0], a[1], a[2])
        return Observation(values=self._encode(grid, a))

    def simulate(self, theta, action_values, seed: int) -> Observation:
        theta = _check_theta(self.spec, theta)
        a = _check_action(self.spec, action_values)
        grid = self._mound(theta, a[0], a[1], a[2])
        n = DEPOSIT_GRID_SIZE
        noise = normals(seed, n * n).reshape(n, n) * DEPOSIT_NOISE_STD
        return Observation(values=self._encode(grid + noise, a))


class TargetEnvironment:
    """The system being calibrated: answers actions with noisy observations.

    The ground-truth parameter is deliberately unreachable through the public
    surface; inference code sees only spec and observe().
    """

    def __init__(self, simulator: Simulator, hidden_theta, seed: int):
        theta = _check_theta(simulator.spec, hidden_theta)
        self._simulator = simulator
        self._theta = theta
        self._seed = int(seed)
        self._calls = 0

    @property
    def spec(self) -> SimulatorSpec:
        return self._simulator.spec

    def observation_group(self, action_values) -> int:
        return self._simulator.observation_group(action_values)

    def observe(self, action_values) -> Observation:
        """Execute one action; each call consumes a fresh noise seed."""
        action = self.spec.action_grid.find(action_values)
        self._calls += 1
        seed = derive_seed(self._seed, "observe", self._calls)
        return self._simulator.simulate(self._theta, action.values, seed)

    def __repr__(self):
        return f"TargetEnvironment(spec={self.spec.name!r}, calls={self._calls})"


_BUILTINS = {"toy": ToySimulator, "box": BoxSimulator, "deposit": DepositSimulator}


def get_simulator(name: str) -> Simulator:
    """Instantiate a builtin simulator by name (toy, box, deposit)."""
    if name not in _BUILTINS:
        raise ValueError(f"unknown simulator {name!r}; builtins: {sorted(_BUILTINS)}")
    return _BUILTINS[name]()
