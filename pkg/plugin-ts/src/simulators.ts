/**
 * Simulators served by this plugin.
 *
 * `toy` mirrors the builtin toy simulator of the Python engine: identical
 * mean response and identical noise stream, so observations agree with the
 * builtin to 1e-12 relative (the only differences are last-bit libm
 * rounding in exp/log/sqrt/cos/sin).
 *
 * `pendulum` is native to this plugin: a linearly damped pendulum released
 * from rest angle zero with an initial push, observed at a fixed horizon.
 */

import { normals } from "./rng";

export interface Observation {
  values: number[];
  valid: boolean;
}

/** Rejected request input; reported to the driver as an error response. */
export class SimulationError extends Error {}

export interface Simulator {
  name: string;
  paramDim: number;
  obsDim: number;
  actionDims: number;
  simulate(theta: number[], action: number[], seed: bigint): Observation;
}

function checkTheta(sim: Simulator, theta: number[], lo: number[], hi: number[]): void {
  if (theta.length !== sim.paramDim) {
    throw new SimulationError(
      `theta must have ${sim.paramDim} coordinates, got ${theta.length}`,
    );
  }
  for (let i = 0; i < theta.length; i++) {
    if (!(theta[i] >= lo[i] && theta[i] <= hi[i])) {
      throw new SimulationError(
        `theta [${theta.join(", ")}] outside parameter bounds`,
      );
    }
  }
}

function checkAction(sim: Simulator, action: number[]): void {
  if (action.length !== sim.actionDims) {
    throw new SimulationError(
      `action must have ${sim.actionDims} coordinates, got ${action.length}`,
    );
  }
}

/** Scalar response theta_1 * exp(3 - xi) + theta_2 * xi with unit noise. */
export class ToySimulator implements Simulator {
  readonly name = "toy";
  readonly paramDim = 2;
  readonly obsDim = 1;
  readonly actionDims = 1;

  simulate(theta: number[], action: number[], seed: bigint): Observation {
    checkTheta(this, theta, [-5, -5], [5, 5]);
    checkAction(this, action);
    const xi = action[0];
    const mean = theta[0] * Math.exp(3.0 - xi) + theta[1] * xi;
    return { values: [mean + normals(seed, 1)[0]], valid: true };
  }
}

const GRAVITY = 9.81;
const HORIZON = 3.0;
const PENDULUM_NOISE_STD = 0.05;

/**
 * Damped pendulum probed by an initial push.
 *
 * Parameters are arm length L in [0.2, 2] and damping ratio c in [0, 1];
 * the action is the initial angular velocity.  The linearized equation
 * phi'' + 2 c w phi' + w^2 phi = 0 with w = sqrt(g / L), phi(0) = 0 and
 * phi'(0) = push has the closed forms used below, so the observation is
 * the angle at t = 3 s plus measurement noise.  At c = 1 the response is
 * critically damped and has decayed to near zero by the horizon whatever
 * the push, so heavily damped parameters are hard to tell apart.
 */
export class PendulumSimulator implements Simulator {
  readonly name = "pendulum";
  readonly paramDim = 2;
  readonly obsDim = 1;
  readonly actionDims = 1;

  angleAtHorizon(length: number, damping: number, push: number): number {
    const w = Math.sqrt(GRAVITY / length);
    if (damping < 1.0) {
      const wd = w * Math.sqrt(1.0 - damping * damping);
      return (push / wd) * Math.exp(-damping * w * HORIZON) * Math.sin(wd * HORIZON);
    }
    return push * HORIZON * Math.exp(-w * HORIZON);
  }

  simulate(theta: number[], action: number[], seed: bigint): Observation {
    checkTheta(this, theta, [0.2, 0.0], [2.0, 1.0]);
    checkAction(this, action);
    const angle = this.angleAtHorizon(theta[0], theta[1], action[0]);
    const noise = PENDULUM_NOISE_STD * normals(seed, 1)[0];
    return { values: [angle + noise], valid: true };
  }
}

const REGISTRY: Record<string, () => Simulator> = {
  toy: () => new ToySimulator(),
  pendulum: () => new PendulumSimulator(),
};

export const SIMULATOR_NAMES = Object.keys(REGISTRY);

export function makeSimulator(name: string): Simulator {
  const factory = REGISTRY[name];
  if (factory === undefined) {
    throw new Error(`unknown simulator ${JSON.stringify(name)}; choices: ${SIMULATOR_NAMES.join(", ")}`);
  }
  return factory();
}
