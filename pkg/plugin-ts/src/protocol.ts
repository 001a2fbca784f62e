/**
 * Line-delimited JSON wire protocol, plugin side (see ../../docs/protocol.md).
 *
 * One JSON object per line.  Inbound lines are simulate_request and
 * shutdown; outbound lines are hello, simulate_response, and error.  Seeds
 * are 64-bit integers, wider than a double can hold exactly, so the seed
 * field is re-extracted from the raw line text and parsed as a BigInt
 * rather than trusted to JSON.parse.
 */

import type { Observation, Simulator } from "./simulators";

export const PROTOCOL_VERSION = 1;

/** Rejected inbound line; `id` is whatever could be salvaged from it. */
export class ProtocolViolation extends Error {
  readonly id: number | null;

  constructor(message: string, id: number | null = null) {
    super(message);
    this.id = id;
  }
}

export type Inbound =
  | { kind: "simulate_request"; id: number; theta: number[]; action: number[]; seed: bigint }
  | { kind: "shutdown" };

const KINDS = new Set(["hello", "simulate_request", "simulate_response", "error", "shutdown"]);

function isInt(v: unknown): v is number {
  return typeof v === "number" && Number.isInteger(v);
}

function isRealList(v: unknown): v is number[] {
  return Array.isArray(v) && v.every((x) => typeof x === "number");
}

/** Best-effort id recovery from a rejected line, so errors stay routable. */
function salvageId(raw: unknown): number | null {
  if (typeof raw === "object" && raw !== null && !Array.isArray(raw)) {
    const id = (raw as Record<string, unknown>).id;
    if (isInt(id)) {
      return id;
    }
  }
  return null;
}

/**
 * Recover the exact integer seed from the raw line.
 *
 * JSON.parse reads numbers as doubles, which silently rounds integers
 * above 2^53.  The digit runs following a "seed" key are re-parsed as
 * BigInt; the occurrence whose double rounding matches the parsed field
 * is the real one.  Seeds written in a non-digit form (exponents) fall
 * back to the parsed value when it is exactly representable.
 */
function exactSeed(line: string, parsedSeed: number): bigint {
  for (const m of line.matchAll(/"seed"\s*:\s*(-?\d+)/g)) {
    const candidate = BigInt(m[1]);
    if (Number(candidate) === parsedSeed) {
      return candidate;
    }
  }
  if (Number.isSafeInteger(parsedSeed)) {
    return BigInt(parsedSeed);
  }
  throw new ProtocolViolation("cannot recover the exact seed from the request line");
}

/** Decode and validate one inbound protocol line. */
export function parseInbound(line: string): Inbound {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (err) {
    throw new ProtocolViolation(`undecodable message line: ${(err as Error).message}`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new ProtocolViolation("message must be a JSON object", salvageId(raw));
  }
  const msg = raw as Record<string, unknown>;
  const id = salvageId(msg);
  const kind = msg.kind;
  if (typeof kind !== "string" || !KINDS.has(kind)) {
    throw new ProtocolViolation(`unknown message kind ${JSON.stringify(kind)}`, id);
  }
  if (kind === "shutdown") {
    return { kind: "shutdown" };
  }
  if (kind !== "simulate_request") {
    throw new ProtocolViolation(`unexpected message kind ${JSON.stringify(kind)}`, id);
  }
  if (!isInt(msg.id)) {
    throw new ProtocolViolation("simulate_request.id must be an integer", id);
  }
  if (!isRealList(msg.theta)) {
    throw new ProtocolViolation("simulate_request.theta must be a list of reals", id);
  }
  if (!isRealList(msg.action)) {
    throw new ProtocolViolation("simulate_request.action must be a list of reals", id);
  }
  if (!isInt(msg.seed)) {
    throw new ProtocolViolation("simulate_request.seed must be an integer", id);
  }
  return {
    kind: "simulate_request",
    id: msg.id,
    theta: msg.theta,
    action: msg.action,
    seed: exactSeed(line, msg.seed),
  };
}

export function helloLine(sim: Simulator): string {
  return JSON.stringify({
    kind: "hello",
    name: sim.name,
    param_dim: sim.paramDim,
    obs_dim: sim.obsDim,
    action_dims: sim.actionDims,
    protocol_version: PROTOCOL_VERSION,
  });
}

/**
 * Format a simulate_response.  JSON.stringify writes doubles in shortest
 * round-trip form, so the driver recovers each value bitwise; non-finite
 * values have no JSON form and are reported as an error instead.
 */
export function responseLine(id: number, obs: Observation): string {
  if (!obs.values.every(Number.isFinite)) {
    return errorLine(id, "observation is not finite");
  }
  return JSON.stringify({
    kind: "simulate_response",
    id,
    observation: obs.values,
    valid: obs.valid,
  });
}

export function errorLine(id: number | null, message: string): string {
  return JSON.stringify({ kind: "error", id, message });
}
