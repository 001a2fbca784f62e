#!/usr/bin/env node
/**
 * Standalone simulator plugin speaking the line protocol over stdio.
 *
 *   node dist/main.js <toy|pendulum>
 *
 * Emits a hello line, then answers each simulate_request with a
 * simulate_response (or an error for rejected input) until a shutdown
 * message or end of input.  The loop is single-threaded and responses
 * keep request order.
 */

import { createInterface } from "readline";

import { errorLine, helloLine, parseInbound, ProtocolViolation, responseLine } from "./protocol";
import { makeSimulator, SIMULATOR_NAMES, SimulationError, Simulator } from "./simulators";

export async function serve(
  sim: Simulator,
  input: AsyncIterable<string>,
  write: (line: string) => void,
): Promise<number> {
  write(helloLine(sim));
  for await (const rawLine of input) {
    const line = rawLine.trim();
    if (line === "") {
      continue;
    }
    let inbound;
    try {
      inbound = parseInbound(line);
    } catch (err) {
      if (err instanceof ProtocolViolation) {
        write(errorLine(err.id, err.message));
        continue;
      }
      throw err;
    }
    if (inbound.kind === "shutdown") {
      break;
    }
    try {
      write(responseLine(inbound.id, sim.simulate(inbound.theta, inbound.action, inbound.seed)));
    } catch (err) {
      if (err instanceof SimulationError) {
        write(errorLine(inbound.id, err.message));
        continue;
      }
      throw err;
    }
  }
  return 0;
}

function main(): void {
  const args = process.argv.slice(2);
  if (args.length !== 1 || !SIMULATOR_NAMES.includes(args[0])) {
    process.stderr.write(`usage: main.js <${SIMULATOR_NAMES.join("|")}>\n`);
    process.exitCode = 2;
    return;
  }
  const sim = makeSimulator(args[0]);
  const rl = createInterface({ input: process.stdin, terminal: false });
  serve(sim, rl, (line) => {
    process.stdout.write(line + "\n");
  }).then((code) => {
    // exit only after every queued stdout line has flushed
    process.stdout.write("", () => process.exit(code));
  });
}

if (require.main === module) {
  main();
}
