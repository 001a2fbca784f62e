"""Builtin simulators served over the plugin wire protocol.

Running ``python -m asbi.plugin toy`` turns the builtin toy simulator into
an out-of-process plugin: it prints a hello line and then answers
simulate_request lines until shutdown or end of input.  This is the
self-test counterpart of :mod:`asbi.simproto`: the client tested against
this process must produce observations bitwise-equal to direct calls.

``--shuffle-window N`` buffers up to N responses and emits each group in a
deterministically shuffled order, which exercises the client's id-based
reordering without giving up reproducibility.  A partial group is held
until more requests complete it or the session ends (shutdown or end of
input), so callers should keep batch sizes divisible by the window when
they wait on every response.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from asbi.rng import derive_seed
from asbi.simproto import PROTOCOL_VERSION, ProtocolError, format_message, parse_message
from asbi.simulators import get_simulator


def _emit(msg: dict, out):
    out.write(format_message(msg) + "\n")
    out.flush()


def _response(sim, msg: dict) -> dict:
    try:
        obs = sim.simulate(
            np.asarray(msg["theta"], dtype=np.float64),
            np.asarray(msg["action"], dtype=np.float64),
            msg["seed"],
        )
    except ValueError as exc:
        return {"kind": "error", "id": msg["id"], "message": str(exc)}
    return {
        "kind": "simulate_response",
        "id": msg["id"],
        "observation": [float(v) for v in obs.values],
        "valid": bool(obs.valid),
    }


def _flush_window(window: list[dict], out):
    """Emit buffered responses in a seeded shuffle keyed by the first id."""
    if not window:
        return
    order = np.random.default_rng(
        derive_seed("plugin-shuffle", window[0]["id"])
    ).permutation(len(window))
    for i in order:
        _emit(window[i], out)
    window.clear()


def serve(sim, out, lines, shuffle_window: int = 1) -> int:
    _emit({
        "kind": "hello",
        "name": sim.spec.name,
        "param_dim": sim.spec.param_dim,
        "obs_dim": sim.spec.obs_dim,
        "action_dims": sim.spec.action_grid.value_dim,
        "protocol_version": PROTOCOL_VERSION,
    }, out)
    window: list[dict] = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            msg = parse_message(line)
        except ProtocolError as exc:
            reply = {"kind": "error", "id": _salvage_id(line), "message": str(exc)}
            _flush_window(window, out)
            _emit(reply, out)
            continue
        if msg["kind"] == "shutdown":
            break
        if msg["kind"] != "simulate_request":
            _flush_window(window, out)
            _emit({"kind": "error", "id": None,
                   "message": f"unexpected message kind {msg['kind']!r}"}, out)
            continue
        window.append(_response(sim, msg))
        if len(window) >= shuffle_window:
            _flush_window(window, out)
    _flush_window(window, out)
    return 0


def _salvage_id(line: str):
    """Best-effort id recovery from a rejected line, so errors stay routable."""
    try:
        raw = json.loads(line)
    except json.JSONDecodeError:
        return None
    rid = raw.get("id") if isinstance(raw, dict) else None
    return rid if isinstance(rid, int) and not isinstance(rid, bool) else None


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m asbi.plugin",
        description="serve a builtin simulator over the plugin protocol",
    )
    parser.add_argument("simulator", choices=("toy", "box", "deposit"))
    parser.add_argument("--shuffle-window", type=int, default=1, metavar="N",
                        help="buffer N responses and emit each group shuffled")
    args = parser.parse_args(argv)
    if args.shuffle_window < 1:
        parser.error("--shuffle-window must be >= 1")
    return serve(get_simulator(args.simulator), sys.stdout, sys.stdin,
                 shuffle_window=args.shuffle_window)


if __name__ == "__main__":
    sys.exit(main())
