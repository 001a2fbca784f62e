"""Client for out-of-process simulator plugins.

A plugin is a child process that speaks a line-delimited JSON protocol over
its standard streams: one object per line, each carrying a "kind" field.

* ``hello {name, param_dim, obs_dim, action_dims, protocol_version}``:
  emitted by the plugin as its first line, before any request is sent.
* ``simulate_request {id, theta, action, seed}``: client to plugin.
* ``simulate_response {id, observation, valid}``: plugin to client.
* ``error {id, message}``: plugin to client, in place of a response.
* ``shutdown {}``: client to plugin; the plugin flushes and exits.

Request ids are strictly increasing within a session and every id is
answered by exactly one response or error, in any order; the client matches
replies by id, so a plugin may reorder freely.  Seeds travel inside
requests: the plugin owns its noise generation and is expected to follow
the counter-based recipe in :mod:`asbi.rng` (see docs/protocol.md), which
makes a conforming plugin bitwise-equal to the builtin simulator it mirrors.

One reader thread and one writer lock serve each session, so batches may be
submitted from several threads at once; ids stay unique and responses route
to their callers.  Teardown is safe at any point and fails pending requests
with a session error rather than hanging them.
"""

from __future__ import annotations

import json
import subprocess
import threading
import time
from dataclasses import dataclass

import numpy as np

from asbi.simulators import Observation, Simulator, SimulatorSpec

PROTOCOL_VERSION = 1

_KINDS = ("hello", "simulate_request", "simulate_response", "error", "shutdown")


class ProtocolError(RuntimeError):
    """Launch or session failure: the plugin conversation cannot continue."""


@dataclass(frozen=True)
class RequestError:
    """Per-request failure reported by the plugin; fills that result slot."""

    id: int
    message: str


def _require(condition: bool, message: str):
    if not condition:
        raise ProtocolError(message)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real_list(v) -> bool:
    return isinstance(v, list) and all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in v
    )


def parse_message(line: str) -> dict:
    """Decode and validate one protocol line into a message dict."""
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"undecodable message line: {exc}") from None
    _require(isinstance(msg, dict), "message must be a JSON object")
    kind = msg.get("kind")
    _require(kind in _KINDS, f"unknown message kind {kind!r}")
    if kind == "hello":
        _require(isinstance(msg.get("name"), str), "hello.name must be a string")
        for field in ("param_dim", "obs_dim", "action_dims"):
            _require(_is_int(msg.get(field)) and msg[field] > 0,
                     f"hello.{field} must be a positive integer")
        _require(_is_int(msg.get("protocol_version")),
                 "hello.protocol_version must be an integer")
    elif kind == "simulate_request":
        _require(_is_int(msg.get("id")), "simulate_request.id must be an integer")
        _require(_is_real_list(msg.get("theta")), "simulate_request.theta must be a list of reals")
        _require(_is_real_list(msg.get("action")),
                 "simulate_request.action must be a list of reals")
        _require(_is_int(msg.get("seed")), "simulate_request.seed must be an integer")
    elif kind == "simulate_response":
        _require(_is_int(msg.get("id")), "simulate_response.id must be an integer")
        _require(_is_real_list(msg.get("observation")),
                 "simulate_response.observation must be a list of reals")
        _require(isinstance(msg.get("valid"), bool), "simulate_response.valid must be a boolean")
    elif kind == "error":
        _require(msg.get("id") is None or _is_int(msg["id"]),
                 "error.id must be an integer or null")
        _require(isinstance(msg.get("message"), str), "error.message must be a string")
    return msg


def format_message(msg: dict) -> str:
    """Encode a message dict as one protocol line (no trailing newline)."""
    return json.dumps(msg, separators=(",", ":"))


class _Slot:
    __slots__ = ("req_id", "event", "result")

    def __init__(self, req_id: int):
        self.req_id = req_id
        self.event = threading.Event()
        self.result = None


#: reader-installed marker for requests orphaned by stream closure
_CLOSED = object()


class PluginHandle:
    """One live plugin session: child process, reader thread, request ledger."""

    def __init__(self, command: list[str], proc: subprocess.Popen):
        self.command = list(command)
        self._proc = proc
        self._lock = threading.Lock()
        self._pending: dict[int, _Slot] = {}
        self._next_id = 1
        self._hello: dict | None = None
        self._hello_error: str | None = None
        self._hello_event = threading.Event()
        self._closed = False
        self._close_reason = "plugin stream closed"
        self._shutdown_sent = False
        self.exit_code: int | None = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    # ---- session state -------------------------------------------------

    @property
    def ready(self) -> bool:
        return self._hello is not None and not self._closed

    @property
    def closed(self) -> bool:
        return self._closed

    @property
    def name(self) -> str:
        return self._hello["name"]

    @property
    def param_dim(self) -> int:
        return self._hello["param_dim"]

    @property
    def obs_dim(self) -> int:
        return self._hello["obs_dim"]

    @property
    def action_dims(self) -> int:
        return self._hello["action_dims"]

    # ---- reader --------------------------------------------------------

    def _read_loop(self):
        stream = self._proc.stdout
        first = True
        while True:
            line = stream.readline()
            if line == "":
                reason = ("process terminated before hello" if first
                          else "plugin stream closed")
                self._mark_closed(reason)
                return
            line = line.strip()
            if not line:
                continue
            try:
                msg = parse_message(line)
            except ProtocolError as exc:
                if first:
                    self._hello_error = f"malformed hello: {exc}"
                    self._hello_event.set()
                self._mark_closed(f"malformed message from plugin: {exc}")
                return
            if first:
                first = False
                if msg["kind"] != "hello":
                    self._hello_error = "malformed hello: first message must be hello"
                    self._hello_event.set()
                    self._mark_closed(self._hello_error)
                    return
                if msg["protocol_version"] != PROTOCOL_VERSION:
                    self._hello_error = (
                        f"unsupported version {msg['protocol_version']}"
                    )
                    self._hello_event.set()
                    self._mark_closed(self._hello_error)
                    return
                self._hello = msg
                self._hello_event.set()
                continue
            if msg["kind"] == "simulate_response":
                self._resolve(msg["id"], Observation(
                    values=np.asarray(msg["observation"], dtype=np.float64),
                    valid=msg["valid"],
                ))
            elif msg["kind"] == "error":
                if msg["id"] is not None:
                    self._resolve(msg["id"], RequestError(msg["id"], msg["message"]))
            # hello after the first line and inbound shutdown/request kinds
            # have no meaning here; drop them rather than kill the session

    def _resolve(self, req_id: int, result):
        with self._lock:
            slot = self._pending.pop(req_id, None)
        if slot is not None:
            slot.result = result
            slot.event.set()

    def _mark_closed(self, reason: str):
        with self._lock:
            self._closed = True
            self._close_reason = reason
            orphans = list(self._pending.values())
            self._pending.clear()
        self._hello_event.set()
        for slot in orphans:
            slot.result = _CLOSED
            slot.event.set()

    # ---- writer --------------------------------------------------------

    def _send_line(self, text: str):
        try:
            self._proc.stdin.write(text + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError):
            self._mark_closed("plugin stream closed")

    def submit(self, requests) -> list[_Slot]:
        """Register and write one batch; returns the per-request slots."""
        with self._lock:
            if self._closed or self._hello is None:
                raise ProtocolError(f"session is closed ({self._close_reason})")
            slots = []
            lines = []
            for theta, action, seed in requests:
                req_id = self._next_id
                self._next_id += 1
                slot = _Slot(req_id)
                self._pending[req_id] = slot
                slots.append(slot)
                lines.append(format_message({
                    "kind": "simulate_request",
                    "id": req_id,
                    "theta": [float(v) for v in np.atleast_1d(theta)],
                    "action": [float(v) for v in np.atleast_1d(action)],
                    "seed": int(seed),
                }))
        if lines:
            self._send_line("\n".join(lines))
        return slots


def launch(command: list[str], startup_timeout: float = 10.0) -> PluginHandle:
    """Start a plugin process and wait for its hello line.

    Raises ProtocolError naming the cause when the process dies first,
    the hello is malformed, its protocol version is unsupported, or the
    startup deadline passes.
    """
    if not command:
        raise ValueError("plugin command must be nonempty")
    try:
        proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
    except OSError as exc:
        raise ProtocolError(f"cannot start plugin {command[0]!r}: {exc}") from None
    handle = PluginHandle(command, proc)
    if not handle._hello_event.wait(startup_timeout):
        proc.kill()
        proc.wait()
        raise ProtocolError(f"timed out after {startup_timeout}s waiting for hello")
    if handle._hello_error is not None:
        proc.kill()
        handle.exit_code = proc.wait()
        raise ProtocolError(handle._hello_error)
    if handle._hello is None:
        handle.exit_code = proc.wait()
        raise ProtocolError(handle._close_reason)
    return handle


def simulate_batch(handle: PluginHandle, requests, timeout: float = 60.0) -> list:
    """Run (theta, action, seed) triples through the plugin, pipelined.

    The returned list matches request order regardless of response arrival
    order.  A per-request plugin error becomes a RequestError in that slot;
    stream closure or a blown deadline raises ProtocolError listing the
    unfulfilled ids.
    """
    slots = handle.submit(requests)
    deadline = time.monotonic() + timeout
    for slot in slots:
        remaining = deadline - time.monotonic()
        if remaining <= 0 or not slot.event.wait(remaining):
            unfulfilled = [s.req_id for s in slots if not s.event.is_set()]
            with handle._lock:
                for s in slots:
                    handle._pending.pop(s.req_id, None)
            raise ProtocolError(
                f"timed out waiting for plugin responses; unfulfilled ids {unfulfilled}"
            )
    orphaned = [s.req_id for s in slots if s.result is _CLOSED]
    if orphaned:
        raise ProtocolError(
            f"{handle._close_reason}; unfulfilled ids {orphaned}"
        )
    return [slot.result for slot in slots]


def shutdown(handle: PluginHandle, timeout: float = 5.0):
    """Send shutdown, wait briefly, then terminate forcibly; idempotent."""
    if not handle._shutdown_sent:
        handle._shutdown_sent = True
        if not handle._closed:
            handle._send_line(format_message({"kind": "shutdown"}))
    handle._mark_closed("session is shut down")
    if handle.exit_code is None:
        try:
            handle.exit_code = handle._proc.wait(timeout)
        except subprocess.TimeoutExpired:
            handle._proc.kill()
            handle.exit_code = handle._proc.wait()
    for stream in (handle._proc.stdin, handle._proc.stdout):
        try:
            stream.close()
        except OSError:
            pass


class PluginSimulator(Simulator):
    """Adapter exposing a plugin session through the simulator interface.

    The wire protocol does not carry the action grid or parameter bounds,
    so the caller supplies them; dimensions are cross-checked against the
    plugin's hello.  Noiseless responses are not part of the protocol, so
    metrics needing them do not work on plugin-backed simulators.
    """

    def __init__(self, handle: PluginHandle, action_grid, param_bounds,
                 batch_timeout: float = 120.0):
        if not handle.ready:
            raise ProtocolError("plugin session is not ready")
        if action_grid.value_dim != handle.action_dims:
            raise ValueError(
                f"grid has {action_grid.value_dim}-d actions, plugin expects "
                f"{handle.action_dims}-d"
            )
        if param_bounds.dim != handle.param_dim:
            raise ValueError(
                f"bounds are {param_bounds.dim}-d, plugin expects {handle.param_dim}-d"
            )
        self.handle = handle
        self.batch_timeout = batch_timeout
        self.spec = SimulatorSpec(
            name=handle.name,
            param_dim=handle.param_dim,
            param_bounds=param_bounds,
            action_grid=action_grid,
            obs_dim=handle.obs_dim,
            backend=f"plugin:{handle.name}",
        )

    def simulate(self, theta, action_values, seed: int) -> Observation:
        return self.simulate_batch(
            np.asarray(theta, dtype=np.float64)[None, :],
            np.atleast_1d(np.asarray(action_values, dtype=np.float64))[None, :],
            [seed],
        )[0]

    def simulate_batch(self, thetas, action_rows, seeds) -> list[Observation]:
        thetas = np.asarray(thetas, dtype=np.float64)
        action_rows = np.asarray(action_rows, dtype=np.float64)
        if action_rows.ndim == 1:
            action_rows = action_rows[:, None]
        triples = [(thetas[i], action_rows[i], int(seeds[i]))
                   for i in range(thetas.shape[0])]
        results = simulate_batch(self.handle, triples, timeout=self.batch_timeout)
        for r in results:
            if isinstance(r, RequestError):
                raise ProtocolError(f"plugin error for request {r.id}: {r.message}")
        return results
