"""Plugin wire protocol: message validation, launch failure modes, id-based
response routing, builtin-vs-plugin bitwise equivalence, and teardown."""

import sys
import threading
from io import StringIO

import numpy as np
import pytest

from asbi import simproto
from asbi.plugin import serve
from asbi.simproto import (
    PluginSimulator,
    ProtocolError,
    RequestError,
    format_message,
    launch,
    parse_message,
    shutdown,
    simulate_batch,
)
from asbi.simulators import get_simulator

PY = sys.executable
TOY_PLUGIN = [PY, "-m", "asbi.plugin", "toy"]


def toy_requests(n, start_seed=0):
    g = np.random.default_rng(start_seed)
    thetas = g.uniform(-5.0, 5.0, size=(n, 2))
    grid = np.linspace(-5.0, 5.0, 21)
    actions = g.choice(grid, size=n)[:, None]
    seeds = [int(s) for s in g.integers(0, 2**63, size=n)]
    return [(thetas[i], actions[i], seeds[i]) for i in range(n)]


class TestMessages:
    def test_round_trip_preserves_doubles(self):
        value = -0.1234567890123456789e-7
        line = format_message({"kind": "simulate_response", "id": 3,
                               "observation": [value], "valid": True})
        back = parse_message(line)
        assert back["observation"][0] == value

    def test_unknown_kind_rejected(self):
        with pytest.raises(ProtocolError, match="unknown message kind"):
            parse_message('{"kind": "frobnicate"}')

    def test_non_object_rejected(self):
        with pytest.raises(ProtocolError, match="JSON object"):
            parse_message("[1, 2, 3]")

    def test_undecodable_rejected(self):
        with pytest.raises(ProtocolError, match="undecodable"):
            parse_message("{nope")

    @pytest.mark.parametrize("field", ["param_dim", "obs_dim", "action_dims"])
    def test_hello_requires_positive_dims(self, field):
        msg = {"kind": "hello", "name": "x", "param_dim": 1, "obs_dim": 1,
               "action_dims": 1, "protocol_version": 1}
        msg[field] = 0
        with pytest.raises(ProtocolError, match=field):
            parse_message(format_message(msg))

    def test_request_field_validation(self):
        with pytest.raises(ProtocolError, match="theta"):
            parse_message('{"kind":"simulate_request","id":1,"theta":"no",'
                          '"action":[1.0],"seed":2}')
        with pytest.raises(ProtocolError, match="seed"):
            parse_message('{"kind":"simulate_request","id":1,"theta":[0.0],'
                          '"action":[1.0],"seed":1.5}')

    def test_booleans_are_not_reals_or_ints(self):
        with pytest.raises(ProtocolError, match="theta"):
            parse_message('{"kind":"simulate_request","id":1,"theta":[true],'
                          '"action":[1.0],"seed":2}')
        with pytest.raises(ProtocolError, match="id"):
            parse_message('{"kind":"simulate_response","id":true,'
                          '"observation":[1.0],"valid":true}')


class TestLaunch:
    def test_toy_hello_dimensions(self):
        h = launch(TOY_PLUGIN)
        try:
            assert h.name == "toy"
            assert h.param_dim == 2
            assert h.obs_dim == 1
            assert h.action_dims == 1
            assert h.ready
        finally:
            shutdown(h)

    def test_immediate_exit_reports_no_hello(self):
        with pytest.raises(ProtocolError, match="process terminated before hello"):
            launch([PY, "-c", "pass"])

    def test_malformed_hello(self):
        with pytest.raises(ProtocolError, match="malformed hello"):
            launch([PY, "-c", "print('not a message')"])

    def test_non_hello_first_message(self):
        with pytest.raises(ProtocolError, match="first message must be hello"):
            launch([PY, "-c", "print('{\"kind\": \"shutdown\"}')"])

    def test_unsupported_version(self):
        code = ("import json; print(json.dumps({'kind':'hello','name':'x',"
                "'param_dim':1,'obs_dim':1,'action_dims':1,'protocol_version':2}))")
        with pytest.raises(ProtocolError, match="unsupported version"):
            launch([PY, "-c", code])

    def test_startup_deadline(self):
        with pytest.raises(ProtocolError, match="timed out"):
            launch([PY, "-c", "import time; time.sleep(30)"], startup_timeout=0.3)

    def test_empty_command(self):
        with pytest.raises(ValueError, match="nonempty"):
            launch([])

    def test_missing_binary(self):
        with pytest.raises(ProtocolError, match="cannot start"):
            launch(["/no/such/binary-xyz"])


class TestSimulateBatch:
    def test_matches_builtin_toy_bitwise(self):
        # 100 fixed-seed requests against direct builtin calls
        sim = get_simulator("toy")
        reqs = toy_requests(100, start_seed=11)
        h = launch(TOY_PLUGIN)
        try:
            got = simulate_batch(h, reqs)
        finally:
            shutdown(h)
        for (theta, action, seed), obs in zip(reqs, got):
            direct = sim.simulate(theta, action, seed)
            assert obs.valid == direct.valid
            assert np.array_equal(obs.values, direct.values)

    def test_shuffled_responses_return_in_request_order(self):
        sim = get_simulator("toy")
        reqs = toy_requests(90, start_seed=12)
        h = launch(TOY_PLUGIN + ["--shuffle-window", "9"])
        try:
            got = simulate_batch(h, reqs)
        finally:
            shutdown(h)
        for (theta, action, seed), obs in zip(reqs, got):
            assert np.array_equal(obs.values, sim.simulate(theta, action, seed).values)

    def test_per_request_error_slot_keeps_others(self):
        h = launch(TOY_PLUGIN)
        try:
            good = (np.array([-3.0, 1.0]), np.array([3.0]), 5)
            bad = (np.array([99.0, 0.0]), np.array([3.0]), 6)
            out = simulate_batch(h, [good, bad, good])
            assert isinstance(out[1], RequestError)
            assert "outside parameter bounds" in out[1].message
            assert np.array_equal(out[0].values, out[2].values)
        finally:
            shutdown(h)

    def test_killed_mid_batch_lists_unfulfilled_ids(self):
        # answers exactly one request, then exits mid-batch
        code = (
            "import sys, json\n"
            "print(json.dumps({'kind':'hello','name':'oneshot','param_dim':1,"
            "'obs_dim':1,'action_dims':1,'protocol_version':1}), flush=True)\n"
            "req = json.loads(sys.stdin.readline())\n"
            "print(json.dumps({'kind':'simulate_response','id':req['id'],"
            "'observation':[0.0],'valid':True}), flush=True)\n"
        )
        h = launch([PY, "-c", code])
        reqs = [(np.array([0.0]), np.array([0.0]), i) for i in range(3)]
        with pytest.raises(ProtocolError, match=r"unfulfilled ids \[2, 3\]"):
            simulate_batch(h, reqs, timeout=10.0)
        shutdown(h)

    def test_ids_strictly_increase_across_batches(self):
        # out-of-bounds thetas make the plugin echo each request id back
        h = launch(TOY_PLUGIN)
        try:
            bad = (np.array([99.0, 0.0]), np.array([3.0]), 1)
            first = simulate_batch(h, [bad, bad])
            second = simulate_batch(h, [bad])
            ids = [r.id for r in first + second]
            assert ids == sorted(ids)
            assert len(set(ids)) == 3
            assert ids[0] >= 1
        finally:
            shutdown(h)

    def test_concurrent_batches_route_correctly(self):
        sim = get_simulator("toy")
        h = launch(TOY_PLUGIN)
        results = {}

        def worker(tag, reqs):
            results[tag] = simulate_batch(h, reqs)

        try:
            reqs_a = toy_requests(40, start_seed=21)
            reqs_b = toy_requests(40, start_seed=22)
            ta = threading.Thread(target=worker, args=("a", reqs_a))
            tb = threading.Thread(target=worker, args=("b", reqs_b))
            ta.start(), tb.start()
            ta.join(), tb.join()
            for tag, reqs in (("a", reqs_a), ("b", reqs_b)):
                for (theta, action, seed), obs in zip(reqs, results[tag]):
                    assert np.array_equal(
                        obs.values, sim.simulate(theta, action, seed).values)
        finally:
            shutdown(h)


class TestShutdown:
    def test_idempotent_and_records_exit_code(self):
        h = launch(TOY_PLUGIN)
        shutdown(h)
        assert h.exit_code == 0
        shutdown(h)
        assert h.exit_code == 0

    def test_requests_rejected_after_shutdown(self):
        h = launch(TOY_PLUGIN)
        shutdown(h)
        with pytest.raises(ProtocolError, match="closed"):
            simulate_batch(h, [(np.array([0.0, 0.0]), np.array([0.0]), 1)])


class TestServeInProcess:
    """The host side run directly on string streams."""

    def run_serve(self, lines, **kwargs):
        out = StringIO()
        serve(get_simulator("toy"), out, iter(lines), **kwargs)
        return [parse_message(line) for line in out.getvalue().splitlines()]

    def test_hello_then_response(self):
        req = format_message({"kind": "simulate_request", "id": 1,
                              "theta": [-3.0, 1.0], "action": [3.0], "seed": 17})
        msgs = self.run_serve([req])
        assert msgs[0]["kind"] == "hello"
        assert msgs[0]["protocol_version"] == 1
        direct = get_simulator("toy").simulate([-3.0, 1.0], [3.0], 17)
        assert msgs[1] == {"kind": "simulate_response", "id": 1,
                           "observation": [direct.values[0]], "valid": True}

    def test_shutdown_stops_serving(self):
        req = format_message({"kind": "simulate_request", "id": 1,
                              "theta": [0.0, 0.0], "action": [0.0], "seed": 1})
        msgs = self.run_serve([format_message({"kind": "shutdown"}), req])
        assert len(msgs) == 1  # hello only

    def test_malformed_line_yields_error_with_salvaged_id(self):
        msgs = self.run_serve(['{"kind": "simulate_request", "id": 7}'])
        assert msgs[1]["kind"] == "error"
        assert msgs[1]["id"] == 7

    def test_unsalvageable_line_yields_null_id_error(self):
        msgs = self.run_serve(["{broken"])
        assert msgs[1]["kind"] == "error"
        assert msgs[1]["id"] is None

    def test_partial_window_flushes_at_end_of_input(self):
        reqs = [format_message({"kind": "simulate_request", "id": i,
                                "theta": [0.0, 0.0], "action": [0.0], "seed": i})
                for i in range(1, 6)]
        msgs = self.run_serve(reqs, shuffle_window=3)
        ids = [m["id"] for m in msgs[1:]]
        assert sorted(ids) == [1, 2, 3, 4, 5]
        # first full window emitted before the end-of-input flush
        assert sorted(ids[:3]) == [1, 2, 3]


class TestPluginSimulator:
    def test_wraps_handle_as_simulator(self):
        builtin = get_simulator("toy")
        h = launch(TOY_PLUGIN)
        try:
            sim = PluginSimulator(h, builtin.spec.action_grid,
                                  builtin.spec.param_bounds)
            assert sim.spec.backend == "plugin:toy"
            obs = sim.simulate([-3.0, 1.0], [3.0], 17)
            assert np.array_equal(
                obs.values, builtin.simulate([-3.0, 1.0], [3.0], 17).values)
            thetas = np.array([[-3.0, 1.0], [2.0, 2.0]])
            acts = np.array([[3.0], [0.5]])
            batch = sim.simulate_batch(thetas, acts, [4, 5])
            direct = builtin.simulate_batch(thetas, acts, [4, 5])
            for o, d in zip(batch, direct):
                assert np.array_equal(o.values, d.values)
        finally:
            shutdown(h)

    def test_dimension_cross_checks(self):
        builtin = get_simulator("box")
        h = launch(TOY_PLUGIN)
        try:
            with pytest.raises(ValueError, match="bounds are 3-d"):
                PluginSimulator(h, get_simulator("toy").spec.action_grid,
                                builtin.spec.param_bounds)
        finally:
            shutdown(h)

    def test_request_error_becomes_protocol_error(self):
        builtin = get_simulator("toy")
        h = launch(TOY_PLUGIN)
        try:
            sim = PluginSimulator(h, builtin.spec.action_grid,
                                  builtin.spec.param_bounds)
            with pytest.raises(ProtocolError, match="plugin error for request"):
                sim.simulate([99.0, 0.0], [3.0], 1)
        finally:
            shutdown(h)
