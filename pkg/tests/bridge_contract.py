"""Contract suite every ExecutionBridge implementation must pass.

Parametrized by a bridge factory so the in-memory stub and the real worker
run the exact same assertions.
"""

from __future__ import annotations

import time

import pytest

from autotools.errors import BridgeUnavailable
from autotools.execbridge import ExecutionBridge

ADDER = '''def adder(a, b=10):
    """Add two numbers."""
    return a + b'''

FETCHER = '''def fetch_record(key: str) -> dict:
    """Return the record for a key."""
    return {"key": key, "value": len(key)}'''

BROKEN = "def broken(:\n    pass"


class BridgeContract:
    """Subclass and provide `make_bridge`."""

    def make_bridge(self) -> ExecutionBridge:
        raise NotImplementedError

    @pytest.fixture
    def bridge(self):
        bridge = self.make_bridge()
        yield bridge
        bridge.shutdown()

    # --- load ---

    def test_load_two_valid_sources(self, bridge):
        verdicts = bridge.load_functions([("adder", ADDER), ("fetch_record", FETCHER)])
        assert [v.ok for v in verdicts] == [True, True]

    def test_partial_load_failure(self, bridge):
        verdicts = bridge.load_functions([("broken", BROKEN), ("adder", ADDER)])
        assert not verdicts[0].ok and verdicts[0].error
        assert verdicts[1].ok
        result = bridge.exec("print(adder(1, 2))")
        assert result.status == "ok" and result.stdout.strip() == "3"

    def test_redefinition_allowed_and_noted(self, bridge):
        bridge.load_functions([("adder", ADDER)])
        verdicts = bridge.load_functions([("adder", ADDER)])
        assert verdicts[0].ok and verdicts[0].replaced

    # --- exec ---

    def test_variable_persistence_across_exec(self, bridge):
        assert bridge.exec("x = 2").status == "ok"
        result = bridge.exec("print(x)")
        assert result.status == "ok"
        assert result.stdout == "2\n"

    def test_undefined_name_errors_but_session_survives(self, bridge):
        result = bridge.exec("print(nope)")
        assert result.status == "error"
        assert result.error_payload.type == "NameError"
        assert bridge.exec("print('still alive')").stdout == "still alive\n"

    def test_timeout_of_busy_loop(self, bridge):
        start = time.monotonic()
        result = bridge.exec("while True:\n    pass", timeout_ms=1000)
        elapsed = time.monotonic() - start
        assert result.status == "timeout"
        assert elapsed < 3.0  # 1 s budget + grace

    def test_session_usable_after_timeout(self, bridge):
        bridge.exec("y = 41", timeout_ms=1000)
        bridge.exec("while True:\n    pass", timeout_ms=500)
        result = bridge.exec("print(y + 1)")
        assert result.status == "ok" and result.stdout == "42\n"

    def test_stdout_captured_not_leaked(self, bridge, capfd):
        result = bridge.exec("print('captured')")
        assert result.stdout == "captured\n"

    # --- trace ---

    def test_trace_records_calls_in_order_with_args(self, bridge):
        bridge.load_functions([("adder", ADDER), ("fetch_record", FETCHER)])
        result = bridge.exec(
            "r = fetch_record('abc')\ns = adder(1, b=2)\nt = adder(r['value'])\nprint(s, t)"
        )
        assert result.status == "ok"
        trace = result.tool_trace
        assert [c.name for c in trace] == ["fetch_record", "adder", "adder"]
        assert trace[0].args == {"key": "abc"}
        assert trace[1].args == {"a": 1, "b": 2}
        assert trace[2].args == {"a": 3}
        assert [c.seq for c in trace] == [1, 2, 3]
        assert trace[0].result_kind == "json_map"
        assert trace[1].result_kind == "number"

    def test_trace_retained_before_failure(self, bridge):
        bridge.load_functions([("adder", ADDER)])
        result = bridge.exec("adder(1)\nboom")
        assert result.status == "error"
        assert [c.name for c in result.tool_trace] == ["adder"]

    def test_trace_cleared_between_execs(self, bridge):
        bridge.load_functions([("adder", ADDER)])
        bridge.exec("adder(1)")
        result = bridge.exec("print('no calls')")
        assert result.tool_trace == ()

    # --- reset / shutdown ---

    def test_reset_clears_variables_keeps_functions(self, bridge):
        bridge.load_functions([("adder", ADDER)])
        bridge.exec("z = 1")
        bridge.reset()
        assert bridge.exec("print(z)").status == "error"
        assert bridge.exec("print(adder(20, 22))").stdout == "42\n"

    def test_reset_idempotent(self, bridge):
        bridge.reset()
        bridge.reset()
        assert bridge.exec("print(1)").status == "ok"

    def test_exec_after_shutdown(self, bridge):
        bridge.shutdown()
        with pytest.raises(BridgeUnavailable):
            bridge.exec("print(1)")

    def test_shutdown_idempotent(self, bridge):
        bridge.shutdown()
        bridge.shutdown()

    # --- check ---

    def test_check_valid_definition(self, bridge):
        analysis = bridge.check(FETCHER)
        assert analysis.parse_ok
        assert analysis.primary_function == "fetch_record"
        assert [p.name for p in analysis.params] == ["key"]
        assert analysis.params[0].annotation == "str"
        assert analysis.returns == "dict"
        assert analysis.unresolved == ()

    def test_check_unresolved_reference(self, bridge):
        analysis = bridge.check("def f():\n    return g()")
        assert analysis.parse_ok
        assert analysis.unresolved == ("g",)

    def test_check_unparseable(self, bridge):
        analysis = bridge.check(BROKEN)
        assert not analysis.parse_ok
        assert analysis.parse_error
