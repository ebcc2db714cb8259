from pathlib import Path

import pytest

from printloop.client import PrinterClient, RecordingTransport
from printloop.sim import SimServer, SimTransport, VirtualPrinter
from printloop.sim.printer import Job

DATA = Path(__file__).resolve().parents[1] / "src" / "printloop" / "data"
GCODE = DATA / "gcode"
CORPUS = sorted(GCODE.glob("*.gcode"))


def no_sleep(_s):
    pass


@pytest.fixture
def printer():
    p = VirtualPrinter(seed=1)
    p.load_job(Job.synthetic(n_layers=4, size=48))
    return p


@pytest.fixture(params=["inproc", "http"])
def wired(request, printer):
    """(client, recording transport, printer) over either transport."""
    if request.param == "inproc":
        rec = RecordingTransport(SimTransport(printer))
        yield PrinterClient(rec, sleep=no_sleep), rec, printer
    else:
        from printloop.client import HttpTransport

        with SimServer(printer) as srv:
            rec = RecordingTransport(HttpTransport(srv.url))
            yield PrinterClient(rec, sleep=no_sleep), rec, printer


def capture(client):
    return [client.capture_snapshot(cam).body for cam in ("top", "front")]


def make_ctx(printer, backend=None, material="PLA", part="test part", max_react_iters=8, events=None):
    """Agent context over ``printer`` with the oracle backend; events land in ``events``."""
    from printloop.agents import AgentContext, StateDictionary
    from printloop.llm import OracleBackend

    client = PrinterClient(RecordingTransport(SimTransport(printer)), sleep=no_sleep)
    n = printer.nominal
    state = StateDictionary("s-test", part, material,
                            {"print_speed": n.print_speed, "nozzle_temp": n.nozzle_temp, "bed_temp": n.bed_temp})
    sink = events if events is not None else []
    return AgentContext(state, client, backend or OracleBackend(),
                        emit=lambda m, k, p: sink.append((m, k, p)), max_react_iters=max_react_iters)


def first_failed(record):
    from printloop.agents import ModuleStatus

    for m in record.sequence:
        if record.module_status[m] is ModuleStatus.FAILED:
            return m
    return None


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
