import io
import random
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from printloop.client import (
    DEFAULT_CATALOG,
    ApiStatus,
    EndpointCatalog,
    PrinterClient,
    RecordingTransport,
    SNAPSHOT_OBJECTS,
    flatten_status,
)
from printloop.gcode import ParameterChange, render_parameter_command
from printloop.sim import SimTransport, VirtualPrinter
from printloop.sim.printer import Job

from conftest import no_sleep

SHUTDOWN_CLASS = ["M112", "M999", "M81", "M500", "M502", "M997", "FIRMWARE_RESTART", "RESTART", "SAVE_CONFIG"]


def q(client, obj, field):
    return client.query_objects({obj: [field]}).body["status"][obj][field]


def test_speed_factor_propagates(wired):
    client, _, _ = wired
    assert client.run_gcode("M220 S75").ok
    assert q(client, "gcode_move", "speed_factor") == pytest.approx(0.75)


def test_z_offset_propagates(wired):
    client, _, _ = wired
    assert client.run_gcode("SET_GCODE_OFFSET Z_ADJUST=-0.100 MOVE=1").ok
    assert client.snapshot().z_offset == pytest.approx(-0.1)


def test_machine_shutdown_denied(wired):
    client, rec, _ = wired
    r = client.query_objects(["machine.shutdown"])
    assert r.status is ApiStatus.DENIED
    r2 = client.call("machine.shutdown")
    assert r2.status is ApiStatus.DENIED
    assert rec.calls == []


def test_unknown_allowed_object_is_absent(wired):
    client, _, _ = wired
    r = client.query_objects(["gcode_move", "temperature_sensor chamber"])
    assert r.ok
    assert r.body["absent"] == ["temperature_sensor chamber"]
    assert "gcode_move" in r.body["status"]


@pytest.mark.parametrize("cmd", SHUTDOWN_CLASS)
def test_guard_denies(cmd):
    client = PrinterClient(RecordingTransport(SimTransport(VirtualPrinter())))
    assert not client.guard(cmd)
    assert not client.guard(f"M221 S105\n{cmd}")


@pytest.mark.parametrize("cmd", ["M221 S105", "M220 S75", "SET_RETRACTION RETRACT_LENGTH=1 RETRACT_SPEED=40", "G28"])
def test_guard_allows(cmd):
    assert PrinterClient(SimTransport(VirtualPrinter())).guard(cmd)


def test_denied_script_never_sent(wired):
    client, rec, printer = wired
    r = client.run_gcode("M221 S105\nM112")
    assert r.status is ApiStatus.DENIED
    assert rec.calls == []
    assert printer.values["flow_factor"] == 1.0


def test_printer_error(wired):
    client, _, _ = wired
    r = client.run_gcode("BOGUS_MACRO X=1")
    assert r.status is ApiStatus.PRINTER_ERROR
    assert "BOGUS_MACRO" in r.body


def test_run_gcode_requires_script(wired):
    client, _, _ = wired
    with pytest.raises(ValueError):
        client.run_gcode("  ")


def test_pause_resume_idempotent(wired):
    client, _, printer = wired
    printer.auto_advance = False
    assert client.pause().ok
    assert client.snapshot().paused
    calls = len(wired[1].calls)
    r = client.pause()
    assert r.ok and r.body == "already paused"
    # only the is_paused probe was sent, no second pause request
    assert [c[1] for c in wired[1].calls[calls:]] == ["/printer/objects/query"]
    assert client.resume().ok
    assert not client.snapshot().paused
    r = client.resume()
    assert r.ok and r.warning


def test_transient_failures_retry(wired):
    client, _, printer = wired
    printer.faults.transient_failures = 2
    r = client.run_gcode("M221 S105")
    assert r.ok and r.attempts == 3
    assert printer.values["flow_factor"] == pytest.approx(1.05)


def test_unreachable_transport_error(wired):
    client, _, printer = wired
    printer.faults.unreachable = True
    slept = []
    client._sleep = slept.append
    r = client.query_objects(["gcode_move"])
    assert r.status is ApiStatus.TRANSPORT_ERROR
    assert r.body["attempts"] == 3
    assert slept == [0.25, 0.5]  # exponential backoff between the three attempts


def test_camera_down(wired):
    client, _, printer = wired
    printer.faults.cameras_down.add("front")
    assert client.capture_snapshot("front").status is ApiStatus.TRANSPORT_ERROR
    assert client.capture_snapshot("top").ok


def test_snapshot_image_metadata(wired):
    client, _, printer = wired  # the fixture job is already paused at checkpoint 0
    r = client.capture_snapshot("top")
    img = r.body
    assert (img.width, img.height, img.format) == (48, 48, "png")
    assert img.metadata["layer"] == 0
    # deterministic render: a second capture is byte-identical
    assert client.capture_snapshot("top").body.data == img.data


def test_downsizing_keeps_metadata():
    p = VirtualPrinter(seed=3)
    p.load_job(Job.synthetic(n_layers=1, size=96))
    client = PrinterClient(SimTransport(p), max_image_edge=32)
    img = client.capture_snapshot("top").body
    assert max(img.width, img.height) <= 32
    assert img.metadata["layer"] == 0
    assert "printloop" in Image.open(io.BytesIO(img.data)).text


def test_read_your_writes_all_parameters(wired):
    client, _, _ = wired
    cases = [
        (ParameterChange("speed_factor", 0.8), "speed_factor", 0.8),
        (ParameterChange("flow_factor", 1.1), "flow_factor", 1.1),
        (ParameterChange("nozzle_temp", 215), "nozzle_temp", 215),
        (ParameterChange("bed_temp", 70), "bed_temp", 70),
        (ParameterChange("fan", 0.5), "fan", 128 / 255),
        (ParameterChange("pressure_advance", 0.07), "pressure_advance", 0.07),
        (ParameterChange("retraction", 2.5, 45), "retraction.length", 2.5),
    ]
    for change, key, expected in cases:
        for line in render_parameter_command(change):
            assert client.run_gcode(line).ok
        status = client.query_objects(SNAPSHOT_OBJECTS).body["status"]
        assert flatten_status(status)[key] == pytest.approx(expected), key


def test_catalog_invariants():
    allowed = {e.id for e in DEFAULT_CATALOG.allowed}
    assert not allowed & set(DEFAULT_CATALOG.excluded)
    for ep in ("printer.emergency_stop", "printer.restart", "printer.firmware_restart", "machine.shutdown",
               "machine.reboot", "machine.update.firmware"):
        assert ep in DEFAULT_CATALOG.excluded
    with pytest.raises(ValueError):
        EndpointCatalog(allowed=[DEFAULT_CATALOG.allowed[0]], excluded={DEFAULT_CATALOG.allowed[0].id: "x"})


def test_catalog_override():
    cat = EndpointCatalog.from_mapping({"denied_commands": {"M106": "no fans"}})
    client = PrinterClient(SimTransport(VirtualPrinter()), catalog=cat)
    assert not client.guard("M106 S255")
    assert client.guard("M112")  # replaced list no longer holds it


def test_command_lane_serializes():
    p = VirtualPrinter()
    client = PrinterClient(SimTransport(p))
    threads = [threading.Thread(target=client.run_gcode, args=(f"M104 S{200 + i}",)) for i in range(20)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(p.command_log) == 20


VOCAB = SHUTDOWN_CLASS + ["M18", "M84", "CANCEL_PRINT", "M220 S80", "M221 S95", "M104 S200", "M106 S128",
                          "G1 X10 Y10", "SET_PRESSURE_ADVANCE ADVANCE=0.05", "G28", "machine.shutdown",
                          "printer.restart", "server.info"]


@given(st.lists(st.sampled_from(VOCAB), min_size=1, max_size=4))
@settings(max_examples=200, deadline=None)
def test_status_total_and_denied_never_sent(cmds):
    p = VirtualPrinter()
    p.load_job(Job.synthetic(n_layers=2, size=16))
    rec = RecordingTransport(SimTransport(p))
    client = PrinterClient(rec, sleep=no_sleep)
    script = "\n".join(cmds)
    r = client.run_gcode(script)
    assert r.status in set(ApiStatus)
    sent = "\n".join(rec.scripts)
    for c in cmds:
        if not client.guard(c):
            assert r.status is ApiStatus.DENIED
            assert c not in sent
