"""Acceptance criteria 1-11; each test prints one PASS/FAIL line (also collected in the terminal summary)."""

import json
import random
import signal
import subprocess
import sys
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from printloop import gcode
from printloop.agents import Supervisor, expected_sequence
from printloop.cli import main
from printloop.client import ApiStatus, PrinterClient, RecordingTransport
from printloop.metrics import compare_detections, occupancy, read_annotations
from printloop.modes import FailureMode as M
from printloop.session import Session, SessionConfig, comparable_log, report_from_dir
from printloop.sim import DefectSeverities, SimTransport, VirtualPrinter, decode_png, encode_png, load_scenario
from printloop.sim import render_layer_image
from printloop.sim.model import Nominal
from printloop.sim.printer import Job

from conftest import ACCEPTANCE, CORPUS, DATA, capture, first_failed, make_ctx, no_sleep


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def run_session(scenario, out, **kw):
    t0 = time.perf_counter()
    result = Session(SessionConfig(f"sim:{scenario}", out_dir=out, **kw)).run()
    return result, time.perf_counter() - t0


def control_occupancies(scenario):
    """Same scenario, nobody intervenes: capture the top camera at each pause and resume."""
    p = load_scenario(scenario).build_printer()
    occ = []
    while p.paused:
        gray, mask, _ = decode_png(p.snapshot_png("top"))
        occ.append(occupancy(gray, mask))
        p.resume()
    return occ


def test_1_closed_loop_convergence(tmp_path):
    result, dt = run_session("underextrusion", tmp_path)
    rep = result.report
    final = rep["final_parameters"]
    occ = [o for _, o in rep["occupancy_series"]]
    control = control_occupancies("underextrusion")
    ok = (len(rep["checkpoints"]) <= 6 and 1.00 <= final["flow_factor"] <= 1.12 and final["speed_factor"] <= 1.00
          and occ[-1] >= 0.95 and control[-1] <= 0.80 and dt < 10)
    verdict(1, ok, f"{len(rep['checkpoints'])} checkpoints, flow {final['flow_factor']:.2f}, "
                   f"speed_factor {final['speed_factor']:.2f}, occupancy {occ[-1]:.3f} vs control {control[-1]:.3f}, "
                   f"{dt:.2f} s")


def test_2_single_layer_trend(tmp_path):
    sc = load_scenario("single_layer_pla")
    result, dt = run_session("single_layer_pla", tmp_path)
    occ = [o for _, o in result.report["occupancy_series"]]
    layers = {c["layer"] for c in result.report["checkpoints"]}
    setup = (sc.nominal.nozzle_temp, sc.nominal.print_speed) == (190.0, 120.0)
    ok = (setup and len(occ) == 4 and layers == {0} and all(b >= a for a, b in zip(occ, occ[1:]))
          and occ[-1] - occ[0] >= 0.05 and dt < 5)
    verdict(2, ok, f"segments {[round(o, 3) for o in occ]}, gain {occ[-1] - occ[0]:.3f}, {dt:.2f} s")


FIG5_COMMANDS = [
    "SET_RETRACTION RETRACT_LENGTH=0.900 RETRACT_SPEED=55.0",
    "M221 S110",
    "M220 S75",
    "SET_GCODE_OFFSET Z_ADJUST=-0.050 MOVE=1",
]


def test_3_fig5_replay(tmp_path):
    result, _ = run_session("wrench_fig5", tmp_path)
    cp = result.state.checkpoints[0]
    modes = {f.mode for f in cp.report.failures}
    steps = [s.target for s in cp.solution_plan.steps]
    changes = {c["param"]: (c["from"], c["to"]) for c in cp.parameter_changes()}
    ok = (cp.layer_index == 9 and modes == {M.INCONSISTENT_EXTRUSION, M.STRINGING_OOZING, M.LAYER_SEPARATION}
          and steps == FIG5_COMMANDS and changes["flow_factor"] == (1.05, 1.10)
          and changes["retraction.length"][1] > changes["retraction.length"][0]
          and changes["retraction.speed"][1] > changes["retraction.speed"][0] and "z_offset" in changes)
    verdict(3, ok, f"layer {cp.layer_index}: {sorted(m.value for m in modes)}; plan {steps}")


def test_4_tpu(tmp_path):
    result, _ = run_session("tpu", tmp_path)
    flagged = any(f.mode in (M.BED_ADHESION, M.LAYER_SEPARATION)
                  for c in result.state.checkpoints if c.report for f in c.report.failures)
    temp = result.report["final_parameters"]["nozzle_temp"]
    verdict(4, flagged and temp == 220.0, f"adhesion flagged={flagged}, final nozzle temp {temp}")


EXCLUDED = ["M112", "M999", "FIRMWARE_RESTART", "RESTART", "SAVE_CONFIG", "M500", "M502", "M997", "M80", "M81",
            "CANCEL_PRINT", "M84", "M18", "SDCARD_RESET_FILE"]
EXCLUDED_ENDPOINTS = ["machine.shutdown", "machine.reboot", "printer.restart", "printer.firmware_restart",
                      "printer.emergency_stop", "machine.update.firmware"]
BENIGN = ["M220 S80", "M221 S95", "M104 S205", "M140 S60", "M106 S128", "G1 X10 Y10", "G28",
          "SET_PRESSURE_ADVANCE ADVANCE=0.05", "SET_RETRACTION RETRACT_LENGTH=1.0", "M114"]


def test_5_safety():
    rng = random.Random(5)
    p = VirtualPrinter()
    p.load_job(Job.synthetic(n_layers=2, size=16))
    rec = RecordingTransport(SimTransport(p))
    client = PrinterClient(rec, sleep=no_sleep)
    excluded = blocked = 0
    for _ in range(1000):
        kind = rng.random()
        if kind < 0.2:
            ep = rng.choice(EXCLUDED_ENDPOINTS)
            before = len(rec.calls)
            r = client.call(ep)
            excluded += 1
            blocked += r.status is ApiStatus.DENIED and len(rec.calls) == before
            continue
        cmds = rng.sample(EXCLUDED + BENIGN, rng.randint(1, 3))
        bad = [c for c in cmds if c in EXCLUDED]
        before = len(rec.calls)
        r = client.run_gcode("\n".join(cmds))
        if bad:
            excluded += 1
            blocked += r.status is ApiStatus.DENIED and len(rec.calls) == before
    sent = [line.split()[0] for s in rec.scripts for line in s.splitlines() if line.strip()]
    leaked = sorted(set(sent) & set(EXCLUDED))
    paths = {c[1] for c in rec.calls}
    leaked_ep = [p_ for p_ in paths if any(k in p_ for k in ("shutdown", "reboot", "restart", "emergency", "update"))]
    ok = excluded > 0 and blocked == excluded and not leaked and not leaked_ep and not p.shutdown
    verdict(5, ok, f"{blocked}/{excluded} excluded requests blocked, {len(rec.calls)} transport calls, "
                   f"leaked {leaked + leaked_ep}")


FAILABLE = [None, None, None, "detector", "info_planner", "info_executor", "solution_planner", "solution_executor"]


def _failing(module):
    def body(record):
        raise RuntimeError(f"injected failure in {module}")
    return body


def test_6_supervisor_ordering():
    rng = random.Random(6)
    bad = []
    for i in range(1000):
        p = VirtualPrinter(Nominal(print_speed=120, nozzle_temp=200, bed_temp=60),
                           {"flow_factor": rng.uniform(0.6, 1.4), "print_speed": rng.uniform(60, 220),
                            "nozzle_temp": rng.uniform(180, 240), "retract_length": rng.uniform(0, 3),
                            "bed_temp": rng.uniform(40, 70)}, hidden={"z_error": rng.uniform(-0.3, 0.3)})
        p.load_job(Job.synthetic(n_layers=2, size=16))
        ctx = make_ctx(p, max_react_iters=rng.randint(1, 8))
        rec = ctx.state.new_checkpoint(0)
        fail = rng.choice(FAILABLE)
        Supervisor(ctx, {fail: _failing(fail)} if fail else None).run_checkpoint(rec, capture(ctx.client))
        want = expected_sequence(rec.report is None or rec.report.no_failures, first_failed(rec))
        seq = rec.sequence
        ordered = "solution_executor" not in seq or seq.index("info_executor") < seq.index("solution_executor")
        if seq != want or not ordered:
            bad.append((i, seq))
    verdict(6, not bad, f"1000 scenarios, {len(bad)} violations {bad[:2]}")


def test_7_gcode_round_trip():
    policies = [gcode.CheckpointPolicy(), gcode.CheckpointPolicy(granularity="per-segment", segments=2),
                gcode.CheckpointPolicy(granularity="every-n-layers", every=2)]
    names = {f.stem for f in CORPUS}
    failures = []
    for f in CORPUS:
        text = f.read_bytes().decode("utf-8")
        doc = gcode.parse(text)
        if gcode.serialize(doc) != text:
            failures.append(f"{f.name}: serialize")
        for pol in policies:
            injected = gcode.inject_checkpoints(gcode.segment_layers(doc, pol.k), pol)
            if gcode.serialize(gcode.strip_checkpoints(injected)) != text:
                failures.append(f"{f.name}: strip/{pol.granularity}")
    need = {"wrench", "raised_text", "square_single_layer"} <= names
    verdict(7, len(CORPUS) >= 5 and need and not failures, f"{len(CORPUS)} files x {len(policies)} policies, "
                                                            f"failures {failures}")


def test_8_occupancy_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    exact = 0
    for _ in range(200):
        img = rng.random((rng.integers(1, 40), rng.integers(1, 40))) < rng.random()
        fp = rng.random(img.shape) < 0.7
        fp.flat[0] = True
        brute = sum(1 for a, b in zip(img.ravel(), fp.ravel()) if a and b) / sum(1 for b in fp.ravel() if b)
        exact += occupancy(img, fp) == brute
    worst = 0.0
    for under in np.linspace(0, 1, 5):
        for inc in np.linspace(0, 1, 5):
            sev = DefectSeverities({M.UNDER_EXTRUSION: under, M.INCONSISTENT_EXTRUSION: inc, M.STRINGING_OOZING: 0.8})
            r = render_layer_image(sev, 3)
            gray, mask, meta = decode_png(encode_png(r.gray, r.footprint, r.metadata))
            worst = max(worst, abs(occupancy(gray, mask) - meta["ground_truth_occupancy"]))
    dt = time.perf_counter() - t0
    verdict(8, exact == 200 and worst <= 0.02 and dt < 5,
            f"binary fixtures exact {exact}/200, grid max |err| {worst:.4f}, {dt:.2f} s")


def test_9_confusion_fixture():
    ann = DATA / "annotations"
    truth = read_annotations(ann / "wrench_fig5_expert.tsv")["expert_a"]
    detected = read_annotations(ann / "wrench_fig5_detections.tsv")["llm"]
    cm = compare_detections(detected, truth)
    want = {"stringing_oozing": (2, 2, 0, 2), "blobs_zits": (1, 0, 3, 2), "inconsistent_extrusion": (1, 0, 0, 5),
            "layer_separation": (2, 0, 0, 4), "under_extrusion": (1, 0, 0, 5)}
    want.update({m.value: (0, 0, 0, 6) for m in M if m.value not in want})
    got = {m.value: (cm[m].tp, cm[m].fp, cm[m].fn, cm[m].tn) for m in M}
    sp, br = cm["stringing_oozing"].precision, cm["blobs_zits"].recall
    verdict(9, got == want and sp < 1 and br < 1, f"stringing precision {sp:.2f}, blobs recall {br:.2f}, "
                                                  f"{sum(got[k] == want[k] for k in want)}/{len(want)} modes exact")


class _SlowModel:
    """Chat-completions stand-in that answers "no failures" after a fixed delay."""

    def __init__(self, delay):
        delay_s = delay

        class H(BaseHTTPRequestHandler):
            def do_POST(self):
                self.rfile.read(int(self.headers["Content-Length"]))
                time.sleep(delay_s)
                out = json.dumps({"choices": [{"message": {"content": "```report\nno_failures: true\n```"},
                                               "finish_reason": "stop"}]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(out)))
                self.end_headers()
                self.wfile.write(out)

            def log_message(self, *a):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), H)
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


def test_10_latency(tmp_path):
    marks = []
    Session(SessionConfig("sim:wrench_fig5", out_dir=tmp_path / "oracle")).run(
        on_checkpoint=lambda k: marks.append(time.perf_counter()))
    # checkpoint-to-checkpoint: capture, agents, handoff, resume and the simulated print to the next pause
    cycles = np.diff(marks)
    model = _SlowModel(0.05)
    try:
        Session(SessionConfig("sim:nominal", out_dir=tmp_path / "remote", backend="remote", base_url=model.url,
                              model="stub", max_checkpoints=2)).run()
    finally:
        model.close()
    records = [json.loads(x) for x in (tmp_path / "remote" / "session.jsonl").read_text().splitlines()]
    llm = [r["payload"]["llm_latency_ms"] for r in records if r["kind"] == "checkpoint_done"]
    reported = [c["latency_ms"] for c in report_from_dir(tmp_path / "remote")["checkpoints"]]
    ok = cycles.max() < 1.0 and len(llm) == 2 and min(llm) >= 50 and min(reported) >= 50
    verdict(10, ok, f"oracle cycle max {cycles.max() * 1000:.0f} ms; remote stub per-checkpoint llm latency "
                    f"{[round(v) for v in llm]} ms logged, {[round(v) for v in reported]} ms reported")


KILLER = """
import os, signal, sys
from printloop.session import Session, SessionConfig
def hook(i):
    if i == int(sys.argv[2]):
        os.kill(os.getpid(), signal.SIGKILL)
Session(SessionConfig("sim:wrench_fig5", out_dir=sys.argv[1])).run(on_checkpoint=hook)
"""


def test_11_resumability(tmp_path):
    full = tmp_path / "full"
    main(["run", "--sim", "wrench_fig5", "--out", str(full)])
    reference = comparable_log(full / "session.jsonl")
    outcomes = []
    for k in (0, 2, 4):
        cut = tmp_path / f"cut{k}"
        p = subprocess.run([sys.executable, "-c", KILLER, str(cut), str(k)], capture_output=True)
        rc = main(["run", "--sim", "wrench_fig5", "--out", str(cut), "--resume"])
        outcomes.append(p.returncode == -signal.SIGKILL and rc == 0
                        and comparable_log(cut / "session.jsonl") == reference)
    verdict(11, all(outcomes), f"killed after checkpoints 0, 2, 4 -> identical logs {outcomes}")
