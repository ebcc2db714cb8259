import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from printloop.client import PrinterClient, PrinterSnapshot, Retraction, TempPair
from printloop.modes import FailureMode as M
from printloop.sim import (
    DefectSeverities,
    Nominal,
    SimError,
    SimTransport,
    VirtualPrinter,
    compute_severities,
    decode_png,
    encode_png,
    load_scenario,
    render_layer_image,
)
from printloop.sim.printer import Job
from printloop.sim.scenario import bundled

NOM = Nominal(print_speed=120, nozzle_temp=200, bed_temp=60)


def snap(flow=1.0, speed_factor=1.0, print_speed=120.0, temp=200.0, bed=60.0, rl=2.0, rs=40.0, pa=0.05):
    return PrinterSnapshot(flow_factor=flow, speed_factor=speed_factor, print_speed=print_speed,
                           nozzle_temp=TempPair(temp, temp), bed_temp=TempPair(bed, bed),
                           retraction=Retraction(rl, rs), pressure_advance=pa)


def oracle(flow, speed, temp, bed, rl, rs, pa, z, nominal=NOM):
    """Severity formulas written out a second time, straight from the model definition."""
    c = lambda v: min(1.0, max(0.0, v))  # noqa: E731
    under = c((1 - flow) / 0.25)
    over = c((flow - 1.15) / 0.25)
    return {
        "under_extrusion": under,
        "over_extrusion": over,
        "inconsistent_extrusion": c((speed - nominal.print_speed) / nominal.print_speed) * 0.8 + 0.2 * under,
        "stringing_oozing": c(0.5 * max(0, (temp - nominal.nozzle_temp) / 30) + 0.4 * max(0, (2 - rl) / 2)
                              + 0.1 * max(0, (40 - rs) / 40)),
        "layer_separation": c(abs(z) / 0.2),
        "warping": c((nominal.bed_temp - bed) / 30) if bed < nominal.bed_temp else 0.0,
        "blobs_zits": c(0.6 * over + 0.4 * max(0, (0.05 - pa) / 0.05)),
    }


# --- compute_severities -----------------------------------------------------------


def test_flow_075_full_under_extrusion():
    assert compute_severities(snap(flow=0.75), NOM)[M.UNDER_EXTRUSION] == 1.0


def test_nominal_all_zero():
    sev = compute_severities(snap(), NOM)
    assert all(v == 0.0 for v in sev.values.values())


def test_longer_retraction_2_to_3():
    # Evaluating the model at both points: the retraction term is max(0, (2 - L)/2), already zero
    # at the 2 mm reference, so 2.0 -> 3.0 mm leaves stringing unchanged (non-increasing, not strict).
    a = compute_severities(snap(rl=2.0, temp=215), NOM)[M.STRINGING_OOZING]
    b = compute_severities(snap(rl=3.0, temp=215), NOM)[M.STRINGING_OOZING]
    assert (a, b) == pytest.approx((0.25, 0.25))
    assert b <= a


def test_retraction_below_reference_strictly_helps():
    # below the 2 mm reference the retraction term is live: 1.0 -> 1.5 mm strictly helps
    a = compute_severities(snap(rl=1.0), NOM)[M.STRINGING_OOZING]
    b = compute_severities(snap(rl=1.5), NOM)[M.STRINGING_OOZING]
    assert (a, b) == pytest.approx((0.2, 0.1))


def test_adhesion_first_layer_vs_above():
    first = compute_severities(snap(), NOM, 0.1, first_layer=True)
    above = compute_severities(snap(), NOM, 0.1)
    assert first[M.BED_ADHESION] == pytest.approx(0.5) and first[M.LAYER_SEPARATION] == 0
    assert above[M.LAYER_SEPARATION] == pytest.approx(0.5) and above[M.BED_ADHESION] == 0


_f = lambda lo, hi: st.floats(lo, hi, allow_nan=False)  # noqa: E731


@given(_f(0.5, 1.6), _f(0.5, 1.5), _f(60, 250), _f(170, 260), _f(30, 90), _f(0, 5), _f(5, 80), _f(0, 0.2),
       _f(-0.4, 0.4))
@settings(max_examples=300)
def test_matches_oracle(flow, sf, ps, temp, bed, rl, rs, pa, z):
    sev = compute_severities(snap(flow, sf, ps, temp, bed, rl, rs, pa), NOM, z)
    expected = oracle(flow, ps * sf, temp, bed, rl, rs, pa, z)
    for mode, v in expected.items():
        assert sev[mode] == pytest.approx(v, abs=1e-9), mode
    assert all(0.0 <= v <= 1.0 for v in sev.values.values())


@given(_f(0, 5), _f(0, 5), _f(5, 80), _f(170, 260))
def test_stringing_monotone_in_retraction_length(a, b, rs, temp):
    lo, hi = sorted((a, b))
    s = lambda rl: compute_severities(snap(rl=rl, rs=rs, temp=temp), NOM)[M.STRINGING_OOZING]  # noqa: E731
    assert s(hi) <= s(lo)


@given(_f(5, 80), _f(5, 80), _f(0, 5), _f(170, 260))
def test_stringing_monotone_in_retraction_speed(a, b, rl, temp):
    lo, hi = sorted((a, b))
    s = lambda rs: compute_severities(snap(rl=rl, rs=rs, temp=temp), NOM)[M.STRINGING_OOZING]  # noqa: E731
    assert s(hi) <= s(lo)


@given(_f(150, 280), _f(150, 280), _f(0, 5), _f(5, 80))
def test_stringing_monotone_in_temp(a, b, rl, rs):
    lo, hi = sorted((a, b))
    s = lambda t: compute_severities(snap(rl=rl, rs=rs, temp=t), NOM)[M.STRINGING_OOZING]  # noqa: E731
    assert s(hi) >= s(lo)


@given(_f(0.3, 1.6), _f(0.3, 1.6))
def test_under_extrusion_monotone_in_flow(a, b):
    lo, hi = sorted((a, b))
    u = lambda f: compute_severities(snap(flow=f), NOM)[M.UNDER_EXTRUSION]  # noqa: E731
    assert u(hi) <= u(lo)
    if lo >= 1.0:
        assert u(lo) == 0.0


# --- rendering ----------------------------------------------------------------------


def brute_occupancy(png: bytes) -> tuple[float, float]:
    """Pixel-by-pixel count over the decoded alpha footprint; returns (measured, metadata truth)."""
    gray, mask, meta = decode_png(png)
    inside = occupied = 0
    for r in range(gray.shape[0]):
        for c in range(gray.shape[1]):
            if mask[r, c]:
                inside += 1
                occupied += gray[r, c] >= 0.5
    return occupied / inside, meta["ground_truth_occupancy"]


def test_clean_render_full_occupancy():
    r = render_layer_image(DefectSeverities(), 1)
    assert r.binary[r.footprint].all()
    assert brute_occupancy(encode_png(r.gray, r.footprint, r.metadata)) == (1.0, 1.0)


def test_under_half_matches_point_seven():
    r = render_layer_image(DefectSeverities({M.UNDER_EXTRUSION: 0.5}), 7)
    measured, truth = brute_occupancy(encode_png(r.gray, r.footprint, r.metadata))
    assert truth == pytest.approx(0.70)
    assert abs(measured - 0.70) <= 0.02


@pytest.mark.parametrize("under", [0.0, 0.25, 0.5, 0.75, 1.0])
@pytest.mark.parametrize("inconsistent", [0.0, 0.25, 0.5, 0.75, 1.0])
def test_render_grid(under, inconsistent):
    sev = DefectSeverities({M.UNDER_EXTRUSION: under, M.INCONSISTENT_EXTRUSION: inconsistent,
                            M.STRINGING_OOZING: 0.8})
    r = render_layer_image(sev, 11)
    measured, truth = brute_occupancy(encode_png(r.gray, r.footprint, r.metadata))
    assert truth == pytest.approx(1 - (0.6 * under + 0.1 * inconsistent))
    assert abs(measured - truth) <= 0.02


def test_strands_stay_outside_footprint():
    clean = render_layer_image(DefectSeverities(), 5)
    stringy = render_layer_image(DefectSeverities({M.STRINGING_OOZING: 1.0}), 5)
    assert np.array_equal(clean.binary, stringy.binary)
    outside = ~stringy.footprint
    assert (stringy.gray[outside] > 0.5).any()


def test_render_deterministic():
    sev = DefectSeverities({M.UNDER_EXTRUSION: 0.4, M.STRINGING_OOZING: 0.5, M.BLOBS_ZITS: 0.5})
    a = render_layer_image(sev, 42)
    b = render_layer_image(sev, 42)
    assert encode_png(a.gray, a.footprint, a.metadata) == encode_png(b.gray, b.footprint, b.metadata)


# --- printer core ---------------------------------------------------------------------


def test_step_requires_job():
    with pytest.raises(SimError):
        VirtualPrinter().step_checkpoint()


def test_z_shift_before_layer_9():
    sc = load_scenario("wrench_fig5")
    p = sc.build_printer()
    ev = p.events[-1]
    assert ev.layer_index == 9
    assert ev.severities[M.LAYER_SEPARATION] == pytest.approx(0.75)


def test_perturbation_on_printed_layer():
    p = VirtualPrinter()
    p.load_job(Job.synthetic(n_layers=3, size=16))
    with pytest.raises(SimError):
        p.inject_perturbation(0, "z_shift", 0.1)
    p.inject_perturbation(2, "z_shift", 0.1)


def test_perturbation_bypasses_api():
    p = VirtualPrinter(auto_advance=False)
    p.load_job(Job.synthetic(n_layers=3, size=16))
    p.inject_perturbation(1, "z_shift", 0.1)
    a = p.step_checkpoint()
    b = p.step_checkpoint()
    assert a.severities[M.BED_ADHESION] == 0.0
    assert b.severities[M.LAYER_SEPARATION] == pytest.approx(0.5)
    assert p.command_log == []
    assert p.status()["gcode_move"]["homing_origin"][2] == 0.0


def test_no_perturbation_depends_on_commands_only():
    p = VirtualPrinter(auto_advance=False, initial={"flow_factor": 0.9})
    p.load_job(Job.synthetic(n_layers=2, size=16))
    ev = p.step_checkpoint()
    assert ev.severities.as_dict() == compute_severities(p.commanded_snapshot(), p.nominal).as_dict()


def _run(seed, commands):
    p = VirtualPrinter(seed=seed, auto_advance=False, initial={"flow_factor": 0.8})
    p.load_job(Job.synthetic(n_layers=4, size=32))
    out = []
    for cmd in commands:
        ev = p.step_checkpoint()
        out.append((ev.to_dict(), p.snapshot_png("top")))
        p.run_gcode(cmd)
    return out


def test_deterministic_event_stream():
    cmds = ["M221 S90", "M220 S80", "M221 S105", "M104 S205"]
    assert _run(3, cmds) == _run(3, cmds)
    assert _run(3, cmds) != _run(4, cmds)


def test_restore_round_trip():
    sc = load_scenario("underextrusion")
    a = sc.build_printer()
    a.run_gcode("M221 S105")
    a.resume()
    saved = a.to_dict()
    b = sc.build_printer(start=False)
    b.restore(saved)
    a.run_gcode("M220 S75")
    b.run_gcode("M220 S75")
    a.resume()
    b.resume()
    assert a.events[-1].to_dict() == b.events[-1].to_dict()
    assert a.snapshot_png("top") == b.snapshot_png("top")


def test_dangerous_endpoint_shuts_down():
    p = VirtualPrinter()
    r = p.handle("POST", "/printer/emergency_stop")
    assert r.status_code == 200 and p.shutdown


def test_pause_requires_active_print():
    p = VirtualPrinter()
    r = p.handle("POST", "/printer/print/pause")
    assert r.status_code == 400


@pytest.mark.parametrize("name", bundled())
def test_bundled_scenarios_load(name):
    sc = load_scenario(name)
    p = sc.build_printer()
    assert p.events, name
    client = PrinterClient(SimTransport(p))
    assert client.capture_snapshot("top").ok
    assert client.capture_snapshot("front").ok
