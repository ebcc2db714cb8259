import math
import re

import pytest
from hypothesis import given, settings, strategies as st

from printloop import gcode
from printloop.gcode import (
    CheckpointPolicy,
    ParameterChange,
    PurgeTower,
    find_checkpoints,
    inject_checkpoints,
    parse,
    parse_parameter_command,
    render_parameter_command,
    segment_layers,
    serialize,
    strip_checkpoints,
    synthesize_purge_tower,
)

from conftest import CORPUS, GCODE


def read(name):
    return (GCODE / name).read_text(encoding="utf-8")


# --- independent oracles -------------------------------------------------------


def z_scan_layers(text):
    """Distinct Z values at which a move deposits material (positive E, absolute or relative)."""
    z, e, relative = 0.0, 0.0, False
    zs = []
    for line in text.splitlines():
        code = line.split(";", 1)[0].strip().upper()
        if code.startswith("M83"):
            relative = True
        elif code.startswith("M82"):
            relative = False
        elif code.startswith("G92"):
            m = re.search(r"E(-?[\d.]+)", code)
            if m:
                e = float(m.group(1))
        elif re.match(r"G0?[01]\b", code):
            m = re.search(r"Z(-?[\d.]+)", code)
            if m:
                z = float(m.group(1))
            m = re.search(r"E(-?[\d.]+)", code)
            if m:
                val = float(m.group(1))
                de = val if relative else val - e
                e = e + val if relative else val
                if de > 0 and (not zs or z > zs[-1] + 1e-9):
                    zs.append(z)
    return zs


def block_points(block):
    pts = []
    for line in block:
        xs = re.search(r"X(-?[\d.]+)", line)
        ys = re.search(r"Y(-?[\d.]+)", line)
        if xs and ys:
            pts.append((float(xs.group(1)), float(ys.group(1))))
    return pts


def integrate_block(block):
    """Path length of extruding moves and summed E, walked move by move."""
    prev, length, e_total = None, 0.0, 0.0
    for line in block:
        if not line.startswith(("G0", "G1")):
            continue
        x = float(re.search(r"X(-?[\d.]+)", line).group(1))
        y = float(re.search(r"Y(-?[\d.]+)", line).group(1))
        m = re.search(r"E(-?[\d.]+)", line)
        if m and prev is not None:
            length += math.dist(prev, (x, y))
            e_total += float(m.group(1))
        prev = (x, y)
    return length, e_total


# --- parse ----------------------------------------------------------------------


def test_parse_tokenizes_move():
    line = parse("G1 X10 Y20 E0.5").lines[0]
    assert line.command == "G1"
    assert dict(line.params) == {"X": 10, "Y": 20, "E": 0.5}


def test_parse_empty():
    assert len(parse("")) == 0


def test_parse_keeps_unknown_lines_verbatim():
    doc = parse("; just a comment\nFOO bar baz\n\n")
    assert [ln.command for ln in doc.lines] == [None, "FOO", None]
    assert serialize(doc) == "; just a comment\nFOO bar baz\n\n"


def test_parse_error_names_line():
    with pytest.raises(gcode.GcodeParseError, match="2"):
        parse("G28\nG1 Xabc\n")


def test_three_layer_round_trip():
    text = read("three_layer.gcode")
    assert serialize(parse(text)) == text


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.stem)
def test_corpus_round_trip_and_strip(path):
    text = path.read_text(encoding="utf-8")
    doc = segment_layers(parse(text))
    assert serialize(doc) == text
    injected = inject_checkpoints(doc, CheckpointPolicy())
    assert serialize(strip_checkpoints(injected)) == text
    assert len(injected.layers) == len(doc.layers)


def test_corpus_size():
    names = {p.stem for p in CORPUS}
    assert len(names) >= 5
    assert {"wrench", "raised_text", "square_single_layer"} <= names


# --- segment_layers ---------------------------------------------------------------


def test_markers_ten_layers():
    doc = segment_layers(parse(read("cube_10_layers.gcode")), 1)
    assert len(doc.layers) == 10
    assert all(len(layer.sub_segments) == 1 for layer in doc.layers)


def test_single_layer_square_four_segments():
    doc = segment_layers(parse(read("square_single_layer.gcode")), 4)
    assert len(doc.layers) == 1
    assert len(doc.layers[0].sub_segments) == 4


def test_markerless_layers_match_z_scan():
    text = read("two_layer_no_markers.gcode")
    expected = z_scan_layers(text)
    assert expected == [0.35, 0.7]  # frozen from the oracle
    doc = segment_layers(parse(text))
    assert [layer.z for layer in doc.layers] == pytest.approx(expected)


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.stem)
def test_layer_count_matches_z_scan(path):
    text = path.read_text(encoding="utf-8")
    assert len(segment_layers(parse(text)).layers) == len(z_scan_layers(text))


def test_too_few_moves_for_k():
    with pytest.raises(gcode.GcodeError):
        segment_layers(parse("M83\nG1 Z0.2\nG1 X10 Y0 E1\n"), 2)


def test_empty_toolpath():
    with pytest.raises(gcode.EmptyToolpathError):
        segment_layers(parse("G28\nG1 X10 Y10 F3000\n"))


def _segment_lengths(doc, layer):
    moves = [m for m in gcode.scan_moves(doc.lines) if m.extruding]
    return [sum(m.xy_length for m in moves if a <= m.index < b) for a, b in layer.sub_segments]


@pytest.mark.parametrize("name,k", [("square_single_layer.gcode", 4), ("wrench.gcode", 4), ("cube_10_layers.gcode", 3)])
def test_segment_balance(name, k):
    doc = segment_layers(parse(read(name)), k)
    for layer in doc.layers:
        lengths = _segment_lengths(doc, layer)
        mean = sum(lengths) / len(lengths)
        assert all(abs(x - mean) <= 0.2 * mean for x in lengths), lengths


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.stem)
def test_segments_partition_layer(path):
    doc = segment_layers(parse(path.read_text(encoding="utf-8")), 3)
    moves = [m for m in gcode.scan_moves(doc.lines) if m.extruding]
    prev_end = -1
    for i, layer in enumerate(doc.layers):
        assert layer.layer_index == i
        assert layer.line_span[0] >= prev_end
        prev_end = layer.line_span[1]
        spans = layer.sub_segments
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            assert a1 == b0
        own = [m.index for m in moves if layer.line_span[0] <= m.index < layer.line_span[1]]
        assert spans[0][0] == own[0] and spans[-1][1] == own[-1] + 1


# --- inject_checkpoints -------------------------------------------------------------


def test_per_layer_ten_blocks():
    doc = segment_layers(parse(read("cube_10_layers.gcode")))
    out = inject_checkpoints(doc, CheckpointPolicy())
    cps = find_checkpoints(out)
    assert len(cps) == 10
    assert [c.layer_index for c in cps] == list(range(10))


def test_per_segment_square():
    doc = segment_layers(parse(read("square_single_layer.gcode")), 4)
    out = inject_checkpoints(doc, CheckpointPolicy("per-segment", segments=4))
    cps = find_checkpoints(out)
    assert [(c.layer_index, c.segment_index) for c in cps] == [(0, 0), (0, 1), (0, 2), (0, 3)]
    # each block sits right after the last move of its sub-segment
    moves = [m for m in gcode.scan_moves(out.lines, gcode.injected_mask(out.lines)) if m.extruding]
    for cp, (_, end) in zip(cps, out.layers[0].sub_segments):
        before = [m.index for m in moves if m.index < cp.begin]
        assert before[-1] == end - 1


def test_every_n_layers():
    doc = segment_layers(parse(read("cube_10_layers.gcode")))
    cps = find_checkpoints(inject_checkpoints(doc, CheckpointPolicy("every-n-layers", every=3)))
    assert [c.layer_index for c in cps] == [2, 5, 8, 9]


def test_block_contents_order():
    doc = segment_layers(parse(read("three_layer.gcode")))
    out = inject_checkpoints(doc, CheckpointPolicy(park_position=(5.0, 7.0)))
    cp = find_checkpoints(out)[0]
    body = [ln.raw_text.strip() for ln in out.lines[cp.begin:cp.end]]
    assert body[0].startswith(";<printloop:begin ")
    assert body[2] == "PAUSE"
    assert body[3].startswith("G0 X5.000 Y7.000")
    assert body[4] == "CAPTURE_CHECKPOINT LAYER=0 SEGMENT=0"
    assert body[-1].startswith(";<printloop:end ")


def test_injection_keeps_original_lines_in_order():
    text = read("wrench.gcode")
    doc = segment_layers(parse(text))
    out = inject_checkpoints(doc, CheckpointPolicy(purge_tower=PurgeTower(diameter=20)))
    mask = gcode.injected_mask(out.lines)
    kept = [ln for ln, inj in zip(out.lines, mask) if not inj]
    assert kept == list(doc.lines)


def test_crlf_and_no_trailing_newline():
    text = "G28\r\nG90\r\nM83\r\nG1 Z0.3 F600\r\nG1 X10 Y0 E1\r\nG1 X10 Y10 E1"
    out = inject_checkpoints(segment_layers(parse(text)), CheckpointPolicy())
    assert "\r\n" in serialize(out)
    assert serialize(strip_checkpoints(out)) == text


def test_purge_tower_placement_error():
    doc = segment_layers(parse(read("wrench.gcode")))
    x0, y0, x1, y1 = gcode.model_bounds(doc)
    policy = CheckpointPolicy(purge_tower=PurgeTower(center=((x0 + x1) / 2, (y0 + y1) / 2), diameter=20))
    with pytest.raises(gcode.PlacementError):
        inject_checkpoints(doc, policy)


def test_purge_block_printed_before_next_layer():
    doc = segment_layers(parse(read("three_layer.gcode")))
    out = inject_checkpoints(doc, CheckpointPolicy(purge_tower=PurgeTower(center=(80.0, 80.0), diameter=20)))
    text = serialize(out)
    for i in range(3):
        assert f"; purge tower layer {i}" in text
    # layer 1's cylinder sits inside checkpoint 0, after the capture and before resume
    cp = find_checkpoints(out)[0]
    body = [ln.raw_text.strip() for ln in out.lines[cp.begin:cp.end]]
    capture = body.index("CAPTURE_CHECKPOINT LAYER=0 SEGMENT=0")
    purge = body.index("; purge tower layer 1")
    resume = next(i for i, b in enumerate(body) if b.endswith("; resume"))
    assert capture < purge < resume


# --- purge tower --------------------------------------------------------------------


def test_purge_points_within_radius():
    (block,) = synthesize_purge_tower(PurgeTower(diameter=20, layer_height=0.35), 1, (50.0, 60.0))
    pts = block_points(block)
    assert pts
    assert max(math.dist(p, (50.0, 60.0)) for p in pts) <= 10.0 + 1e-9


def test_purge_layer_z():
    blocks = synthesize_purge_tower(PurgeTower(diameter=20, layer_height=0.35), 3)
    zs = [float(re.search(r"Z(-?[\d.]+)", next(ln for ln in b if " Z" in ln)).group(1)) for b in blocks]
    assert zs == [0.35, 0.70, 1.05]


def test_purge_extrusion_matches_integration():
    spec = PurgeTower(diameter=20, layer_height=0.35)
    (block,) = synthesize_purge_tower(spec, 1)
    length, e_total = integrate_block(block)
    per_mm = spec.layer_height * spec.extrusion_width / (math.pi * (spec.filament_diameter / 2) ** 2)
    assert e_total == pytest.approx(length * per_mm, rel=0.05)
    # also against the ideal circles the rings approximate
    rings, r = [], 10 - 0.2
    while r >= 0.2 - 1e-9:
        rings.append(r)
        r -= 0.4
    assert e_total == pytest.approx(sum(2 * math.pi * r for r in rings) * per_mm, rel=0.05)


def test_purge_preconditions():
    with pytest.raises(ValueError):
        synthesize_purge_tower(PurgeTower(diameter=0.3), 1)
    with pytest.raises(ValueError):
        synthesize_purge_tower(PurgeTower(), 0)


# --- parameter commands ----------------------------------------------------------


@pytest.mark.parametrize("change,expected", [
    (ParameterChange("speed_factor", 0.75), "M220 S75"),
    (ParameterChange("flow_factor", 1.10), "M221 S110"),
    (ParameterChange("pressure_advance", 0.1), "SET_PRESSURE_ADVANCE ADVANCE=0.100"),
    (ParameterChange("nozzle_temp", 220), "M104 S220"),
    (ParameterChange("bed_temp", 65), "M140 S65"),
    (ParameterChange("fan", 1.0), "M106 S255"),
    (ParameterChange("retraction", 0.9, 55), "SET_RETRACTION RETRACT_LENGTH=0.900 RETRACT_SPEED=55.0"),
    (ParameterChange("z_adjust", -0.05), "SET_GCODE_OFFSET Z_ADJUST=-0.050 MOVE=1"),
])
def test_render_table(change, expected):
    assert render_parameter_command(change) == [expected]
    back = parse_parameter_command(expected)
    assert back.param == change.param
    assert back.value == pytest.approx(change.value, abs=1e-3)


def test_render_unknown():
    with pytest.raises(gcode.UnsupportedParameterError):
        render_parameter_command(ParameterChange("firmware", 1))


# --- properties ---------------------------------------------------------------------

_word = st.builds(lambda c, v: f"{c}{v:.3f}", st.sampled_from("XYZEF"),
                  st.floats(-500, 500, allow_nan=False, allow_infinity=False))
_line = st.one_of(
    st.builds(lambda cmd, ws, cm: " ".join([cmd, *ws]) + (f" ;{cm}" if cm else ""),
              st.sampled_from(["G0", "G1", "G92", "M104", "M106"]), st.lists(_word, max_size=4),
              st.text(alphabet=st.characters(blacklist_characters="\r\n", blacklist_categories=("Cs",)), max_size=10)),
    st.text(alphabet=st.characters(blacklist_characters="\r\n0123456789.-XYZEFGMNTS*", blacklist_categories=("Cs",)),
            max_size=20).map(lambda s: ";" + s),
    st.just(""),
)


@given(st.lists(_line, max_size=30), st.sampled_from(["\n", "\r\n"]), st.booleans())
@settings(max_examples=200, deadline=None)
def test_round_trip_property(lines, eol, trailing):
    text = eol.join(lines) + (eol if trailing and lines else "")
    assert serialize(parse(text)) == text


@st.composite
def toolpaths(draw):
    n_layers = draw(st.integers(1, 5))
    lines = ["G90", "M83"]
    for i in range(n_layers):
        z = round(0.2 + 0.2 * i, 3)
        lines.append(f"G1 Z{z} F600")
        # at least 4 moves that actually travel, so k <= 4 always has something to split
        x = y = 0
        for _ in range(draw(st.integers(4, 12))):
            x += draw(st.integers(1, 20))
            y = draw(st.integers(0, 100))
            lines.append(f"G1 X{x} Y{y} E{draw(st.floats(0.01, 2)):.4f}")
    return "\n".join(lines) + "\n"


@given(toolpaths(), st.integers(1, 4), st.sampled_from(["per-layer", "per-segment", "every-n-layers"]))
@settings(max_examples=100, deadline=None)
def test_inject_strip_property(text, k, granularity):
    doc = segment_layers(parse(text), k)
    policy = CheckpointPolicy(granularity, segments=k, every=2)
    out = inject_checkpoints(doc, policy)
    assert serialize(strip_checkpoints(out)) == text
    assert len(out.layers) == len(doc.layers)


@given(st.sampled_from(gcode.PARAMETERS), st.floats(0, 2, allow_nan=False), st.floats(10, 80))
def test_render_deterministic(param, value, speed):
    change = ParameterChange(param, value, speed)
    assert render_parameter_command(change) == render_parameter_command(change)
