"""Regenerate the bundled G-code corpus under src/printloop/data/gcode.

A tiny scanline slicer: each part is a boolean mask over the bed, filled
with rectilinear 100 % infill.  Output is committed; rerun only when the
shapes change.
"""

import math
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "printloop" / "data" / "gcode"
FILAMENT_AREA = math.pi * (1.75 / 2) ** 2
WIDTH = 0.8

FONT = {
    "L": ["10000", "10000", "10000", "10000", "10000", "10000", "11111"],
    "M": ["10001", "11011", "10101", "10101", "10001", "10001", "10001"],
    "A": ["01110", "10001", "10001", "11111", "10001", "10001", "10001"],
}


def runs(mask, y, x0, x1, step=0.05):
    out = []
    inside = False
    start = None
    n = int(round((x1 - x0) / step))
    for i in range(n + 1):
        x = x0 + i * step
        v = mask(x, y)
        if v and not inside:
            start, inside = x, True
        elif not v and inside:
            out.append((start, x - step))
            inside = False
    if inside:
        out.append((start, x1))
    return [(a, b) for a, b in out if b - a > WIDTH / 2]


class Writer:
    def __init__(self, absolute_e, eol="\n"):
        self.lines = []
        self.absolute_e = absolute_e
        self.e = 0.0
        self.eol = eol

    def add(self, s):
        self.lines.append(s)

    def extrude_to(self, x, y, length, lh, feed=2400):
        de = length * lh * WIDTH / FILAMENT_AREA
        self.e += de
        val = self.e if self.absolute_e else de
        self.add(f"G1 X{x:.3f} Y{y:.3f} E{val:.5f} F{feed}")

    def retract(self, amount=0.8):
        if self.absolute_e:
            self.e -= amount
            self.add(f"G1 E{self.e:.5f} F2400")
        else:
            self.add(f"G1 E-{amount:.5f} F2400")

    def unretract(self, amount=0.8):
        if self.absolute_e:
            self.e += amount
            self.add(f"G1 E{self.e:.5f} F2400")
        else:
            self.add(f"G1 E{amount:.5f} F2400")

    def fill_layer(self, mask, bounds, z, lh, flip=False):
        xmin, ymin, xmax, ymax = bounds
        rows = int((ymax - ymin) / WIDTH)
        direction = False
        for r in range(rows + 1):
            y = ymin + WIDTH / 2 + r * WIDTH
            if y > ymax:
                break
            segs = runs(mask, y, xmin, xmax)
            if direction:
                segs = [(b, a) for a, b in reversed(segs)]
            for a, b in segs:
                self.retract()
                self.add(f"G0 X{a:.3f} Y{y:.3f} F9000")
                self.unretract()
                self.extrude_to(b, y, abs(b - a), lh)
            direction = not direction

    def text(self):
        return "".join(line + self.eol for line in self.lines)


def header(w, name, lh, count=None, cura=True):
    if cura:
        w.add(";FLAVOR:Marlin")
        w.add(f";Layer height: {lh}")
        if count:
            w.add(f";LAYER_COUNT:{count}")
    else:
        w.add(f"; generated for {name}")
        w.add(f"; layer_height = {lh}")
    w.add("M140 S60")
    w.add("M104 S200")
    w.add("M190 S60")
    w.add("M109 S200")
    w.add("G28 ; home all axes")
    w.add("G90")
    w.add("M82" if w.absolute_e else "M83")
    w.add("G92 E0")


def footer(w):
    w.add("G1 Z20 F3000")
    w.add("M104 S0")
    w.add("M140 S0")
    w.add("M84")


def wrench_mask(x, y):
    handle = 82 <= x <= 158 and 104 <= y <= 116
    d1 = math.hypot(x - 70, y - 110)
    open_head = 7 <= d1 <= 15 and not (x < 70 and abs(y - 110) < 6)
    d2 = math.hypot(x - 170, y - 110)
    ring = 6 <= d2 <= 13
    return handle or open_head or ring


def make_wrench():
    w = Writer(absolute_e=True)
    lh, n = 0.35, 15
    header(w, "wrench", lh, n)
    for layer in range(n):
        z = (layer + 1) * lh
        w.add(f";LAYER:{layer}")
        w.add(f"G0 Z{z:.3f} F3000")
        w.fill_layer(wrench_mask, (54, 94, 184, 126), z, lh)
    footer(w)
    return w.text()


def text_mask(word, x0, y0, px):
    def mask(x, y):
        for k, ch in enumerate(word):
            gx = (x - (x0 + k * 6 * px)) / px
            gy = 6 - (y - y0) / px
            if 0 <= gx < 5 and 0 <= gy < 7:
                if FONT[ch][int(gy)][int(gx)] == "1":
                    return True
        return False
    return mask


def make_text():
    w = Writer(absolute_e=False)
    lh = 0.35
    header(w, "raised_text", lh, cura=False)
    base = lambda x, y: 80 <= x <= 150 and 95 <= y <= 125
    letters = text_mask("LLM", 86.5, 98, 3.0)
    z = 0.0
    for layer in range(6):
        z = round(z + lh, 3)
        w.add(";LAYER_CHANGE")
        w.add(f";Z:{z:.3f}")
        w.add(f";HEIGHT:{lh}")
        w.add(f"G0 Z{z:.3f} F3000")
        if layer < 2:
            w.fill_layer(base, (80, 95, 150, 125), z, lh)
        else:
            w.fill_layer(letters, (80, 95, 150, 125), z, lh)
    footer(w)
    return w.text()


def make_square():
    w = Writer(absolute_e=False)
    lh = 0.5
    header(w, "square", lh, 1)
    w.add(";LAYER:0")
    w.add(f"G0 Z{lh:.3f} F3000")
    w.fill_layer(lambda x, y: 60 <= x <= 160 and 60 <= y <= 160, (60, 60, 160, 160), lh, lh)
    footer(w)
    return w.text()


def make_cube10():
    w = Writer(absolute_e=True, eol="\r\n")
    lh = 0.35
    header(w, "cube", lh, 10)
    for layer in range(10):
        z = (layer + 1) * lh
        w.add(f";LAYER:{layer}")
        w.add(f"G0 Z{z:.3f} F3000")
        w.fill_layer(lambda x, y: 100 <= x <= 120 and 100 <= y <= 120, (100, 100, 120, 120), z, lh)
    footer(w)
    return w.text()


def make_two_layer():
    w = Writer(absolute_e=False)
    lh = 0.35
    w.add("; two layers, no layer markers")
    w.add("G28")
    w.add("G90")
    w.add("M83")
    for layer in range(2):
        z = (layer + 1) * lh
        w.add(f"G0 Z{z + 0.4:.3f} F3000 ; hop")
        w.add(f"G0 X40 Y40 F9000")
        w.add(f"G0 Z{z:.3f} F3000")
        w.fill_layer(lambda x, y: 40 <= x <= 70 and 40 <= y <= 70, (40, 40, 70, 70), z, lh)
    w.add("G1 Z10 F3000")
    return w.text()


def make_three_layer():
    w = Writer(absolute_e=True)
    lh = 0.35
    w.add("N1 M110 N1*124")
    w.add("M117 Printing three layer test")
    w.add("G28 X Y")
    w.add("G28 Z")
    w.add("G90")
    w.add("M82")
    w.add("G92 E0")
    w.add("T0")
    for layer in range(3):
        z = (layer + 1) * lh
        w.add(";LAYER_CHANGE")
        w.add(f"G1 Z{z:.2f} F1200 ; move up")
        w.add("G92 E0")
        w.e = 0.0
        w.fill_layer(lambda x, y: 20 <= x <= 35 and 20 <= y <= 30, (20, 20, 35, 30), z, lh)
    w.add("M400")
    w.add("M84")
    return w.text().rstrip("\n")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    files = {
        "wrench.gcode": make_wrench(),
        "raised_text.gcode": make_text(),
        "square_single_layer.gcode": make_square(),
        "cube_10_layers.gcode": make_cube10(),
        "two_layer_no_markers.gcode": make_two_layer(),
        "three_layer.gcode": make_three_layer(),
    }
    for name, text in files.items():
        (OUT / name).write_bytes(text.encode("utf-8"))
        print(f"{name}: {text.count(chr(10))} lines")


if __name__ == "__main__":
    main()
