# %% [markdown]
# Closed-loop correction of a starved extruder
#
# The underextrusion scenario starts the wrench at 75 % flow and 170 mm/s.
# We run the agents against the simulator, then print the same job with
# nobody watching and compare layer occupancy.

# %%
import tempfile
from pathlib import Path

import numpy as np

from printloop.metrics import occupancy
from printloop.session import Session, SessionConfig
from printloop.sim import decode_png, load_scenario

out = Path(tempfile.mkdtemp()) / "underextrusion"
result = Session(SessionConfig("sim:underextrusion", out_dir=out)).run()
report = result.report

# %%
for cp in report["checkpoints"]:
    modes = ", ".join(d["mode"] for d in cp["defects"] or []) or "none"
    print(f"checkpoint {cp['checkpoint']}  layer {cp['layer']:2d}  occupancy {cp['occupancy']:.3f}  defects: {modes}")
    for a in cp["actions"]:
        print("    ", a["command"])

# %% [markdown]
# The uncorrected control: resume at every pause without touching anything.

# %%
printer = load_scenario("underextrusion").build_printer()
control = []
while printer.paused:
    gray, mask, _ = decode_png(printer.snapshot_png("top"))
    control.append(occupancy(gray, mask))
    printer.resume()

corrected = np.array([o for _, o in report["occupancy_series"]])
control = np.array(control)
print("corrected:", corrected.round(3))
print("control:  ", control.round(3))
print("final parameters:", report["final_parameters"])

# %%
try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(corrected, marker="o", label="agents")
    ax.plot(control, marker="s", label="control")
    ax.set_xlabel("checkpoint")
    ax.set_ylabel("occupancy")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "occupancy.png", dpi=120)
    print("chart:", out / "occupancy.png")
except ImportError:
    pass
