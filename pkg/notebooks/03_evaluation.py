# %% [markdown]
# Detections against expert annotations
#
# The bundled tables cover layers 9 to 14 of the wrench. The model column
# calls blobs "stringing" on two layers, which shows up as stringing false
# positives and missed blobs.

# %%
from pathlib import Path

import printloop
from printloop.metrics import compare_detections, detections_from_log, parameter_trajectory, read_annotations, read_log

data = Path(printloop.__file__).parent / "data"
sets = read_annotations(data / "annotations" / "wrench_fig5_expert.tsv")
truth = sets["expert_a"]
model = read_annotations(data / "annotations" / "wrench_fig5_detections.tsv")["llm"]

# %%
def show(cm):
    for r in cm.rows():
        if r["tp"] or r["fp"] or r["fn"]:
            p = "-" if r["precision"] is None else f"{r['precision']:.2f}"
            rc = "-" if r["recall"] is None else f"{r['recall']:.2f}"
            print(f"  {r['mode']:24s} tp={r['tp']} fp={r['fp']} fn={r['fn']} tn={r['tn']}  P={p} R={rc}")


print("model table vs expert")
show(compare_detections(model, truth))

# %% [markdown]
# The oracle-driven replay log is more conservative: no conflation, but it
# misses the small blobs entirely.

# %%
records = read_log(data / "replays" / "wrench_fig5.jsonl")
print("replay log vs expert")
show(compare_detections(detections_from_log(records), truth))

# %%
for name, points in parameter_trajectory(records).items():
    print(f"{name:18s}", " -> ".join(f"{v:g}" for _, v in points))
