# %% [markdown]
# Wrench with a z disturbance before layer 9
#
# Layer 9 shows three problems at once. This walks through what each agent
# produced at that checkpoint: the report, the gathered state, the plan,
# and the verified parameter changes.

# %%
import json
import tempfile
from pathlib import Path

from printloop.session import Session, SessionConfig

out = Path(tempfile.mkdtemp()) / "wrench"
result = Session(SessionConfig("sim:wrench_fig5", out_dir=out)).run()
cp = result.state.checkpoints[0]

# %%
print("layer", cp.layer_index)
for f in cp.report.failures:
    print(f"  {f.mode.value:24s} {f.severity.value:6s} {f.evidence}")

# %%
print("information gathered:")
for obj, fields in sorted(cp.gathered_info.items()):
    print(f"  {obj}: {fields}")

# %%
print("solution plan:")
for step in cp.solution_plan.steps:
    print(f"  {step.intent:6s} {step.target}")
print()
for c in cp.parameter_changes():
    print(f"  {c['param']:18s} {c['from']} -> {c['to']}")
print("commentary:", cp.commentary)

# %% [markdown]
# Every step is in the JSON Lines log.

# %%
with open(out / "session.jsonl") as fh:
    records = [json.loads(line) for line in fh]
kinds = {}
for r in records:
    kinds[r["kind"]] = kinds.get(r["kind"], 0) + 1
print(kinds)
