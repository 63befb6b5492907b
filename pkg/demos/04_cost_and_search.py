"""
Costing schedules and letting search pick one
=============================================

Every tactic gets a cost report from an analytic machine model: per-device
flops, ring-collective bytes, peak live memory, and an estimated runtime.
The absolute numbers are only as good as the spec constants; the *relative*
numbers are what schedules are judged by, and a small exhaustive search can
do that judging automatically.
"""
from spindle.ir import Mesh
from spindle.models import build_model
from spindle.schedule import AutomaticPartition, Partitioner, cookbook_schedule
from spindle.sim import BUILTIN_SPECS

machine = BUILTIN_SPECS["tpu-v3-core"]

# --- manual schedules side by side -------------------------------------------

print(f"{'schedule':<14} {'runtime':>12} {'peak bytes':>12} "
      f"{'flops/device':>14} {'comm bytes':>12}")
for names in (["bp"], ["bp", "mp"], ["bp", "mp", "z3"]):
    module = build_model("chain")
    module.mesh = Mesh.parse("B:4,M:2")
    p = Partitioner(module, machine=machine)
    for tactic in cookbook_schedule("chain", names, module):
        p.apply(tactic)
    counts, cost = p.costs()
    print(f"{'+'.join(names):<14} {cost['runtime_s']:>12.3e} "
          f"{cost['peak_memory_bytes']:>12,} {cost['compute_flops']:>14,.0f} "
          f"{cost['comm_bytes']:>12,.0f}")

# batch parallelism divides compute exactly by the axis size and moves no
# bytes; z3 trades two all_gathers for a lower memory peak.

# --- automatic partitioning --------------------------------------------------

# the auto tactic enumerates (value, dim) tilings per axis, scores each
# full plan with the same simulator, and applies the best one it found
module = build_model("chain")
module.mesh = Mesh.parse("B:4,M:2")
p = Partitioner(module, machine=machine)
report = p.apply(AutomaticPartition(axes=["B", "M"], budget=200))
print("\nsearch picked:")
for action in report.actions:
    print("  ", action)
counts, cost = p.costs()
print("searched schedule runtime: %.3e s  (collectives: %s)"
      % (cost["runtime_s"], counts))
