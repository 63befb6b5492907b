"""
When propagation cannot decide, and how to tell it what you meant
=================================================================

Propagation is deterministic, so it refuses to guess. Two situations force
a human (or a search) back into the loop:

1. Two values feeding the same op are tiled over the same axis in one
   batch. The op matches two table rows at once; the engine reports a
   conflict instead of picking one.

2. A value and its own transpose meet in one matmul. Tiling rows of x
   tiles columns of x^T, so no single row of the table covers the matmul.
   Tagging the transpose and pinning it replicated (an atomic section)
   resolves it: the engine then gathers the transpose before the matmul.
"""
from spindle.ir import Mesh
from spindle.models import build_model
from spindle.schedule import REPLICATED, ManualPartition, Partitioner
from spindle.spmd import collective_counts, localize, lower_to_spmd

# --- 1. batched vs sequential ------------------------------------------------

module = build_model("chain")
module.mesh = Mesh.parse("B:4,M:2")
p = Partitioner(module)
report = p.apply(ManualPartition("B", {"x": 0, "w1": 1}))
print("batched {x:0@B, w1:1@B}: %d conflict(s)" % len(report.conflicts))
for c in report.conflicts:
    print("  ", c["text"])

# one tactic at a time: x wins the matmul, and w1's later tiling cannot
# enter the loop that already runs over B, so it stays a local reconstruct
# nest. No conflict, nothing ambiguous.
module = build_model("chain")
module.mesh = Mesh.parse("B:4,M:2")
p = Partitioner(module)
r1 = p.apply(ManualPartition("B", {"x": 0}))
r2 = p.apply(ManualPartition("B", {"w1": 1}))
print("sequential: %d then %d conflicts"
      % (len(r1.conflicts), len(r2.conflicts)))

# --- 2. the transpose diagonal -----------------------------------------------

module = build_model("transpose_diag")
module.mesh = Mesh.parse("M:2")
p = Partitioner(module)
report = p.apply(ManualPartition("M", {"x": 0}))
print("\ntranspose_diag, x tiled only: %d conflict(s)" % len(report.conflicts))
for c in report.conflicts:
    print("  ", c["text"])

# resolve by declaring the tagged transpose atomic (kept replicated)
module = build_model("transpose_diag")
module.mesh = Mesh.parse("M:2")
p = Partitioner(module)
report = p.apply(ManualPartition("M", {"tx": REPLICATED, "x": 0}))
print("with atomic tag: %d conflict(s)" % len(report.conflicts))
local, _ = localize(lower_to_spmd(p.module))
print("collectives:", collective_counts(local))
print("(exactly one all_gather, feeding the matmul's second operand)")
