"""
From loops to collectives to per-device programs
================================================

The loop form says *what* is distributed; it still runs on one machine.
Lowering replaces each distribution loop with collective ops (all_gather,
all_reduce, ...), fusion cancels or cheapens adjacent collectives, and
localization shrinks the function signature to per-device shard shapes.

The three classic schedules of the matmul chain land on the three classic
communication patterns: batch parallelism needs no communication at all,
model parallelism pays one all_reduce, and fully sharding the weights adds
one all_gather per weight.
"""
from spindle.ir import Mesh
from spindle.models import build_model
from spindle.printer import print_module
from spindle.schedule import Partitioner, cookbook_schedule
from spindle.spmd import collective_counts, localize, lower_to_spmd

for names in (["bp"], ["bp", "mp"], ["bp", "mp", "z3"]):
    module = build_model("chain")
    module.mesh = Mesh.parse("B:4,M:2")
    p = Partitioner(module)
    for tactic in cookbook_schedule("chain", names, module):
        p.apply(tactic)

    spmd = lower_to_spmd(p.module)
    local, sharding = localize(spmd)

    print("=" * 60)
    print("schedule:", " + ".join(names))
    print("collectives:", collective_counts(local))
    # the per-device view: x enters as tensor<64x8xf32>, a quarter of the
    # global batch, and under z3 the weights enter sharded too
    print(print_module(local))
    print("argument layouts:", sharding.to_json()["args"])
