"""
Tiling one tensor and letting the rewrite engine do the rest
============================================================

A partition starts as a single decision: "slice the batch dimension of x
across the B axis of the mesh". Everything downstream of that decision is
mechanical, so the engine does it for you: each consumer of a sliced value
is looked up in the sharding table and rewritten into the same loop form,
until nothing more matches.
"""
import numpy as np

from spindle.interp import interpret, random_inputs
from spindle.ir import Mesh
from spindle.models import build_model
from spindle.printer import print_module
from spindle.rewrite import apply_tile, propagate
from spindle.spmd_interp import relative_error

# two chained matmuls; 256 is the batch dimension we will cut four ways
module = build_model("chain")
module.mesh = Mesh.parse("B:4,M:2")
print("before any rewrite:")
print(print_module(module))

# keep a reference copy: rewrites must never change what is computed
reference = module.clone()
inputs = random_inputs(reference, seed=0)
(want,) = interpret(reference, inputs)

# step 1: tile x along dim 0 over mesh axis B.
# x keeps its name; its uses now go through a slice inside a loop.
f = module.func("main")
apply_tile(f, module.mesh, "x", dim=0, axis="B")
print("after tiling x (the matmul still consumes the whole x):")
print(print_module(module))

# step 2: propagate. The first matmul matches the table row
#   matmul(#tile<0>, _) -> #tile<0>
# so it moves inside the loop; then the second matmul matches the same row
# through the first one's result, and the two loops fuse.
conflicts = propagate(f, module.mesh)
print("after propagation (no conflicts expected: %d reported):" % len(conflicts))
print(print_module(module))

(got,) = interpret(module, inputs)
print("max relative error vs the unpartitioned program:",
      relative_error(got, want))
