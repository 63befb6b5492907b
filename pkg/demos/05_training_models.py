"""
Partitioning whole training steps
=================================

The model zoo's training steps are complete programs: forward pass, loss,
hand-written backward pass, and an SGD-with-momentum update. Partitioning
them reproduces the classic distributed-training recipes, and the
collective counts land exactly where a back-of-the-envelope says they
should.

For an L-hidden-layer mlp there are 2(L+1) parameter tensors, so batch
parallelism pays 2(L+1) gradient all_reduces plus one for the loss. The
ZeRO-style stages then trade all_reduces for reduce_scatters plus
all_gathers of the weight matrices (biases stay replicated: too small to
be worth scattering).
"""
from spindle.interp import interpret, random_inputs
from spindle.ir import Mesh
from spindle.models import build_model
from spindle.schedule import Partitioner, cookbook_schedule
from spindle.spmd import localize, lower_to_spmd
from spindle.spmd_interp import relative_error, spmd_interpret

L = 2
print(f"mlp with {L} hidden layers, {2 * (L + 1)} parameter tensors")
print(f"{'schedule':<10} {'AG':>4} {'AR':>4} {'RS':>4} {'A2A':>4}")
for names in (["bp"], ["bp", "z2"], ["bp", "z3"]):
    module = build_model("mlp", hidden_layers=L)
    module.mesh = Mesh.parse("B:4,M:2")
    p = Partitioner(module)
    for tactic in cookbook_schedule("mlp", names, module):
        p.apply(tactic)
    c = p.costs()[0]
    print(f"{'+'.join(names):<10} {c['all_gather']:>4} {c['all_reduce']:>4} "
          f"{c['reduce_scatter']:>4} {c['all_to_all']:>4}")

# bp:    AR = 2(L+1)+1, one per gradient and one for the loss
# bp+z2: momenta sharded; each weight gradient AR becomes a RS and the
#        updated weight costs one AG
# bp+z3: weights sharded too; a second AG pays for the transposed use in
#        the backward pass

# --- the partitioned step still trains ----------------------------------------

# run the same update on 8 devices (simulated) and on one, compare every
# output: loss, input gradient, new params, new momenta
module = build_model("mlp", hidden_layers=L)
module.mesh = Mesh.parse("B:4,M:2")
reference = module.clone()
p = Partitioner(module)
for tactic in cookbook_schedule("mlp", ["bp", "z3"], module):
    p.apply(tactic)
local, sharding = localize(lower_to_spmd(p.module))

worst = 0.0
for seed in range(5):
    inputs = random_inputs(reference, seed=seed)
    want = interpret(reference, inputs)
    got = spmd_interpret(local, sharding, inputs)
    worst = max(worst, max(relative_error(g, w)
                           for g, w in zip(got, want)))
print("\nbp+z3 vs single-device, 5 random batches, worst relative error:",
      worst)
