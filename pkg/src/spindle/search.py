"""Automatic sharding search.

A plan assigns each (value, axis) slot one choice: leave it alone, pin it
whole, or tile one of its divisible dims. Slots are the function arguments
and tagged values crossed with the searched axes, in declaration order, so
plan encodings are stable across runs. Plans are scored by simulated runtime
plus a penalty for blowing past device memory; a plan that fails to apply or
leaves conflicts scores infinite.

Small spaces are enumerated outright. Larger ones are sampled with a UCT
tree search over the slot sequence; every full evaluation counts against the
budget and the best plan ever seen wins, so extra exploration can only help.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .ir import Module, value_type
from .rewrite import PartitionError, apply_atomic, apply_tile, propagate
from .sim import BUILTIN_SPECS, MachineSpec, simulate, total_flops
from .schedule import candidate_values
from .spmd import localize, lower_to_spmd

# a plan step: ("tile", value, dim, axis) or ("atomic", value, None, axis)
Step = tuple[str, str, int | None, str]

KEEP = None


def plan_slots(module: Module, axes: list[str],
               func_name: str = "main") -> list[tuple[str, str, list[Step]]]:
    """Per (value, axis): the decisions worth trying there."""
    f = module.func(func_name)
    mesh = module.mesh
    slots = []
    for public, value in candidate_values(f):
        t = value_type(f, value)
        for axis in axes:
            choices: list[Step] = [KEEP]
            size = mesh.size(axis)
            for d, n in enumerate(t.dims):
                if n % size == 0:
                    choices.append(("tile", value, d, axis))
            choices.append(("atomic", value, None, axis))
            slots.append((public, axis, choices))
    return slots


def plan_objective(module: Module, plan: list[Step], machine: MachineSpec,
                   model_flops: float, func_name: str = "main") -> float:
    """Simulated runtime, memory-penalized; inf for broken plans."""
    work = module.clone()
    f = work.func(func_name)
    try:
        for step in plan:
            if step is KEEP:
                continue
            kind, value, dim, axis = step
            if kind == "atomic":
                apply_atomic(f, work.mesh, value, axis, origin="auto")
            else:
                apply_tile(f, work.mesh, value, dim, axis, origin="auto")
        conflicts = propagate(f, work.mesh, origin="auto")
    except PartitionError:
        return math.inf
    if conflicts:
        return math.inf
    loc, _ = localize(lower_to_spmd(work))
    report = simulate(loc, machine, model_flops=model_flops, func=func_name)
    over = max(0.0, report.peak_memory_bytes - machine.hbm_bytes)
    return report.runtime_s + over / machine.link_bandwidth


def _space_size(slots) -> int:
    n = 1
    for _, _, choices in slots:
        n *= len(choices)
        if n > 1 << 24:
            break
    return n


@dataclass
class _Node:
    visits: int = 0
    total: float = 0.0

    def value(self) -> float:
        return self.total / self.visits if self.visits else 0.0


def auto_partition(module: Module, axes: list[str], budget: int = 64,
                   seed: int = 0, machine: MachineSpec | None = None,
                   func_name: str = "main") -> list[Step]:
    """Best plan found within budget evaluations. budget <= 1 keeps the
    module as-is (the empty plan)."""
    machine = machine or BUILTIN_SPECS["tpu-v3-core"]
    model_flops = total_flops(module, func_name)
    slots = plan_slots(module, axes, func_name)
    if budget <= 1 or not slots:
        return []

    def score(plan) -> float:
        return plan_objective(module, plan, machine, model_flops, func_name)

    best_plan, best_obj = [], score([])
    evals = 1

    if _space_size(slots) <= budget:
        def rec(i, prefix):
            nonlocal best_plan, best_obj
            if i == len(slots):
                obj = score(prefix)
                if obj < best_obj:
                    best_plan, best_obj = [s for s in prefix if s is not KEEP], obj
                return
            for c in slots[i][2]:
                rec(i + 1, prefix + [c])
        rec(0, [])
        return best_plan

    # UCT over the slot sequence; rollouts complete a prefix at random
    rng = random.Random(seed)
    baseline = best_obj if math.isfinite(best_obj) else 1.0
    tree: dict[tuple, _Node] = {(): _Node()}
    while evals < budget:
        prefix: list[Step] = []
        key = ()
        # selection and expansion
        while len(prefix) < len(slots):
            choices = slots[len(prefix)][2]
            children = [key + (ci,) for ci in range(len(choices))]
            fresh = [k for k in children if k not in tree]
            if fresh:
                key = rng.choice(fresh)
                tree[key] = _Node()
                prefix.append(choices[key[-1]])
                break
            parent = tree[key]
            key = max(children, key=lambda k: tree[k].value()
                      + math.sqrt(2 * math.log(parent.visits + 1)
                                  / (tree[k].visits + 1)))
            prefix.append(choices[key[-1]])
        # rollout
        plan = list(prefix)
        for i in range(len(prefix), len(slots)):
            plan.append(rng.choice(slots[i][2]))
        obj = score(plan)
        evals += 1
        if obj < best_obj:
            best_plan, best_obj = [s for s in plan if s is not KEEP], obj
        # backpropagate along the tree path
        reward = 0.0 if not math.isfinite(obj) else baseline / max(obj, 1e-30)
        for i in range(len(key) + 1):
            node = tree.get(key[:i])
            if node is not None:
                node.visits += 1
                node.total += reward
    return best_plan
