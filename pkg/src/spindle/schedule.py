"""Partitioning sessions: tactics, reports, and the cookbook schedules.

A tactic is one scheduling decision: a ManualPartition names values (by arg
or tag name, fnmatch patterns allowed) and says how each is spread over one
mesh axis; an AutomaticPartition hands the decision to search. Applying a
tactic always ends with one propagation pass, so each report describes a
quiescent program. The Partitioner holds the running module and commits a
tactic only if it succeeds, which is what lets a session survive a rejected
tactic untouched.
"""
from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field

from .ir import Module, value_type, walk_ops
from .printer import print_module
from .rewrite import (
    PartitionError,
    apply_atomic,
    apply_tile,
    can_tile,
    producer_context,
    propagate,
    slicing_context,
    use_blocked,
)
from .sim import BUILTIN_SPECS, CostReport, MachineSpec, simulate, total_flops
from .spmd import collective_counts, localize, lower_to_spmd
from .verify import verify_module

REPLICATED = "replicated"
FIRST_DIVISIBLE_DIM = "first_divisible"


def candidate_values(func) -> list[tuple[str, str]]:
    """Shardable handles: (public name, SSA value). Args first, tags after,
    both in declaration order."""
    out = [(n, n) for n in func.arg_names()]
    for op, _ in walk_ops(func):
        if op.kind == "tag":
            out.append((op.attrs["name"], op.results[0]))
    return out


def first_divisible_dim(func, mesh, value: str, axis: str) -> int:
    t = value_type(func, value)
    for d in range(len(t.dims)):
        if can_tile(func, mesh, value, d, axis) is None:
            return d
    raise PartitionError(
        f"no dim of %{value} {t.render()} is divisible by axis {axis!r}")


@dataclass
class ManualPartition:
    """Spread selected values over one mesh axis.

    shardings maps fnmatch selectors to a dim index, REPLICATED (pin the
    value whole on the axis), or FIRST_DIVISIBLE_DIM. Selectors are tried in
    declaration order per candidate; every selector must match something.
    """

    axis: str
    shardings: dict[str, int | str]

    def describe(self) -> str:
        return f"manual@{self.axis}"

    def run(self, module: Module, func_name: str, origin: str,
            machine: MachineSpec):
        f = module.func(func_name)
        mesh = module.mesh
        actions: list[dict] = []
        matched: set[str] = set()
        for public, value in candidate_values(f):
            for pattern, spec in self.shardings.items():
                if not fnmatch.fnmatchcase(public, pattern):
                    continue
                matched.add(pattern)
                if spec == REPLICATED:
                    apply_atomic(f, mesh, value, self.axis, origin=origin)
                    actions.append({"kind": "atomic", "value": public,
                                    "axis": self.axis})
                else:
                    if spec == FIRST_DIVISIBLE_DIM:
                        dim = first_divisible_dim(f, mesh, value, self.axis)
                    elif isinstance(spec, int):
                        dim = spec
                    else:
                        raise PartitionError(
                            f"bad sharding spec {spec!r} for {pattern!r}")
                    apply_tile(f, mesh, value, dim, self.axis, origin=origin)
                    actions.append({"kind": "tile", "value": public,
                                    "dim": dim, "axis": self.axis})
                break
        unmatched = [p for p in self.shardings if p not in matched]
        if unmatched:
            raise PartitionError(
                f"selector(s) {unmatched} match no argument or tag")
        conflicts = propagate(f, mesh, origin=origin)
        actions.append({"kind": "propagate"})
        return actions, conflicts

    def to_json(self) -> dict:
        return {"kind": "manual", "axis": self.axis,
                "shardings": dict(self.shardings)}


@dataclass
class AutomaticPartition:
    """Let search pick the sharding over the given axes.

    budget caps the number of candidate plans evaluated; the whole space is
    enumerated when it fits, otherwise guided sampling takes over. seed makes
    the sampled path reproducible.
    """

    axes: list[str]
    budget: int = 64
    seed: int = 0

    def describe(self) -> str:
        return f"auto@{','.join(self.axes)}"

    def run(self, module: Module, func_name: str, origin: str,
            machine: MachineSpec):
        from .search import auto_partition

        plan = auto_partition(module, self.axes, budget=self.budget,
                              seed=self.seed, machine=machine,
                              func_name=func_name)
        f = module.func(func_name)
        actions = []
        for kind, value, dim, axis in plan:
            if kind == "atomic":
                apply_atomic(f, module.mesh, value, axis, origin=origin)
                actions.append({"kind": "atomic", "value": value, "axis": axis})
            else:
                apply_tile(f, module.mesh, value, dim, axis, origin=origin)
                actions.append({"kind": "tile", "value": value, "dim": dim,
                                "axis": axis})
        conflicts = propagate(f, module.mesh, origin=origin)
        actions.append({"kind": "propagate"})
        return actions, conflicts

    def to_json(self) -> dict:
        return {"kind": "auto", "axes": list(self.axes),
                "budget": self.budget, "seed": self.seed}


def tactic_from_json(d: dict) -> ManualPartition | AutomaticPartition:
    if not isinstance(d, dict) or "kind" not in d:
        raise ValueError("tactic must be an object with a 'kind' field")
    kind = d["kind"]
    if kind == "manual":
        shardings = d.get("shardings")
        if not isinstance(d.get("axis"), str) or not isinstance(shardings, dict):
            raise ValueError("manual tactic needs 'axis' and 'shardings'")
        norm: dict[str, int | str] = {}
        for pat, spec in shardings.items():
            if isinstance(spec, int) and not isinstance(spec, bool):
                norm[pat] = spec
            elif isinstance(spec, str) and spec.lower() in (REPLICATED,
                                                            FIRST_DIVISIBLE_DIM):
                norm[pat] = spec.lower()
            else:
                raise ValueError(f"bad sharding spec {spec!r} for {pat!r}")
        return ManualPartition(d["axis"], norm)
    if kind == "auto":
        axes = d.get("axes")
        if not isinstance(axes, list) or not all(isinstance(a, str) for a in axes):
            raise ValueError("auto tactic needs a list of axes")
        return AutomaticPartition(axes, int(d.get("budget", 64)),
                                  int(d.get("seed", 0)))
    raise ValueError(f"unknown tactic kind {kind!r}")


@dataclass
class TacticReport:
    label: str
    actions: list[dict]
    conflicts: list[dict]
    counts: dict[str, int]
    cost: dict
    ir_text: str

    def to_json(self) -> dict:
        return {"label": self.label, "actions": self.actions,
                "conflicts": self.conflicts, "counts": self.counts,
                "cost": self.cost, "ir": self.ir_text}


class Partitioner:
    """A stateful partitioning session over one module."""

    def __init__(self, module: Module, machine: MachineSpec | None = None,
                 func_name: str = "main"):
        if module.mesh is None:
            raise PartitionError("module has no mesh")
        verify_module(module)
        self.module = module.clone()
        self.machine = machine or BUILTIN_SPECS["tpu-v3-core"]
        self.func_name = func_name
        self.model_flops = total_flops(self.module, func_name)
        self.base_ir = print_module(self.module)
        self.tactics: list = []     # applied tactics, append-only
        self.reports: list[TacticReport] = []

    def clone(self) -> "Partitioner":
        twin = Partitioner.__new__(Partitioner)
        twin.module = self.module.clone()
        twin.machine = self.machine
        twin.func_name = self.func_name
        twin.model_flops = self.model_flops
        twin.base_ir = self.base_ir
        twin.tactics = list(self.tactics)
        twin.reports = list(self.reports)
        return twin

    def apply(self, tactic) -> TacticReport:
        """Run one tactic; the session advances only if it succeeds."""
        work = self.module.clone()
        label = f"{len(self.reports)}:{tactic.describe()}"
        actions, conflicts = tactic.run(work, self.func_name, label,
                                        self.machine)
        verify_module(work)
        self.module = work
        report = self._report(label, actions, conflicts)
        self.tactics.append(tactic)
        self.reports.append(report)
        return report

    def costs(self) -> tuple[dict, dict]:
        """(collective counts, cost estimate) for the current state."""
        loc, _ = localize(lower_to_spmd(self.module))
        cost = simulate(loc, self.machine, model_flops=self.model_flops,
                        func=self.func_name)
        return collective_counts(loc), cost.to_json()

    def _report(self, label, actions, conflicts) -> TacticReport:
        counts, cost = self.costs()
        return TacticReport(
            label=label, actions=actions,
            conflicts=[{"value": c.value, "axis": c.axis,
                        "options": list(c.options), "text": c.describe()}
                       for c in conflicts],
            counts=counts, cost=cost,
            ir_text=print_module(self.module))

    def shardable(self) -> list[dict]:
        """Current handles with their tiling state and still-legal dims."""
        f = self.module.func(self.func_name)
        mesh = self.module.mesh
        out = []
        for public, value in candidate_values(f):
            t = value_type(f, value)
            ctx = producer_context(f, value)
            # a value tiled after the fact keeps its name; the distribution
            # shows up in how its uses slice it, so merge both views
            tiling = {d: list(axes) for d, axes in ctx.dims.items()}
            for d, axis in slicing_context(f, value):
                tiling.setdefault(d, [])
                if axis not in tiling[d]:
                    tiling[d].append(axis)
            legal = {}
            for axis in mesh.names():
                dims = [d for d in range(len(t.dims))
                        if can_tile(f, mesh, value, d, axis) is None]
                if dims:
                    legal[axis] = dims
            out.append({
                "name": public, "type": t.render(), "dims": list(t.dims),
                "tiling": {str(d): axes for d, axes in sorted(tiling.items())},
                "blocked": sorted(ctx.blocked | use_blocked(f, value)),
                "legal": legal,
            })
        return out

    def export(self) -> dict:
        """Everything a runner needs: programs, layouts, counts, and cost."""
        sp = lower_to_spmd(self.module)
        loc, sharding = localize(sp)
        cost = simulate(loc, self.machine, model_flops=self.model_flops,
                        func=self.func_name)
        return {
            "mesh": self.module.mesh.render(),
            "ir": print_module(self.module),
            "spmd_ir": print_module(sp),
            "local_ir": print_module(loc),
            "sharding": sharding.to_json(),
            "counts": collective_counts(loc),
            "cost": cost.to_json(),
            "reports": [r.to_json() for r in self.reports],
        }


# --- Cookbook ----------------------------------------------------------------

def _mlp_mp(module: Module) -> ManualPartition:
    # Megatron layout: alternate splitting columns and rows so consecutive
    # layers chain a column-split into a row-split with one reduce at the end.
    f = module.func("main")
    weights = [n for n in f.arg_names() if n.startswith("w")]
    return ManualPartition("M", {w: 1 if i % 2 == 0 else 0
                                 for i, w in enumerate(weights)})


_COOKBOOK = {
    "chain": {
        "bp": lambda m: ManualPartition("B", {"x": 0}),
        "mp": lambda m: ManualPartition("M", {"w1": 1}),
        "z3": lambda m: ManualPartition("B", {"w1": 0, "w2": 1}),
    },
    "mlp": {
        "bp": lambda m: ManualPartition("B", {"x": 0}),
        "mp": _mlp_mp,
        "es": lambda m: ManualPartition("M", {"x": 1}),
        "z2": lambda m: ManualPartition("B", {
            "mw*": FIRST_DIVISIBLE_DIM, "w*": REPLICATED,
            "b*": REPLICATED, "mb*": REPLICATED}),
        "z3": lambda m: ManualPartition("B", {
            "w*": FIRST_DIVISIBLE_DIM, "mw*": FIRST_DIVISIBLE_DIM,
            "b*": REPLICATED, "mb*": REPLICATED}),
    },
    "transformer": {
        "bp": lambda m: ManualPartition("B", {"x": 0}),
        "mp": lambda m: ManualPartition("M", {"*_up": 1, "*_down": 0}),
        "z2": lambda m: ManualPartition("B", {
            "m_blk*": FIRST_DIVISIBLE_DIM, "blk*": REPLICATED}),
        "z3": lambda m: ManualPartition("B", {
            "blk*": FIRST_DIVISIBLE_DIM, "m_blk*": FIRST_DIVISIBLE_DIM}),
    },
    "transpose_diag": {
        "tp": lambda m: ManualPartition("M", {"tx": REPLICATED, "x": 0}),
        "tp_unresolved": lambda m: ManualPartition("M", {"x": 0}),
    },
}


def cookbook_schedule(model: str, names: list[str],
                      module: Module) -> list[ManualPartition]:
    """Resolve schedule-stage names (e.g. ["bp", "mp", "z3"]) for a model."""
    book = _COOKBOOK.get(model)
    if book is None:
        raise ValueError(f"no cookbook schedules for model {model!r}; "
                         f"models with schedules: {sorted(_COOKBOOK)}")
    out = []
    for name in names:
        if name not in book:
            raise ValueError(f"unknown schedule stage {name!r} for {model!r}; "
                             f"available: {sorted(book)}")
        out.append(book[name](module))
    return out


def schedule_stages(model: str) -> list[str]:
    return sorted(_COOKBOOK.get(model, {}))
