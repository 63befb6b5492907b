"""Lowering from partitioning loops to per-device collective programs.

Loops are temporal stand-ins for the mesh: lowering collapses each one so the
body runs once per device on its own chunk. Binder slices become all_slice
(communication-free chunk extraction), sum loops become all_reduce, consensus
loops become plain aliases, and every use of a tile loop's result gathers the
local value at the use site. Per-use gathering is what lets a value live
sharded while distinct consumers pay for their own materialization; pairs that
cancel are cleaned up by the fusion rules afterwards.

Fusion rules, run to fixpoint before chunk-merging and dead-code removal:

  slice of gather, same layout      -> drop both (use the local value)
  slice of reduce, same axes        -> reduce_scatter
  slice of gather, different dims   -> all_to_all
  slice of reduce, disjoint axes    -> commute the slice inward

Localization then strips boundary collectives: an argument consumed only by
one all_slice is stored pre-sharded, a result produced by an all_gather used
only by the return is returned sharded. The resulting layouts form the
ShardingSpec contract with the runner.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .ir import (
    AnyAction,
    Func,
    Module,
    Namer,
    Op,
    Sum,
    TensorType,
    collect_uses,
    find_def,
    replace_uses,
    value_type,
    walk_ops,
)

COUNTED_COLLECTIVES = ("all_gather", "all_reduce", "reduce_scatter", "all_to_all")


@dataclass
class ShardingSpec:
    """Device-local layouts: mesh axes per tensor dim, empty for replicated."""

    args: dict[str, list[list[str]]] = field(default_factory=dict)
    results: list[list[list[str]]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"args": self.args, "results": self.results}

    @staticmethod
    def from_json(d: dict) -> "ShardingSpec":
        return ShardingSpec(dict(d["args"]), list(d["results"]))


def _resolve(aliases: dict[str, str], name: str) -> str:
    while name in aliases:
        name = aliases[name]
    return name


def _eliminate(ops: list[Op], aliases: dict, records: list) -> list[Op]:
    out: list[Op] = []
    for op in ops:
        if op.kind != "loop":
            out.append(op)
            continue
        region = op.regions[0]
        body = _eliminate(region.ops, aliases, records)
        axis = op.attrs["axis"]
        if region.arg is not None:
            for b in body:
                if b.kind == "slice" and b.operands[1] == region.arg:
                    d = b.attrs["dim"]
                    apd = [[axis] if i == d else [] for i in range(b.result_type.rank)]
                    b.kind = "all_slice"
                    b.operands = [b.operands[0]]
                    b.attrs = {"axes_per_dim": apd}
        out.extend(body)
        for ri, (act, y) in enumerate(zip(op.attrs["actions"], region.yields)):
            r, rt = op.results[ri], op.result_types[ri]
            if isinstance(act, Sum):
                out.append(Op("all_reduce", [r], [rt], [_resolve(aliases, y)],
                              {"axes": [axis], "monoid": act.monoid}))
            elif isinstance(act, AnyAction):
                aliases[r] = _resolve(aliases, y)
            else:
                records.append((r, y, act.dim, axis, rt))
    return out


def _insert_gathers(func: Func, records: list, aliases: dict, namer: Namer):
    # Outermost loops first, so a gather created for an outer use is itself a
    # use the inner record then wraps.
    for r, y, d, axis, rt in reversed(records):
        y = _resolve(aliases, y)
        apd = [[axis] if i == d else [] for i in range(rt.rank)]
        for use in collect_uses(func, r):
            g = Op("all_gather", [namer.fresh()], [rt], [y], {"axes_per_dim": apd})
            if use[0] == "op":
                _, uop, j = use
                func.ops.insert(func.ops.index(uop), g)
                uop.operands[j] = g.result
            elif use[0] == "return":
                func.ops.append(g)
                func.results[use[1]] = g.result


def _producers(func: Func) -> dict[str, Op]:
    return {r: op for op in func.ops for r in op.results}


def _flat_axes(apd) -> list[str]:
    return [ax for axes in apd for ax in axes]


def _single_dim(apd):
    """(dim, axes) when exactly one dim is sliced/gathered, else None."""
    hits = [(d, axes) for d, axes in enumerate(apd) if axes]
    return hits[0] if len(hits) == 1 else None


def _fusion_pass(func: Func) -> bool:
    prod = _producers(func)
    for op in func.ops:
        if op.kind != "all_slice":
            continue
        below = prod.get(op.operands[0])
        if below is None:
            continue
        apd = op.attrs["axes_per_dim"]
        if below.kind == "all_gather":
            if below.attrs["axes_per_dim"] == apd:
                replace_uses(func, op.result, below.operands[0])
                func.ops.remove(op)
                return True
            s, g = _single_dim(apd), _single_dim(below.attrs["axes_per_dim"])
            if s and g and s[1] == g[1] and s[0] != g[0]:
                a2a = Op("all_to_all", [op.result], [op.result_type],
                         [below.operands[0]],
                         {"gather_dim": g[0], "slice_dim": s[0], "axes": list(s[1])})
                func.ops[func.ops.index(op)] = a2a
                return True
        if below.kind == "all_reduce" and len(collect_uses(func, below.result)) == 1:
            if set(_flat_axes(apd)) == set(below.attrs["axes"]):
                rs = Op("reduce_scatter", [op.result], [op.result_type],
                        [below.operands[0]],
                        {"axes": below.attrs["axes"], "monoid": below.attrs["monoid"],
                         "axes_per_dim": apd})
                func.ops[func.ops.index(op)] = rs
                func.ops.remove(below)
                return True
            if not set(_flat_axes(apd)) & set(below.attrs["axes"]):
                namer = Namer(func)
                inner = Op("all_slice", [namer.fresh()], [op.result_type],
                           [below.operands[0]], {"axes_per_dim": apd})
                outer = Op("all_reduce", [op.result], [op.result_type],
                           [inner.result], dict(below.attrs))
                at = func.ops.index(op)
                func.ops[at:at + 1] = [inner, outer]
                func.ops.remove(below)
                return True
    return False


def _merge_pass(func: Func) -> bool:
    prod = _producers(func)
    for op in func.ops:
        if op.kind not in ("all_slice", "all_gather"):
            continue
        below = prod.get(op.operands[0])
        if below is None or below.kind != op.kind:
            continue
        a_in, a_out = below.attrs["axes_per_dim"], op.attrs["axes_per_dim"]
        if op.kind == "all_slice":
            merged = [list(i) + list(o) for i, o in zip(a_in, a_out)]
        else:
            merged = [list(o) + list(i) for i, o in zip(a_in, a_out)]
        op.operands = [below.operands[0]]
        op.attrs = {"axes_per_dim": merged}
        return True
    return False


def _dce(func: Func) -> bool:
    changed = False
    while True:
        used: set[str] = set(func.results)
        for op, _ in walk_ops(func):
            used.update(op.operands)
            for r in op.regions:
                used.update(r.yields)
        keep = [op for op in func.ops if any(x in used for x in op.results)]
        if len(keep) == len(func.ops):
            return changed
        func.ops[:] = keep
        changed = True


def fuse_collectives(func: Func):
    while _fusion_pass(func):
        _dce(func)
    while _merge_pass(func):
        pass
    _dce(func)


def lower_to_spmd(module: Module) -> Module:
    """Collapse all partitioning loops into a straight-line collective program."""
    m = module.clone()
    for f in m.funcs:
        # name pool must be taken before elimination: deleted loops leave
        # their result and yield names dangling in the records until gathers
        # are inserted, and none of those may be reissued
        namer = Namer(f)
        aliases: dict[str, str] = {}
        records: list = []
        f.ops = _eliminate(f.ops, aliases, records)
        for r, y in aliases.items():
            replace_uses(f, r, y)
        _insert_gathers(f, records, aliases, namer)
        fuse_collectives(f)
    return m


def localize(module: Module) -> tuple[Module, ShardingSpec]:
    """Strip boundary collectives into storage layouts. Input must be lowered."""
    m = module.clone()
    f = m.func()
    spec = ShardingSpec()
    for i, (name, t) in enumerate(list(f.args)):
        uses = collect_uses(f, name)
        if len(uses) == 1 and uses[0][0] == "op" and uses[0][1].kind == "all_slice":
            sop = uses[0][1]
            f.args[i] = (name, sop.result_type)
            spec.args[name] = sop.attrs["axes_per_dim"]
            f.ops.remove(sop)
            replace_uses(f, sop.result, name)
        else:
            spec.args[name] = [[] for _ in t.dims]
    for j in range(len(f.results)):
        r = f.results[j]
        d = find_def(f, r)
        if d[0] == "arg" or d[0] == "rangearg":
            spec.results.append([[] for _ in f.result_types[j].dims])
            continue
        _, _, op, ri, _ = d
        if op.kind == "all_gather" and all(u[0] == "return"
                                           for u in collect_uses(f, op.result)):
            inner = op.operands[0]
            f.results[j] = inner
            f.result_types[j] = value_type(f, inner)
            spec.results.append(op.attrs["axes_per_dim"])
        else:
            spec.results.append([[] for _ in f.result_types[j].dims])
    _dce(f)
    return m, spec


def collective_counts(module: Module) -> dict[str, int]:
    """Communication op counts; all_slice is free and deliberately absent."""
    counts = {k: 0 for k in COUNTED_COLLECTIVES}
    for f in module.funcs:
        for op, _ in walk_ops(f):
            if op.kind in counts:
                counts[op.kind] += 1
    return counts
