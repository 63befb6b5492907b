"""Partitioning rewrites on the loop dialect.

Three entry points, mirroring the tactic vocabulary:

  apply_tile    re-tile a value over a mesh axis along one dimension, as an
                identity loop-of-slices nest (existing sliced uses stay outer,
                the new axis goes innermost).
  apply_atomic  pin a value whole on an axis via a binder-less consensus loop.
  propagate     push seeded tilings through ops to fixpoint using the tiling
                registry, inferring missing operand tilings when unambiguous,
                then fuse producer/consumer loops and report conflicts.

Tiling state is never stored on values; it is recomputed from loop structure
(`producer_context`) and from slicing uses (`slicing_context`) on demand.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .ir import (
    AnyAction,
    Func,
    Mesh,
    Namer,
    Op,
    Region,
    Sum,
    TensorType,
    Tile,
    collect_uses,
    find_def,
    infer_result_types,
    replace_uses,
    value_type,
    walk_ops,
)
from .tmr import applicable, classify, entries_for


class PartitionError(Exception):
    """A tactic cannot be applied: axis reuse, divisibility, bad target."""


@dataclass
class TilingContext:
    """How a value is tiled: dim -> mesh axes (outermost first), plus axes on
    which the value is pinned whole by a consensus loop."""

    dims: dict[int, list[str]] = field(default_factory=dict)
    blocked: set[str] = field(default_factory=set)

    def axes(self) -> set[str]:
        out = set(self.blocked)
        for lst in self.dims.values():
            out.update(lst)
        return out

    def dim_of(self, axis: str) -> int | None:
        for d, lst in self.dims.items():
            if axis in lst:
                return d
        return None


@dataclass
class Conflict:
    value: str
    axis: str
    options: list[str]

    def describe(self) -> str:
        return f"%{self.value} on {self.axis!r}: " + " vs ".join(self.options)


def binder_axes(func: Func) -> dict[str, str]:
    """Map each loop binder name to its loop's mesh axis."""
    out = {}
    for op, _ in walk_ops(func):
        if op.kind == "loop" and op.regions[0].arg is not None:
            out[op.regions[0].arg] = op.attrs["axis"]
    return out


def producer_context(func: Func, name: str, _binders: dict | None = None) -> TilingContext:
    """Tiling a value carries from its producing loop structure."""
    binders = _binders if _binders is not None else binder_axes(func)
    d = find_def(func, name)
    if d[0] == "arg":
        return TilingContext()
    if d[0] == "rangearg":
        raise PartitionError(f"%{name} is a range value")
    _, _, op, ri, _ = d
    if op.kind == "loop":
        region = op.regions[0]
        act = op.attrs["actions"][ri]
        inner = producer_context(func, region.yields[ri], binders)
        if isinstance(act, Tile):
            dims = {k: list(v) for k, v in inner.dims.items()}
            dims[act.dim] = [op.attrs["axis"]] + dims.get(act.dim, [])
            return TilingContext(dims, set(inner.blocked))
        if isinstance(act, Sum):
            return inner
        return TilingContext({k: list(v) for k, v in inner.dims.items()},
                             inner.blocked | {op.attrs["axis"]})
    if op.kind == "slice":
        inner = producer_context(func, op.operands[0], binders)
        ax = binders.get(op.operands[1])
        d0 = op.attrs["dim"]
        dims = {k: list(v) for k, v in inner.dims.items()}
        lst = dims.get(d0, [])
        dims[d0] = lst[1:] if (lst and lst[0] == ax) else []
        return TilingContext({k: v for k, v in dims.items() if v}, set(inner.blocked))
    return TilingContext()


def use_blocked(func: Func, name: str) -> set[str]:
    """Axes on which a value is pinned by being yielded from a consensus loop."""
    out = set()
    for use in collect_uses(func, name):
        if use[0] == "yield":
            _, lop, region, j = use
            if isinstance(lop.attrs["actions"][j], AnyAction):
                out.add(lop.attrs["axis"])
    return out


def slicing_context(func: Func, name: str, _binders: dict | None = None) -> list[tuple[int, str]]:
    """(dim, axis) pairs over which uses of a value slice it, outermost first,
    following chains of slices; deduplicated in first-encountered order."""
    binders = _binders if _binders is not None else binder_axes(func)
    out: list[tuple[int, str]] = []

    def rec(v: str):
        for use in collect_uses(func, v):
            if use[0] == "op" and use[1].kind == "slice" and use[2] == 0:
                sop = use[1]
                ax = binders.get(sop.operands[1])
                if ax is None:
                    continue
                pair = (sop.attrs["dim"], ax)
                if pair not in out:
                    out.append(pair)
                rec(sop.result)

    rec(name)
    return out


def _producer_site(func: Func, name: str):
    """(ops_list, insert_index) for new ops defining a retiling of `name`."""
    d = find_def(func, name)
    if d[0] == "arg":
        return func.ops, 0
    if d[0] == "rangearg":
        raise PartitionError(f"%{name} is a range value")
    ops, i, _, _, _ = d
    return ops, i + 1


def can_tile(func: Func, mesh: Mesh, name: str, dim: int, axis: str) -> str | None:
    """None if tiling is legal, else the reason it is not."""
    if not mesh.has(axis):
        return f"no mesh axis named {axis!r}"
    try:
        t = value_type(func, name)
    except KeyError:
        return f"no value named %{name}"
    except TypeError:
        return f"%{name} is a range value"
    if not (0 <= dim < t.rank):
        return f"dim {dim} out of range for {t.render()}"
    binders = binder_axes(func)
    ctx = producer_context(func, name, binders)
    if axis in ctx.axes() or axis in use_blocked(func, name):
        return f"axis {axis!r} already used on %{name}"
    existing = slicing_context(func, name, binders)
    if any(ax == axis for _, ax in existing):
        return f"axis {axis!r} already used on %{name}"
    chunk = t.dims[dim]
    for d, ax in existing:
        if d == dim:
            chunk //= mesh.size(ax)
    if chunk % mesh.size(axis) != 0:
        return (f"dim {dim} of %{name} has {chunk} rows per chunk, "
                f"not divisible by axis {axis!r} size {mesh.size(axis)}")
    return None


def apply_tile(func: Func, mesh: Mesh, name: str, dim: int, axis: str,
               origin: str = "manual"):
    """Re-tile a value: wrap it in an identity nest of tile loops and redirect
    all uses to the nest result. Pre-existing sliced uses keep their axes as
    the outer loops; the new axis is innermost."""
    reason = can_tile(func, mesh, name, dim, axis)
    if reason:
        raise PartitionError(reason)
    t = value_type(func, name)
    binders = binder_axes(func)
    pairs = slicing_context(func, name, binders) + [(dim, axis)]
    namer = Namer(func)
    binder_names = [namer.fresh() for _ in pairs]

    slices: list[Op] = []
    cur, curt = name, t
    for (d, ax), b in zip(pairs, binder_names):
        k = mesh.size(ax)
        nd = list(curt.dims)
        nd[d] //= k
        st = TensorType(tuple(nd), curt.elem)
        sop = Op("slice", [namer.fresh()], [st], [cur, b], {"dim": d})
        slices.append(sop)
        cur, curt = sop.result, st

    inner_ops: list[Op] = slices
    inner_yield, ytype = cur, curt
    loop = None
    for (d, ax), b in reversed(list(zip(pairs, binder_names))):
        k = mesh.size(ax)
        nd = list(ytype.dims)
        nd[d] *= k
        rt = TensorType(tuple(nd), ytype.elem)
        loop = Op("loop", [namer.fresh()], [rt], [],
                  {"axis": ax, "actions": [Tile(d)], "origin": origin},
                  [Region(inner_ops, [inner_yield], b, k)])
        inner_ops, inner_yield, ytype = [loop], loop.result, rt

    ops, at = _producer_site(func, name)
    ops.insert(at, loop)
    replace_uses(func, name, loop.result, skip_ops={id(s) for s in slices})


def apply_atomic(func: Func, mesh: Mesh, name: str, axis: str,
                 origin: str = "manual"):
    """Pin a value whole on an axis: binder-less consensus loop around it."""
    if not mesh.has(axis):
        raise PartitionError(f"no mesh axis named {axis!r}")
    try:
        t = value_type(func, name)
    except KeyError:
        raise PartitionError(f"no value named %{name}")
    except TypeError:
        raise PartitionError(f"%{name} is a range value")
    binders = binder_axes(func)
    ctx = producer_context(func, name, binders)
    used = ctx.axes() | use_blocked(func, name)
    used.update(ax for _, ax in slicing_context(func, name, binders))
    if axis in used:
        raise PartitionError(f"axis {axis!r} already used on %{name}")
    namer = Namer(func)
    loop = Op("loop", [namer.fresh()], [t], [],
              {"axis": axis, "actions": [AnyAction()], "origin": origin},
              [Region([], [name], None, None)])
    ops, at = _producer_site(func, name)
    ops.insert(at, loop)
    replace_uses(func, name, loop.result, skip_ops={id(loop)})


# --- Propagation -------------------------------------------------------------

_REGISTRY_KINDS = ("matmul", "add", "mul", "neg", "exp", "tag",
                   "transpose", "reduce", "reshape", "broadcast")


def _walk_sites(ops: list[Op], axes: tuple[str, ...] = ()):
    """(ops_list, index, op, enclosing_axes) over all ops, pre-order."""
    for i, op in enumerate(ops):
        yield ops, i, op, axes
        for region in op.regions:
            inner = axes + ((op.attrs["axis"],) if op.kind == "loop" else ())
            yield from _walk_sites(region.ops, inner)


def _result_demand(func: Func, op: Op, axis: str, binders: dict) -> Tile | None:
    """Tile(d) if uses slice the result along d with this axis's binder."""
    demands = set()
    for use in collect_uses(func, op.result):
        if use[0] == "op" and use[1].kind == "slice" and use[2] == 0:
            if binders.get(use[1].operands[1]) == axis:
                demands.add(use[1].attrs["dim"])
    if len(demands) == 1:
        return Tile(demands.pop())
    return None


def _match_site(func: Func, mesh: Mesh, op: Op, axis: str, binders: dict):
    """Classify an op's registry entries against its context on one axis."""
    operand_types = [value_type(func, o) for o in op.operands]
    entries = entries_for(op, operand_types)
    if not entries:
        return None
    k = mesh.size(axis)
    entries = [e for e in entries
               if applicable(e, operand_types, op.result_type, k)]
    octx = []
    for o in op.operands:
        d = producer_context(func, o, binders).dim_of(axis)
        octx.append(Tile(d) if d is not None else None)
    rctx = _result_demand(func, op, axis, binders)
    fulls, partials = classify(entries, octx, rctx)
    return operand_types, fulls, partials


def _rewrite_site(func: Func, mesh: Mesh, ops: list[Op], idx: int, op: Op,
                  entry, axis: str, origin: str):
    """Wrap an op in a partitioning loop per a registry entry."""
    k = mesh.size(axis)
    namer = Namer(func)
    binder = namer.fresh()
    body: list[Op] = []
    new_operands = list(op.operands)
    sliced_types = []
    for i, o in enumerate(op.operands):
        t = value_type(func, o)
        req = entry.operands[i]
        if isinstance(req, Tile):
            nd = list(t.dims)
            nd[req.dim] //= k
            st = TensorType(tuple(nd), t.elem)
            sop = Op("slice", [namer.fresh()], [st], [o, binder], {"dim": req.dim})
            body.append(sop)
            new_operands[i] = sop.result
            sliced_types.append(st)
        else:
            sliced_types.append(t)
    attrs = dict(op.attrs)
    if op.kind == "reshape" and isinstance(entry.result, Tile):
        dims = list(attrs["dims"])
        dims[entry.result.dim] //= k
        attrs["dims"] = dims
    if op.kind == "broadcast" and isinstance(entry.result, Tile):
        shape = list(attrs["shape"])
        shape[entry.result.dim] //= k
        attrs["shape"] = shape
    inner_types = infer_result_types(op.kind, sliced_types, attrs, mesh=mesh)
    inner = Op(op.kind, [namer.fresh()], inner_types, new_operands, attrs)
    body.append(inner)
    loop = Op("loop", list(op.results), list(op.result_types), [],
              {"axis": axis, "actions": [entry.result], "origin": origin},
              [Region(body, [inner.result], binder, k)])
    ops[idx] = loop


def _completable(func: Func, mesh: Mesh, op: Op, match, axis: str) -> bool:
    for i in match.missing:
        req = match.entry.operands[i]
        if can_tile(func, mesh, op.operands[i], req.dim, axis) is not None:
            return False
    return True


def _propagate_once(func: Func, mesh: Mesh, origin: str) -> bool:
    binders = binder_axes(func)
    for ops, idx, op, enclosing in _walk_sites(func.ops):
        if op.kind not in _REGISTRY_KINDS:
            continue
        blocked_axes = use_blocked(func, op.result)
        for axis in mesh.names():
            if axis in enclosing or axis in blocked_axes:
                continue
            site = _match_site(func, mesh, op, axis, binders)
            if site is None:
                break
            _, fulls, partials = site
            if len(fulls) == 1:
                _rewrite_site(func, mesh, ops, idx, op, fulls[0], axis, origin)
                return True
            if fulls:
                continue  # ambiguous: left for the conflict scan
            completable = [m for m in partials if _completable(func, mesh, op, m, axis)]
            if len(completable) == 1:
                m = completable[0]
                for i in m.missing:
                    apply_tile(func, mesh, op.operands[i],
                               m.entry.operands[i].dim, axis, origin)
                return True
    return False


def _fuse_once(func: Func, mesh: Mesh) -> bool:
    binders = binder_axes(func)
    loops: dict[str, tuple[Op, tuple[str, ...]]] = {}
    for op, axes in walk_ops(func):
        if op.kind == "loop" and op.regions[0].arg is not None:
            loops[op.regions[0].arg] = (op, axes)
    for p_ops, p_idx, prod, _ in _walk_sites(func.ops):
        if prod.kind != "loop" or len(prod.results) != 1:
            continue
        actions = prod.attrs["actions"]
        if len(actions) != 1 or not isinstance(actions[0], Tile):
            continue
        uses = collect_uses(func, prod.result)
        if len(uses) != 1 or uses[0][0] != "op":
            continue
        sop = uses[0][1]
        if sop.kind != "slice" or sop.operands[0] != prod.result:
            continue
        if sop.attrs["dim"] != actions[0].dim:
            continue
        hit = loops.get(sop.operands[1])
        if hit is None:
            continue
        consumer, c_axes = hit
        if consumer.attrs["axis"] != prod.attrs["axis"]:
            continue
        if sop not in consumer.regions[0].ops:
            continue  # only fuse into the consuming loop's own body
        # A loop inside the producer body must not land inside a loop on the
        # same axis after inlining.
        illegal = set(c_axes) | {consumer.attrs["axis"]}
        if any(inner.kind == "loop" and inner.attrs["axis"] in illegal
               for inner, _ in _walk_region(prod.regions[0])):
            continue
        body = prod.regions[0].ops
        old_binder, new_binder = prod.regions[0].arg, consumer.regions[0].arg
        for bop, _ in _walk_region_ops(body):
            bop.operands = [new_binder if o == old_binder else o for o in bop.operands]
        c_body = consumer.regions[0].ops
        at = c_body.index(sop)
        c_body[at:at + 1] = body
        replace_uses(func, sop.result, prod.regions[0].yields[0])
        del p_ops[p_idx]
        return True
    return False


def _walk_region(region: Region):
    yield from _walk_region_ops(region.ops)


def _walk_region_ops(ops: list[Op]):
    for op in ops:
        yield op, None
        for r in op.regions:
            yield from _walk_region_ops(r.ops)


def conflict_scan(func: Func, mesh: Mesh) -> list[Conflict]:
    binders = binder_axes(func)
    out = []
    for _, _, op, enclosing in _walk_sites(func.ops):
        if op.kind not in _REGISTRY_KINDS:
            continue
        blocked_axes = use_blocked(func, op.result)
        for axis in mesh.names():
            if axis in enclosing or axis in blocked_axes:
                continue
            site = _match_site(func, mesh, op, axis, binders)
            if site is None:
                break
            _, fulls, _ = site
            if len(fulls) >= 2:
                out.append(Conflict(op.result, axis,
                                    [e.describe(op.kind) for e in fulls]))
    return out


def propagate(func: Func, mesh: Mesh, origin: str = "propagate") -> list[Conflict]:
    """Drive seeded tilings to fixpoint, fuse loops, and report what stayed
    ambiguous. Rewrites restart the walk so contexts are never stale."""
    while _propagate_once(func, mesh, origin):
        pass
    while _fuse_once(func, mesh):
        pass
    return conflict_scan(func, mesh)
