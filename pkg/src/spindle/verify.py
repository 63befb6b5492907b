"""Structural and type verification for modules built or rewritten in memory.

The parser already enforces these rules for textual input; rewrite passes and
builders go through here. Verification covers SSA scoping, per-op shape rules,
loop/mesh consistency (binder sizes, no self-nesting of a mesh axis), the
consensus restriction on any-loops, and selector-name uniqueness for tags.
"""
from __future__ import annotations

from .ir import AnyAction, Func, Mesh, Module, Op, Region, ShapeError, infer_result_types


class VerifyError(Exception):
    pass


def _fail(msg: str):
    raise VerifyError(msg)


class _Scope:
    def __init__(self, parent=None):
        self.parent = parent
        self.entries: dict[str, tuple] = {}

    def define(self, name: str, entry: tuple):
        if self.lookup(name) is not None:
            _fail(f"redefinition of %{name}")
        self.entries[name] = entry

    def lookup(self, name: str):
        s = self
        while s is not None:
            if name in s.entries:
                return s.entries[name]
            s = s.parent
        return None


def _binder_dependent(region: Region) -> set[str]:
    """Names in a loop body whose value can vary with the loop's range binder."""
    if region.arg is None:
        return set()
    dep = {region.arg}

    def uses_dep(op: Op) -> bool:
        if any(o in dep for o in op.operands):
            return True
        for r in op.regions:
            if any(y in dep for y in r.yields):
                return True
            if any(uses_dep(inner) for inner in r.ops):
                return True
        return False

    for op in region.ops:
        if uses_dep(op):
            dep.update(op.results)
    return dep


def _verify_ops(ops: list[Op], scope: _Scope, mesh: Mesh | None,
                enclosing_axes: tuple[str, ...], tags: dict[str, str]):
    for op in ops:
        if len(op.results) != len(op.result_types):
            _fail(f"{op.kind} declares {len(op.results)} results, {len(op.result_types)} types")
        if op.kind == "loop":
            _verify_loop(op, scope, mesh, enclosing_axes, tags)
            continue
        if op.regions:
            _fail(f"{op.kind} must not carry a region")
        tys = []
        attrs = dict(op.attrs)
        for i, o in enumerate(op.operands):
            got = scope.lookup(o)
            if got is None:
                _fail(f"use of undefined value %{o} in {op.kind}")
            if got[0] == "range":
                if not (op.kind == "slice" and i == 1):
                    _fail(f"range value %{o} used as tensor in {op.kind}")
                attrs["_range_size"] = got[1]
            else:
                tys.append(got[1])
        if op.kind == "slice":
            if len(op.operands) != 2 or "_range_size" not in attrs:
                _fail("slice needs a tensor operand and a range index")
        try:
            inferred = infer_result_types(op.kind, tys, attrs, mesh=mesh)
        except ShapeError as e:
            _fail(f"{op.kind}: {e}")
        if inferred != op.result_types:
            _fail(f"{op.kind} declares {[t.render() for t in op.result_types]}, "
                  f"shape rules give {[t.render() for t in inferred]}")
        if op.kind == "tag":
            name = op.attrs["name"]
            if name in tags:
                _fail(f"duplicate tag name {name!r}")
            tags[name] = op.result
        for r, t in zip(op.results, op.result_types):
            scope.define(r, ("tensor", t))


def _verify_loop(op: Op, scope: _Scope, mesh: Mesh | None,
                 enclosing_axes: tuple[str, ...], tags: dict[str, str]):
    if len(op.regions) != 1:
        _fail("loop must have exactly one region")
    if op.operands:
        _fail("loop takes no direct operands")
    axis = op.attrs.get("axis")
    actions = op.attrs.get("actions", [])
    if mesh is None or not mesh.has(axis):
        _fail(f"loop axis {axis!r} not in mesh")
    if axis in enclosing_axes:
        _fail(f"mesh axis {axis!r} nested inside itself")
    region = op.regions[0]
    if region.arg is not None and region.arg_size != mesh.size(axis):
        _fail(f"loop binder range<{region.arg_size}> does not match axis {axis!r} "
              f"size {mesh.size(axis)}")
    if not region.yields:
        _fail("loop must yield at least one value")
    if len(actions) != len(region.yields):
        _fail(f"loop has {len(actions)} actions for {len(region.yields)} yields")
    inner = _Scope(scope)
    if region.arg is not None:
        inner.define(region.arg, ("range", region.arg_size))
    _verify_ops(region.ops, inner, mesh, enclosing_axes + (axis,), tags)
    yield_types = []
    for y in region.yields:
        got = inner.lookup(y)
        if got is None:
            _fail(f"yield of undefined value %{y}")
        if got[0] != "tensor":
            _fail(f"cannot yield range value %{y}")
        yield_types.append(got[1])
    dep = _binder_dependent(region)
    for act, y in zip(actions, region.yields):
        if isinstance(act, AnyAction) and y in dep:
            _fail(f"any-loop yield %{y} depends on the range binder; "
                  "consensus requires a trip-invariant value")
    try:
        inferred = infer_result_types("loop", [], op.attrs, yield_types, mesh)
    except ShapeError as e:
        _fail(f"loop: {e}")
    if inferred != op.result_types:
        _fail(f"loop declares {[t.render() for t in op.result_types]}, "
              f"actions give {[t.render() for t in inferred]}")
    for r, t in zip(op.results, op.result_types):
        scope.define(r, ("tensor", t))


def verify_func(func: Func, mesh: Mesh | None):
    scope = _Scope()
    for n, t in func.args:
        scope.define(n, ("tensor", t))
    tags: dict[str, str] = {}
    _verify_ops(func.ops, scope, mesh, (), tags)
    for name in tags:
        if name in func.arg_names():
            _fail(f"tag name {name!r} collides with an argument name")
    if len(func.results) != len(func.result_types):
        _fail(f"@{func.name} returns {len(func.results)} values, "
              f"{len(func.result_types)} types declared")
    for r, want in zip(func.results, func.result_types):
        got = scope.lookup(r)
        if got is None:
            _fail(f"return of undefined value %{r}")
        if got[0] != "tensor":
            _fail(f"cannot return range value %{r}")
        if got[1] != want:
            _fail(f"return type mismatch for %{r}: {got[1].render()} vs {want.render()}")


def verify_module(module: Module):
    """Raise VerifyError if the module violates any structural rule."""
    names = [f.name for f in module.funcs]
    if len(set(names)) != len(names):
        _fail(f"duplicate function name in {names}")
    if not module.funcs:
        _fail("module has no functions")
    for f in module.funcs:
        verify_func(f, module.mesh)
