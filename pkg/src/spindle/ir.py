"""SSA tensor IR over a named device mesh.

A Module holds functions of straight-line tensor ops. Partitioning introduces
`loop`/`slice` ops (temporal tiling), and SPMD lowering replaces those with
collective ops. All three layers share this one op representation; the
dialect-specific verifiers live in `verify`.
"""
from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field

ELEM_KINDS = ("f32", "i32")
MONOIDS = ("sum", "max")

# Base tensor ops (pre-partitioning surface).
TENSOR_OP_KINDS = (
    "constant", "matmul", "add", "mul", "neg", "exp",
    "transpose", "reduce", "reshape", "broadcast", "tag",
)
ELEMENTWISE_BINARY = ("add", "mul")
ELEMENTWISE_UNARY = ("neg", "exp")
COLLECTIVE_KINDS = ("all_reduce", "all_slice", "all_gather", "all_to_all", "reduce_scatter")


class ShapeError(Exception):
    """Raised when operand/attr combinations violate an op's shape rule."""


@dataclass(frozen=True)
class TensorType:
    dims: tuple[int, ...]
    elem: str = "f32"

    def __post_init__(self):
        if self.elem not in ELEM_KINDS:
            raise ShapeError(f"unknown element kind {self.elem!r}")
        if any(d < 1 for d in self.dims):
            raise ShapeError(f"dims must be positive, got {self.dims}")

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def elems(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n

    @property
    def nbytes(self) -> int:
        return 4 * self.elems  # f32 and i32 are both 4 bytes

    def render(self) -> str:
        parts = [str(d) for d in self.dims] + [self.elem]
        return "tensor<" + "x".join(parts) + ">"


@dataclass(frozen=True)
class RangeType:
    size: int

    def render(self) -> str:
        return f"range<{self.size}>"


@dataclass(frozen=True)
class Mesh:
    """Ordered named axes; an axis is (name, size), size >= 2."""

    axes: tuple[tuple[str, int], ...]

    def __post_init__(self):
        names = [n for n, _ in self.axes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate mesh axis in {names}")
        for n, s in self.axes:
            if s < 2:
                raise ValueError(f"mesh axis {n!r} must have size >= 2, got {s}")

    def names(self) -> list[str]:
        return [n for n, _ in self.axes]

    def size(self, name: str) -> int:
        for n, s in self.axes:
            if n == name:
                return s
        raise KeyError(f"no mesh axis named {name!r}")

    def has(self, name: str) -> bool:
        return any(n == name for n, _ in self.axes)

    @property
    def device_count(self) -> int:
        n = 1
        for _, s in self.axes:
            n *= s
        return n

    def coords(self):
        """All device coordinates in row-major order, as ordered dicts axis->index."""
        out = [dict()]
        for name, size in self.axes:
            out = [{**c, name: i} for c in out for i in range(size)]
        return out

    def render(self) -> str:
        return "{" + ", ".join(f"{n}:{s}" for n, s in self.axes) + "}"

    @staticmethod
    def parse(text: str) -> "Mesh":
        """Accepts 'B:4,M:2' or '{B:4, M:2}'."""
        body = text.strip().strip("{}")
        axes = []
        for part in body.split(","):
            part = part.strip()
            if not part:
                continue
            m = re.fullmatch(r"([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(\d+)", part)
            if not m:
                raise ValueError(f"bad mesh axis {part!r}")
            axes.append((m.group(1), int(m.group(2))))
        if not axes:
            raise ValueError(f"empty mesh {text!r}")
        return Mesh(tuple(axes))


# --- Partitioning actions -------------------------------------------------

@dataclass(frozen=True)
class Tile:
    dim: int

    def render(self) -> str:
        return f"#tile<{self.dim}>"


@dataclass(frozen=True)
class Sum:
    monoid: str = "sum"

    def __post_init__(self):
        if self.monoid not in MONOIDS:
            raise ValueError(f"unknown monoid {self.monoid!r}")

    def render(self) -> str:
        return "#sum" if self.monoid == "sum" else f"#sum<{self.monoid}>"


@dataclass(frozen=True)
class AnyAction:
    """Consensus action: body runs unsliced everywhere, result taken from any one trip."""

    def render(self) -> str:
        return "#any"


Action = Tile | Sum | AnyAction


def render_action(a: Action) -> str:
    return a.render()


# --- Ops ------------------------------------------------------------------

@dataclass
class Region:
    """Loop body. `arg` is the range binder name (None for binder-less any-loops)."""

    ops: list["Op"]
    yields: list[str]
    arg: str | None = None
    arg_size: int | None = None


@dataclass
class Op:
    kind: str
    results: list[str]
    result_types: list[TensorType]
    operands: list[str]
    attrs: dict = field(default_factory=dict)
    regions: list[Region] = field(default_factory=list)

    @property
    def result(self) -> str:
        assert len(self.results) == 1, f"{self.kind} has {len(self.results)} results"
        return self.results[0]

    @property
    def result_type(self) -> TensorType:
        assert len(self.result_types) == 1
        return self.result_types[0]


@dataclass
class Func:
    name: str
    args: list[tuple[str, TensorType]]
    ops: list[Op]
    results: list[str]
    result_types: list[TensorType]

    def arg_names(self) -> list[str]:
        return [n for n, _ in self.args]

    def arg_type(self, name: str) -> TensorType:
        for n, t in self.args:
            if n == name:
                return t
        raise KeyError(name)


@dataclass
class Module:
    funcs: list[Func]
    mesh: Mesh | None = None

    def clone(self) -> "Module":
        return copy.deepcopy(self)

    def func(self, name: str = "main") -> Func:
        for f in self.funcs:
            if f.name == name:
                return f
        raise KeyError(f"no function named {name!r}")


# --- Shape inference --------------------------------------------------------

def _require(cond: bool, msg: str):
    if not cond:
        raise ShapeError(msg)


def infer_result_types(kind: str, operand_types: list[TensorType], attrs: dict,
                       yield_types: list[TensorType] | None = None,
                       mesh: Mesh | None = None) -> list[TensorType]:
    """Result types an op must declare. Raises ShapeError on rule violations."""
    ts = operand_types
    if kind == "constant":
        _require(not ts, "constant takes no operands")
        _require("value" in attrs and "type" in attrs, "constant needs value/type attrs")
        return [attrs["type"]]
    if kind == "matmul":
        _require(len(ts) == 2, "matmul takes 2 operands")
        a, b = ts
        _require(a.rank == 2 and b.rank == 2, "matmul operands must be rank 2")
        _require(a.dims[1] == b.dims[0], f"matmul contraction mismatch {a.dims} @ {b.dims}")
        _require(a.elem == b.elem, "matmul element kind mismatch")
        return [TensorType((a.dims[0], b.dims[1]), a.elem)]
    if kind in ELEMENTWISE_BINARY:
        _require(len(ts) == 2, f"{kind} takes 2 operands")
        a, b = ts
        _require(a == b, f"{kind} requires identical operand types, got {a} vs {b}")
        return [a]
    if kind in ELEMENTWISE_UNARY:
        _require(len(ts) == 1, f"{kind} takes 1 operand")
        return [ts[0]]
    if kind == "transpose":
        _require(len(ts) == 1, "transpose takes 1 operand")
        a = ts[0]
        perm = attrs.get("perm")
        _require(perm is not None and sorted(perm) == list(range(a.rank)),
                 f"transpose perm {perm} is not a permutation of rank {a.rank}")
        return [TensorType(tuple(a.dims[p] for p in perm), a.elem)]
    if kind == "reduce":
        _require(len(ts) == 1, "reduce takes 1 operand")
        a = ts[0]
        dims = attrs.get("dims")
        monoid = attrs.get("monoid", "sum")
        _require(monoid in MONOIDS, f"unknown reduce monoid {monoid!r}")
        _require(dims is not None and len(dims) > 0, "reduce needs nonempty dims")
        _require(len(set(dims)) == len(dims), f"reduce dims {dims} not distinct")
        _require(all(0 <= d < a.rank for d in dims), f"reduce dims {dims} out of range")
        kept = tuple(d for i, d in enumerate(a.dims) if i not in dims)
        return [TensorType(kept, a.elem)]
    if kind == "reshape":
        _require(len(ts) == 1, "reshape takes 1 operand")
        a = ts[0]
        dims = tuple(attrs.get("dims", ()))
        n = 1
        for d in dims:
            n *= d
        _require(n == a.elems, f"reshape {a.dims} -> {dims} changes element count")
        return [TensorType(dims, a.elem)]
    if kind == "broadcast":
        # attrs["dims"][i] is the result dim fed by operand dim i; other result
        # dims are new. Result shape comes from attrs["shape"].
        _require(len(ts) == 1, "broadcast takes 1 operand")
        a = ts[0]
        dims = list(attrs.get("dims", ()))
        shape = tuple(attrs.get("shape", ()))
        _require(len(dims) == a.rank, "broadcast dims must map every operand dim")
        _require(dims == sorted(dims), f"broadcast dims {dims} must be increasing")
        _require(all(0 <= d < len(shape) for d in dims), "broadcast dims out of range")
        for i, d in enumerate(dims):
            _require(shape[d] == a.dims[i],
                     f"broadcast result dim {d} ({shape[d]}) != operand dim {i} ({a.dims[i]})")
        return [TensorType(shape, a.elem)]
    if kind == "tag":
        _require(len(ts) == 1, "tag takes 1 operand")
        _require(isinstance(attrs.get("name"), str) and attrs["name"], "tag needs a name")
        return [ts[0]]
    if kind == "slice":
        _require(len(ts) == 1, "slice takes 1 tensor operand (plus a range index)")
        a = ts[0]
        d = attrs.get("dim")
        k = attrs.get("_range_size")  # filled in by callers that know the binder
        _require(d is not None and 0 <= d < a.rank, f"slice dim {d} out of range for {a}")
        if k is None:
            return [a]  # caller will check against the loop extent separately
        _require(a.dims[d] % k == 0, f"slice dim {d} of {a.dims} not divisible by {k}")
        nd = list(a.dims)
        nd[d] //= k
        return [TensorType(tuple(nd), a.elem)]
    if kind == "loop":
        _require(yield_types is not None, "loop inference needs yield types")
        actions = attrs.get("actions", [])
        axis = attrs.get("axis")
        _require(mesh is not None and mesh.has(axis), f"loop axis {axis!r} not in mesh")
        k = mesh.size(axis)
        _require(len(actions) == len(yield_types), "one action per yield")
        out = []
        for act, yt in zip(actions, yield_types):
            if isinstance(act, Tile):
                _require(0 <= act.dim < yt.rank, f"tile dim {act.dim} out of range for {yt}")
                nd = list(yt.dims)
                nd[act.dim] *= k
                out.append(TensorType(tuple(nd), yt.elem))
            else:
                out.append(yt)
        return out
    if kind == "all_reduce":
        _require(len(ts) == 1, "all_reduce takes 1 operand")
        _check_axes(attrs.get("axes", []), mesh)
        return [ts[0]]
    if kind == "all_slice":
        _require(len(ts) == 1, "all_slice takes 1 operand")
        a = ts[0]
        apd = attrs.get("axes_per_dim", [])
        _check_axes_per_dim(apd, a, mesh)
        nd = list(a.dims)
        for d, axes in enumerate(apd):
            for ax in axes:
                _require(nd[d] % mesh.size(ax) == 0,
                         f"all_slice dim {d} of {a.dims} not divisible by axis {ax}")
                nd[d] //= mesh.size(ax)
        return [TensorType(tuple(nd), a.elem)]
    if kind == "all_gather":
        _require(len(ts) == 1, "all_gather takes 1 operand")
        a = ts[0]
        apd = attrs.get("axes_per_dim", [])
        _check_axes_per_dim(apd, a, mesh)
        nd = list(a.dims)
        for d, axes in enumerate(apd):
            for ax in axes:
                nd[d] *= mesh.size(ax)
        return [TensorType(tuple(nd), a.elem)]
    if kind == "all_to_all":
        _require(len(ts) == 1, "all_to_all takes 1 operand")
        a = ts[0]
        gd, sd = attrs.get("gather_dim"), attrs.get("slice_dim")
        axes = attrs.get("axes", [])
        _check_axes(axes, mesh)
        _require(gd is not None and sd is not None and gd != sd, "all_to_all needs two distinct dims")
        _require(0 <= gd < a.rank and 0 <= sd < a.rank, "all_to_all dims out of range")
        n = 1
        for ax in axes:
            n *= mesh.size(ax)
        _require(a.dims[sd] % n == 0, f"all_to_all slice dim {sd} of {a.dims} not divisible by {n}")
        nd = list(a.dims)
        nd[gd] *= n
        nd[sd] //= n
        return [TensorType(tuple(nd), a.elem)]
    if kind == "reduce_scatter":
        _require(len(ts) == 1, "reduce_scatter takes 1 operand")
        a = ts[0]
        _check_axes(attrs.get("axes", []), mesh)
        apd = attrs.get("axes_per_dim", [])
        _check_axes_per_dim(apd, a, mesh)
        nd = list(a.dims)
        for d, axes in enumerate(apd):
            for ax in axes:
                _require(nd[d] % mesh.size(ax) == 0,
                         f"reduce_scatter dim {d} of {a.dims} not divisible by axis {ax}")
                nd[d] //= mesh.size(ax)
        return [TensorType(tuple(nd), a.elem)]
    raise ShapeError(f"unknown op kind {kind!r}")


def _check_axes(axes, mesh: Mesh | None):
    _require(mesh is not None, "collective requires a mesh")
    _require(len(axes) > 0, "collective needs at least one axis")
    _require(len(set(axes)) == len(axes), f"repeated axis in {axes}")
    for ax in axes:
        _require(mesh.has(ax), f"unknown mesh axis {ax!r}")


def _check_axes_per_dim(apd, t: TensorType, mesh: Mesh | None):
    _require(mesh is not None, "collective requires a mesh")
    _require(len(apd) == t.rank, f"axes_per_dim has {len(apd)} entries for rank {t.rank}")
    seen = []
    for axes in apd:
        for ax in axes:
            _require(mesh.has(ax), f"unknown mesh axis {ax!r}")
            seen.append(ax)
    _require(len(set(seen)) == len(seen), f"mesh axis used twice in {apd}")


# --- Builders and traversal -------------------------------------------------

class Namer:
    """Fresh SSA names for one function: numeric, never colliding with existing."""

    def __init__(self, func: Func):
        # every mentioned name counts as used: lowering briefly leaves operand
        # references to ops it has deleted, and those names must not be reissued
        self.used: set[str] = set(func.arg_names())
        self.used.update(func.results)
        for op, _ in walk_ops(func):
            self.used.update(op.results)
            self.used.update(op.operands)
            for r in op.regions:
                if r.arg:
                    self.used.add(r.arg)
                self.used.update(r.yields)
        self.counter = 0

    def fresh(self) -> str:
        while str(self.counter) in self.used:
            self.counter += 1
        name = str(self.counter)
        self.used.add(name)
        return name


def walk_ops(func: Func, _ops: list[Op] | None = None, _axes: tuple[str, ...] = ()):
    """Yield (op, enclosing_loop_axes) over the whole function, pre-order."""
    ops = func.ops if _ops is None else _ops
    for op in ops:
        yield op, _axes
        for region in op.regions:
            inner = _axes + ((op.attrs["axis"],) if op.kind == "loop" else ())
            yield from walk_ops(func, region.ops, inner)


def find_def(func: Func, name: str):
    """Locate a value definition: ('arg', index) or (ops_list, idx, op, result_idx, axes)."""
    for i, (n, _) in enumerate(func.args):
        if n == name:
            return ("arg", i)

    def rec(ops: list[Op], axes: tuple[str, ...]):
        for i, op in enumerate(ops):
            if name in op.results:
                return (ops, i, op, op.results.index(name), axes)
            for region in op.regions:
                if region.arg == name:
                    return ("rangearg", op, region, axes)
                inner = axes + ((op.attrs["axis"],) if op.kind == "loop" else ())
                hit = rec(region.ops, inner)
                if hit:
                    return hit
        return None

    hit = rec(func.ops, ())
    if hit is None:
        raise KeyError(f"value %{name} not defined in @{func.name}")
    return hit


def value_type(func: Func, name: str) -> TensorType:
    d = find_def(func, name)
    if d[0] == "arg":
        return func.args[d[1]][1]
    if d[0] == "rangearg":
        raise TypeError(f"%{name} is a range value")
    _, _, op, ri, _ = d
    return op.result_types[ri]


def collect_uses(func: Func, name: str):
    """All use sites of a value: ('op', op, operand_idx) | ('yield', op, region, idx) | ('return', idx)."""
    out = []

    def rec(ops: list[Op]):
        for op in ops:
            for j, o in enumerate(op.operands):
                if o == name:
                    out.append(("op", op, j))
            for region in op.regions:
                rec(region.ops)
                for j, y in enumerate(region.yields):
                    if y == name:
                        out.append(("yield", op, region, j))

    rec(func.ops)
    for j, r in enumerate(func.results):
        if r == name:
            out.append(("return", j))
    return out


def replace_uses(func: Func, old: str, new: str, skip_ops: set[int] = frozenset()):
    """Rewrite all uses of `old` to `new`, skipping ops whose id() is in skip_ops."""

    def rec(ops: list[Op]):
        for op in ops:
            if id(op) not in skip_ops:
                op.operands = [new if o == old else o for o in op.operands]
            for region in op.regions:
                rec(region.ops)
                if id(op) not in skip_ops:
                    region.yields = [new if y == old else y for y in region.yields]

    rec(func.ops)
    func.results = [new if r == old else r for r in func.results]


class FuncBuilder:
    """Convenience builder used by the model zoo and tests."""

    def __init__(self, name: str = "main"):
        self._func = Func(name, [], [], [], [])
        self._types: dict[str, TensorType] = {}
        self._n = 0

    def _fresh(self, hint: str | None) -> str:
        if hint:
            assert hint not in self._types, f"duplicate value name {hint}"
            return hint
        self._n += 1
        while f"v{self._n}" in self._types:
            self._n += 1
        return f"v{self._n}"

    def arg(self, name: str, dims, elem: str = "f32") -> str:
        t = TensorType(tuple(dims), elem)
        self._func.args.append((name, t))
        self._types[name] = t
        return name

    def emit(self, kind: str, operands: list[str], attrs: dict | None = None,
             name: str | None = None) -> str:
        attrs = dict(attrs or {})
        tys = [self._types[o] for o in operands]
        (rt,) = infer_result_types(kind, tys, attrs)
        rname = self._fresh(name)
        self._func.ops.append(Op(kind, [rname], [rt], list(operands), attrs))
        self._types[rname] = rt
        return rname

    def constant(self, value: float, dims, elem: str = "f32", name: str | None = None) -> str:
        t = TensorType(tuple(dims), elem)
        return self.emit("constant", [], {"value": value, "type": t}, name)

    def ret(self, *names: str):
        self._func.results = list(names)
        self._func.result_types = [self._types[n] for n in names]

    def build(self, mesh: Mesh | None = None) -> Module:
        return Module([self._func], mesh)
