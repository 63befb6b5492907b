"""Shared helpers for the test suite."""
from __future__ import annotations

import numpy as np

from spindle.interp import interpret, random_inputs
from spindle.ir import (
    FuncBuilder,
    Func,
    Mesh,
    Module,
    Op,
    Region,
    TensorType,
    Tile,
    infer_result_types,
)
from spindle.spmd import localize, lower_to_spmd
from spindle.spmd_interp import relative_error, spmd_interpret

TOL = 1e-5


def direct_op_module(kind: str, operand_types: list[TensorType], attrs: dict,
                     mesh: Mesh) -> Module:
    """A one-op function: args a0..an feeding `kind`."""
    b = FuncBuilder()
    names = [b.arg(f"a{i}", t.dims, t.elem) for i, t in enumerate(operand_types)]
    r = b.emit(kind, names, dict(attrs))
    b.ret(r)
    return b.build(mesh=mesh)


def entry_loop_module(kind: str, operand_types: list[TensorType], attrs: dict,
                      entry, k: int, mesh: Mesh) -> Module:
    """The loop program an `entry` dictates: slice each required operand on its
    dim, run the op on the slices, combine per the entry's result action."""
    args = [(f"a{i}", t) for i, t in enumerate(operand_types)]
    body_ops, body_operands, body_types = [], [], []
    for i, (req, (n, t)) in enumerate(zip(entry.operands, args)):
        if isinstance(req, Tile):
            nd = list(t.dims)
            nd[req.dim] //= k
            st = TensorType(tuple(nd), t.elem)
            body_ops.append(Op("slice", [f"s{i}"], [st], [n, "i"],
                               {"dim": req.dim}))
            body_operands.append(f"s{i}")
            body_types.append(st)
        else:
            body_operands.append(n)
            body_types.append(t)
    attrs = dict(attrs)
    if kind == "reshape" and isinstance(entry.result, Tile):
        dims = list(attrs["dims"])
        dims[entry.result.dim] //= k
        attrs["dims"] = dims
    if kind == "broadcast" and isinstance(entry.result, Tile):
        shape = list(attrs["shape"])
        shape[entry.result.dim] //= k
        attrs["shape"] = shape
    (yt,) = infer_result_types(kind, body_types, attrs, mesh=mesh)
    body_ops.append(Op(kind, ["y"], [yt], body_operands, attrs))
    if isinstance(entry.result, Tile):
        rd = list(yt.dims)
        rd[entry.result.dim] *= k
        rt = TensorType(tuple(rd), yt.elem)
    else:
        rt = yt
    loop = Op("loop", ["r"], [rt], [],
              {"axis": "K", "actions": [entry.result]},
              [Region(body_ops, ["y"], "i", k)])
    f = Func("main", args, [loop], ["r"], [rt])
    return Module([f], mesh)


def run_schedule(module: Module, tactics) -> Module:
    """Apply tactics to a copy via the session layer; returns the final module."""
    from spindle.schedule import Partitioner

    p = Partitioner(module)
    for t in tactics:
        p.apply(t)
    return p.module


def differential_error(module: Module, seeds=range(5), tol: float = TOL) -> float:
    """Max relative error of the localized SPMD program vs the dense original."""
    loc, sharding = localize(lower_to_spmd(module))
    worst = 0.0
    for seed in seeds:
        ins = random_inputs(module, seed=seed)
        want = interpret(module, ins)
        got = spmd_interpret(loc, sharding, ins, tol=tol)
        for g, w in zip(got, want):
            worst = max(worst, relative_error(g, w))
    return worst


def grads_by_finite_difference(module: Module, seed: int = 0,
                               h: float = 1e-5) -> float:
    """Max relative error between the module's hand-written gradients and
    central finite differences of its loss, in float64.

    Works for any train model that takes zeroed momenta (so the updated
    momentum outputs equal the raw gradients) and returns results named
    `dx` and `new_m*`.
    """
    f = module.func("main")
    rng = np.random.default_rng(seed)
    inputs = {}
    for n, t in f.args:
        if n.startswith(("m", "mw", "mb")) or n.startswith("m_"):
            inputs[n] = np.zeros(t.dims, dtype=np.float64)
        else:
            inputs[n] = 0.25 * rng.standard_normal(t.dims)

    outs = dict(zip(f.results, interpret(module, inputs)))

    def loss_at(name, idx, delta):
        shifted = dict(inputs)
        bumped = shifted[name].copy()
        bumped[idx] += delta
        shifted[name] = bumped
        return float(interpret(module, shifted)[0])

    worst = 0.0
    checks = {"x": outs["dx"]}
    for n, _ in f.args:
        if n.startswith("m"):          # momentum inputs are zero, so the
            grad_name = "new_" + n     # updated momentum is the gradient
            checks[n[1:] if not n.startswith("m_") else n[2:]] = outs[grad_name]
    for name, grad in checks.items():
        it = np.nditer(inputs[name], flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            fd = (loss_at(name, idx, h) - loss_at(name, idx, -h)) / (2 * h)
            worst = max(worst, relative_error(np.asarray(grad[idx]),
                                              np.asarray(fd)))
    return worst
