"""Reference dense interpreter.

Executes base tensor ops and partitioning loops on full (unsharded) arrays,
with loops run as real sequential trips. This is the semantic oracle that
every rewrite must preserve. Collective ops have no meaning on full arrays;
modules containing them are executed per-device by `spmd_interp` instead.

Kernels are dtype-polymorphic: arrays flow through in whatever dtype the
caller supplies (float64 inputs make finite-difference checks stable), and
constants adopt the common input dtype.
"""
from __future__ import annotations

import numpy as np

from .ir import AnyAction, Func, Mesh, Module, Op, Sum, Tile


class EvalError(Exception):
    pass


def _binary(kind: str):
    return {"add": np.add, "mul": np.multiply}[kind]


def _monoid_combine(monoid: str, vals):
    acc = vals[0]
    f = np.add if monoid == "sum" else np.maximum
    for v in vals[1:]:
        acc = f(acc, v)
    return acc


def _eval_op(op: Op, env: dict, mesh: Mesh | None, cdtype):
    k = op.kind
    if k == "loop":
        return _eval_loop(op, env, mesh, cdtype)
    if k == "constant":
        t = op.attrs["type"]
        return [np.full(t.dims, op.attrs["value"], dtype=cdtype)]
    xs = [env[o] for o in op.operands]
    if k == "matmul":
        return [xs[0] @ xs[1]]
    if k in ("add", "mul"):
        return [_binary(k)(xs[0], xs[1])]
    if k == "neg":
        return [-xs[0]]
    if k == "exp":
        return [np.exp(xs[0])]
    if k == "transpose":
        return [np.transpose(xs[0], op.attrs["perm"])]
    if k == "reduce":
        f = np.sum if op.attrs.get("monoid", "sum") == "sum" else np.max
        return [f(xs[0], axis=tuple(op.attrs["dims"]))]
    if k == "reshape":
        return [np.reshape(xs[0], op.attrs["dims"])]
    if k == "broadcast":
        x = xs[0]
        shape = tuple(op.result_type.dims)
        expanded = list(op.attrs["dims"])
        for d in range(len(shape)):
            if d not in expanded:
                x = np.expand_dims(x, d)
        return [np.broadcast_to(x, shape)]
    if k == "tag":
        return [xs[0]]
    if k == "slice":
        x, i = xs[0], xs[1]
        d = op.attrs["dim"]
        c = op.result_type.dims[d]
        idx = [slice(None)] * x.ndim
        idx[d] = slice(i * c, (i + 1) * c)
        return [x[tuple(idx)]]
    raise EvalError(f"op {k!r} has no dense semantics; lower and use spmd_interpret")


def _eval_loop(op: Op, env: dict, mesh: Mesh | None, cdtype):
    if mesh is None:
        raise EvalError("loop requires a module mesh")
    region = op.regions[0]
    n = mesh.size(op.attrs["axis"])
    trips = []
    reps = 1 if region.arg is None else n
    for i in range(reps):
        sub = dict(env)
        if region.arg is not None:
            sub[region.arg] = i
        _run_ops(region.ops, sub, mesh, cdtype)
        trips.append([sub[y] for y in region.yields])
    if region.arg is None:
        trips = trips * n
    out = []
    for j, act in enumerate(op.attrs["actions"]):
        vals = [t[j] for t in trips]
        if isinstance(act, Tile):
            out.append(np.concatenate(vals, axis=act.dim))
        elif isinstance(act, Sum):
            out.append(_monoid_combine(act.monoid, vals))
        elif isinstance(act, AnyAction):
            for v in vals[1:]:
                if not np.array_equal(vals[0], v):
                    raise EvalError(f"any-loop on {op.attrs['axis']!r} yields differ across trips")
            out.append(vals[0])
        else:
            raise EvalError(f"unknown action {act!r}")
    return out


def _run_ops(ops: list[Op], env: dict, mesh: Mesh | None, cdtype):
    for op in ops:
        vals = _eval_op(op, env, mesh, cdtype)
        for name, v in zip(op.results, vals):
            env[name] = v


def interpret(module: Module, inputs, func: str = "main") -> list[np.ndarray]:
    """Run a function on dense inputs (dict by arg name, or positional list)."""
    f: Func = module.func(func)
    if isinstance(inputs, dict):
        arrays = [np.asarray(inputs[n]) for n in f.arg_names()]
    else:
        arrays = [np.asarray(a) for a in inputs]
    if len(arrays) != len(f.args):
        raise EvalError(f"@{f.name} takes {len(f.args)} args, got {len(arrays)}")
    for a, (n, t) in zip(arrays, f.args):
        if tuple(a.shape) != t.dims:
            raise EvalError(f"arg %{n} expects shape {t.dims}, got {tuple(a.shape)}")
    cdtype = np.result_type(*[a.dtype for a in arrays]) if arrays else np.float32
    env = {n: a for a, (n, _) in zip(arrays, f.args)}
    _run_ops(f.ops, env, module.mesh, cdtype)
    return [env[r] for r in f.results]


def random_inputs(module: Module, seed: int, func: str = "main",
                  dtype=np.float32, scale: float = 0.25) -> dict[str, np.ndarray]:
    """Deterministic random inputs sized to a function's signature.

    Kept small so models with squaring activations stay comfortably inside
    f32 range even after a few layers.
    """
    rng = np.random.default_rng(seed)
    f = module.func(func)
    return {n: (scale * rng.standard_normal(t.dims)).astype(dtype)
            for n, t in f.args}
