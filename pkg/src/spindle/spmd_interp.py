"""Per-device execution of lowered collective programs.

Keeps one environment per mesh coordinate and walks the straight-line local
function in lockstep, so collectives can be evaluated as group operations over
the devices that participate (those differing only along the collective's
axes). Outputs are reassembled into global arrays; wherever several devices
claim the same chunk (replication), their copies must agree or the run is
reported as diverged.
"""
from __future__ import annotations

import numpy as np

from .interp import _eval_op
from .ir import Func, Mesh, Module
from .spmd import ShardingSpec

_COLLECTIVE = ("all_slice", "all_gather", "all_reduce", "reduce_scatter", "all_to_all")


class DivergenceError(Exception):
    """Device replicas disagree on a value that must be replicated."""


def relative_error(got: np.ndarray, want: np.ndarray) -> float:
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    if got.shape != want.shape:
        return float("inf")
    denom = float(np.max(np.abs(want))) + 1e-12
    return float(np.max(np.abs(got - want))) / denom


def _chunk_index(coord: dict, axes: list[str], mesh: Mesh) -> int:
    idx = 0
    for ax in axes:
        idx = idx * mesh.size(ax) + coord[ax]
    return idx


def _chunk_slices(global_dims, apd, mesh: Mesh, coord: dict):
    out = []
    for d, axes in enumerate(apd):
        n = 1
        for ax in axes:
            n *= mesh.size(ax)
        ext = global_dims[d] // n
        i = _chunk_index(coord, axes, mesh)
        out.append(slice(i * ext, (i + 1) * ext))
    return tuple(out)


def shard_array(arr: np.ndarray, apd, mesh: Mesh, coord: dict) -> np.ndarray:
    return arr[_chunk_slices(arr.shape, apd, mesh, coord)]


def _groups(coords: list[dict], axes: list[str], mesh: Mesh):
    """Device index lists, one per combination of non-participating coords."""
    others = [n for n in mesh.names() if n not in axes]
    out: dict[tuple, list[int]] = {}
    for i, c in enumerate(coords):
        out.setdefault(tuple(c[n] for n in others), []).append(i)
    return list(out.values())


def _combine(monoid: str, arrays):
    acc = arrays[0]
    f = np.add if monoid == "sum" else np.maximum
    for a in arrays[1:]:
        acc = f(acc, a)
    return acc


def _run_collective(op, envs, coords, mesh: Mesh):
    k = op.kind
    if k == "all_slice":
        apd = op.attrs["axes_per_dim"]
        for env, c in zip(envs, coords):
            x = env[op.operands[0]]
            env[op.result] = x[_chunk_slices(x.shape, apd, mesh, c)]
        return
    if k == "all_gather":
        apd = op.attrs["axes_per_dim"]
        gdims = op.result_type.dims
        for group in _groups(coords, _flat(apd), mesh):
            out = np.zeros(gdims, dtype=envs[group[0]][op.operands[0]].dtype)
            for i in group:
                out[_chunk_slices(gdims, apd, mesh, coords[i])] = envs[i][op.operands[0]]
            for i in group:
                envs[i][op.result] = out
        return
    if k == "all_reduce":
        for group in _groups(coords, op.attrs["axes"], mesh):
            combined = _combine(op.attrs["monoid"], [envs[i][op.operands[0]] for i in group])
            for i in group:
                envs[i][op.result] = combined
        return
    if k == "reduce_scatter":
        apd = op.attrs["axes_per_dim"]
        for group in _groups(coords, op.attrs["axes"], mesh):
            combined = _combine(op.attrs["monoid"], [envs[i][op.operands[0]] for i in group])
            for i in group:
                envs[i][op.result] = combined[_chunk_slices(combined.shape, apd, mesh, coords[i])]
        return
    if k == "all_to_all":
        gd, sd = op.attrs["gather_dim"], op.attrs["slice_dim"]
        axes = op.attrs["axes"]
        n = 1
        for ax in axes:
            n *= mesh.size(ax)
        for group in _groups(coords, axes, mesh):
            x0 = envs[group[0]][op.operands[0]]
            bdims = list(x0.shape)
            bdims[gd] *= n
            buf = np.zeros(bdims, dtype=x0.dtype)
            gapd = [axes if d == gd else [] for d in range(len(bdims))]
            for i in group:
                buf[_chunk_slices(bdims, gapd, mesh, coords[i])] = envs[i][op.operands[0]]
            sapd = [axes if d == sd else [] for d in range(len(bdims))]
            for i in group:
                envs[i][op.result] = buf[_chunk_slices(bdims, sapd, mesh, coords[i])]
        return
    raise AssertionError(k)


def _flat(apd) -> list[str]:
    return [ax for axes in apd for ax in axes]


def _global_dims(local_dims, apd, mesh: Mesh):
    out = list(local_dims)
    for d, axes in enumerate(apd):
        for ax in axes:
            out[d] *= mesh.size(ax)
    return tuple(out)


def unshard(locals_by_device, apd, mesh: Mesh, coords, tol: float, label: str) -> np.ndarray:
    gdims = _global_dims(locals_by_device[0].shape, apd, mesh)
    out = np.zeros(gdims, dtype=locals_by_device[0].dtype)
    seen: dict[tuple, int] = {}
    for i, c in enumerate(coords):
        key = tuple(_chunk_index(c, axes, mesh) for axes in apd)
        sl = _chunk_slices(gdims, apd, mesh, c)
        if key in seen:
            err = relative_error(locals_by_device[i], out[sl])
            if err > tol:
                raise DivergenceError(
                    f"{label}: replicas disagree (relative error {err:.3e} > {tol:.1e}) "
                    f"between device {seen[key]} and device {i}")
        else:
            seen[key] = i
            out[sl] = locals_by_device[i]
    return out


def spmd_interpret(module: Module, sharding: ShardingSpec, inputs,
                   func: str = "main", tol: float = 1e-5) -> list[np.ndarray]:
    """Run a localized module on global inputs; returns global outputs.

    Inputs are sharded per the ShardingSpec, one environment is kept per
    device, and outputs are reassembled with a replica-consensus check.
    """
    f: Func = module.func(func)
    mesh = module.mesh
    if mesh is None:
        raise ValueError("spmd execution requires a mesh")
    coords = mesh.coords()
    if isinstance(inputs, dict):
        arrays = [np.asarray(inputs[n]) for n in f.arg_names()]
    else:
        arrays = [np.asarray(a) for a in inputs]
    cdtype = np.result_type(*[a.dtype for a in arrays]) if arrays else np.float32
    envs = []
    for c in coords:
        env = {}
        for a, (n, t) in zip(arrays, f.args):
            local = shard_array(a, sharding.args[n], mesh, c)
            if tuple(local.shape) != t.dims:
                raise ValueError(f"arg %{n}: sharded input is {tuple(local.shape)}, "
                                 f"local signature wants {t.dims}")
            env[n] = local
        envs.append(env)
    for op in f.ops:
        if op.kind in _COLLECTIVE:
            _run_collective(op, envs, coords, mesh)
        else:
            for env in envs:
                vals = _eval_op(op, env, mesh, cdtype)
                for name, v in zip(op.results, vals):
                    env[name] = v
    out = []
    for j, r in enumerate(f.results):
        locals_ = [env[r] for env in envs]
        out.append(unshard(locals_, sharding.results[j], mesh, coords, tol,
                           f"result {j} (%{r})"))
    return out
