"""Analytic cost model for localized device programs.

Compute time is total floating point work at peak throughput; each collective
adds ring-transfer bytes over the link bandwidth plus a fixed launch latency;
everything is strictly sequential. Peak memory is the high-water mark of live
tensor bytes over the straight-line program, with arguments live from entry
and returned values live to the end. Deliberately simple: the numbers rank
shardings, they do not predict wall clocks.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .ir import Func, Mesh, Module, Op, collect_uses, walk_ops

GiB = 1024 ** 3


@dataclass(frozen=True)
class MachineSpec:
    name: str
    peak_flops: float          # per device, f32
    hbm_bytes: float           # per device
    link_bandwidth: float      # bytes/s per device
    collective_latency_s: float = 1e-5

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "peak_flops": self.peak_flops,
            "hbm_bytes": self.hbm_bytes,
            "link_bandwidth": self.link_bandwidth,
            "collective_latency_s": self.collective_latency_s,
        }


BUILTIN_SPECS = {
    "tpu-v3-core": MachineSpec("tpu-v3-core", peak_flops=61.5e12,
                               hbm_bytes=16 * GiB, link_bandwidth=70e9),
    "a100-40g": MachineSpec("a100-40g", peak_flops=156e12,
                            hbm_bytes=40e9, link_bandwidth=600e9),
}


def parse_machine_spec(text: str, name: str = "custom") -> MachineSpec:
    """key = value lines; supports peak_flops, hbm_bytes, link_bandwidth,
    collective_latency_s, name. '#' comments allowed."""
    fields = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"(\w+)\s*=\s*(\S+)", line)
        if not m:
            raise ValueError(f"machine spec line {lineno}: cannot parse {line!r}")
        fields[m.group(1)] = m.group(2)
    name = fields.pop("name", name)
    known = {"peak_flops", "hbm_bytes", "link_bandwidth", "collective_latency_s"}
    unknown = set(fields) - known
    if unknown:
        raise ValueError(f"machine spec has unknown keys: {sorted(unknown)}")
    missing = {"peak_flops", "hbm_bytes", "link_bandwidth"} - set(fields)
    if missing:
        raise ValueError(f"machine spec missing required keys: {sorted(missing)}")
    return MachineSpec(
        name,
        peak_flops=float(fields["peak_flops"]),
        hbm_bytes=float(fields["hbm_bytes"]),
        link_bandwidth=float(fields["link_bandwidth"]),
        collective_latency_s=float(fields.get("collective_latency_s", 1e-5)),
    )


def load_machine_spec(name_or_path: str) -> MachineSpec:
    if name_or_path in BUILTIN_SPECS:
        return BUILTIN_SPECS[name_or_path]
    p = Path(name_or_path)
    if p.exists():
        return parse_machine_spec(p.read_text(), name=p.stem)
    raise ValueError(f"unknown machine spec {name_or_path!r}; "
                     f"builtins: {sorted(BUILTIN_SPECS)}")


def _flops(op: Op, operand_dims: list[tuple[int, ...]]) -> float:
    k = op.kind
    if k == "matmul":
        m, kk = operand_dims[0]
        n = operand_dims[1][1]
        return 2.0 * m * kk * n
    if k in ("add", "mul", "neg", "exp"):
        t = op.result_types[0]
        return float(t.elems)
    if k == "reduce":
        n = 1
        for d in operand_dims[0]:
            n *= d
        return float(n)
    return 0.0


def _axes_product(op: Op, mesh: Mesh) -> int:
    if op.kind in ("all_reduce", "reduce_scatter", "all_to_all"):
        axes = op.attrs["axes"]
    else:
        axes = [ax for lst in op.attrs["axes_per_dim"] for ax in lst]
    n = 1
    for ax in axes:
        n *= mesh.size(ax)
    return n


def collective_bytes(op: Op, mesh: Mesh, operand_bytes: int) -> float:
    """Ring-schedule transfer volume per device."""
    n = _axes_product(op, mesh)
    if op.kind == "all_gather":
        return (n - 1) / n * op.result_types[0].nbytes
    if op.kind == "all_reduce":
        return 2.0 * (n - 1) / n * operand_bytes
    if op.kind in ("reduce_scatter", "all_to_all"):
        return (n - 1) / n * operand_bytes
    return 0.0


def peak_live_bytes(func: Func) -> int:
    """High-water mark of live tensor bytes over the straight-line body."""
    n = len(func.ops)
    defs: dict[str, tuple[int, int]] = {}  # name -> (def_pos, bytes)
    for name, t in func.args:
        defs[name] = (0, t.nbytes)
    for i, op in enumerate(func.ops):
        for r, t in zip(op.results, op.result_types):
            defs[r] = (i, t.nbytes)
    last: dict[str, int] = {}
    for i, op in enumerate(func.ops):
        for o in op.operands:
            last[o] = i
    for r in func.results:
        last[r] = n
    live_delta = [0] * (n + 2)
    for name, (d, b) in defs.items():
        e = last.get(name, d)
        live_delta[d] += b
        live_delta[e + 1] -= b
    peak = cur = 0
    for delta in live_delta:
        cur += delta
        peak = max(peak, cur)
    return peak


def total_flops(module: Module, func: str = "main") -> float:
    """Dense floating point work of one function, loops expanded."""
    f = module.func(func)
    mesh = module.mesh

    def value_dims(name, scopes):
        for s in reversed(scopes):
            if name in s:
                return s[name]
        raise KeyError(name)

    top = {n: t.dims for n, t in f.args}

    def rec(ops, scopes, mult):
        total = 0.0
        for op in ops:
            if op.kind == "loop":
                region = op.regions[0]
                k = mesh.size(op.attrs["axis"]) if mesh else 1
                reps = k if region.arg is not None else 1
                inner = {region.arg: None} if region.arg else {}
                total += rec(region.ops, scopes + [inner], mult * reps)
            else:
                dims = []
                for o in op.operands:
                    v = value_dims(o, scopes)
                    if v is not None:
                        dims.append(v)
                total += mult * _flops(op, dims)
            for r, t in zip(op.results, op.result_types):
                scopes[-1][r] = t.dims
        return total

    return rec(f.ops, [top], 1.0)


@dataclass
class CostReport:
    runtime_s: float
    peak_memory_bytes: int
    compute_flops: float
    comm_bytes: float
    counts: dict[str, int]
    mfu_percent: float | None = None

    def to_json(self) -> dict:
        return {
            "runtime_s": self.runtime_s,
            "peak_memory_bytes": self.peak_memory_bytes,
            "compute_flops": self.compute_flops,
            "comm_bytes": self.comm_bytes,
            "counts": self.counts,
            "mfu_percent": self.mfu_percent,
        }


def simulate(local_module: Module, spec: MachineSpec,
             model_flops: float | None = None, func: str = "main") -> CostReport:
    """Cost a localized (straight-line, per-device) function on a machine."""
    f = local_module.func(func)
    mesh = local_module.mesh
    flops = 0.0
    comm_s = 0.0
    comm_bytes = 0.0
    counts = {k: 0 for k in ("all_gather", "all_reduce", "reduce_scatter", "all_to_all")}
    types: dict[str, tuple] = {n: t for n, t in f.args}
    for op in f.ops:
        for r, t in zip(op.results, op.result_types):
            types[r] = t
        if op.kind in counts:
            counts[op.kind] += 1
            b = collective_bytes(op, mesh, types[op.operands[0]].nbytes)
            comm_bytes += b
            comm_s += b / spec.link_bandwidth + spec.collective_latency_s
        elif op.kind != "all_slice":
            dims = [types[o].dims for o in op.operands]
            flops += _flops(op, dims)
    runtime = flops / spec.peak_flops + comm_s
    mfu = None
    if model_flops is not None and mesh is not None and runtime > 0:
        mfu = 100.0 * (model_flops / runtime) / (mesh.device_count * spec.peak_flops)
    return CostReport(runtime, peak_live_bytes(f), flops, comm_bytes, counts, mfu)
