"""Command line driver.

Exit codes are part of the contract: 0 success, 1 bad input (parse, verify,
or partition failure), 2 partitioning finished but conflicts remain, 3 the
partitioned program disagrees with the unpartitioned one.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .interp import interpret, random_inputs
from .ir import Mesh, Module, walk_ops
from .models import MODELS, build_model
from .parser import ParseError, parse_module
from .printer import print_module
from .rewrite import PartitionError
from .schedule import Partitioner, cookbook_schedule, tactic_from_json
from .sim import BUILTIN_SPECS, load_machine_spec
from .spmd import COUNTED_COLLECTIVES, localize, lower_to_spmd
from .spmd_interp import DivergenceError, relative_error, spmd_interpret
from .verify import VerifyError, verify_module

OK, BAD_INPUT, CONFLICTS, DIVERGED = 0, 1, 2, 3


def _load_module(args) -> tuple[Module, str | None]:
    """(module, model name if built-in). Module has the mesh attached."""
    name = args.module
    if name in MODELS:
        kwargs = {}
        if name == "mlp":
            kwargs["hidden_layers"] = args.layers
        if name == "transformer":
            kwargs["blocks"] = args.blocks
        module, model = build_model(name, **kwargs), name
    elif os.path.exists(name):
        with open(name) as fh:
            module, model = parse_module(fh.read()), None
    else:
        raise ParseError(f"--module {name!r} is neither a built-in model "
                         f"({sorted(MODELS)}) nor a file")
    if args.mesh:
        module.mesh = Mesh.parse(args.mesh)
    if module.mesh is None:
        raise ParseError("no mesh: pass --mesh or declare one in the module")
    verify_module(module)
    return module, model


def _load_tactics(args, module: Module, model: str | None) -> list:
    sched = args.schedule
    if not sched:
        return []
    if os.path.exists(sched):
        with open(sched) as fh:
            payload = json.load(fh)
        if not isinstance(payload, list):
            raise ValueError("schedule file must hold a JSON list of tactics")
        return [tactic_from_json(d) for d in payload]
    names = [s.strip() for s in sched.split(",") if s.strip()]
    if model is None:
        raise ValueError("named schedules need a built-in model; "
                         "use a JSON schedule file for modules from disk")
    return cookbook_schedule(model, names, module)


def _partition(args) -> Partitioner:
    module, model = _load_module(args)
    machine = load_machine_spec(args.spec) if args.spec else None
    p = Partitioner(module, machine=machine)
    for tactic in _load_tactics(args, module, model):
        p.apply(tactic)
    return p


def _dump(p: Partitioner, dump_dir: str):
    os.makedirs(dump_dir, exist_ok=True)
    ex = p.export()
    for fname, key in (("core.ir", "ir"), ("spmd.ir", "spmd_ir"),
                       ("local.ir", "local_ir")):
        with open(os.path.join(dump_dir, fname), "w") as fh:
            fh.write(ex[key])
    with open(os.path.join(dump_dir, "sharding.json"), "w") as fh:
        json.dump(ex["sharding"], fh, indent=2)
    with open(os.path.join(dump_dir, "report.json"), "w") as fh:
        json.dump({"counts": ex["counts"], "cost": ex["cost"],
                   "reports": ex["reports"]}, fh, indent=2)


def _final_conflicts(p: Partitioner) -> list[dict]:
    return p.reports[-1].conflicts if p.reports else []


def cmd_partition(args) -> int:
    p = _partition(args)
    ex = p.export()
    if args.json:
        print(json.dumps(ex, indent=2))
    else:
        for rep in p.reports:
            acts = ", ".join(
                a["kind"] if a["kind"] == "propagate"
                else f"{a['kind']} {a['value']}"
                     + (f".{a['dim']}" if "dim" in a else "")
                     + f"@{a['axis']}"
                for a in rep.actions)
            print(f"[{rep.label}] {acts}")
            print(f"  counts: {rep.counts}  runtime: "
                  f"{rep.cost['runtime_s']:.3e}s")
            for c in rep.conflicts:
                print(f"  conflict: {c['text']}")
        print(ex["local_ir"], end="")
    if args.dump_dir:
        _dump(p, args.dump_dir)
    return CONFLICTS if _final_conflicts(p) else OK


def cmd_verify(args) -> int:
    p = _partition(args)
    if _final_conflicts(p):
        for c in _final_conflicts(p):
            print("conflict:", c["text"], file=sys.stderr)
        return CONFLICTS
    loc, sharding = localize(lower_to_spmd(p.module))
    if args.self_test_corrupt:
        # making an all_reduce a no-op keeps every shape legal but leaves
        # partial sums in the data, which the comparison must flag
        for op, _ in walk_ops(loc.func("main")):
            if op.kind == "all_reduce":
                op.attrs = dict(op.attrs, axes=[])
                break
        else:
            raise ValueError("--self-test-corrupt needs a schedule that "
                             "produces an all_reduce")
    if args.trials <= 0:
        print("warning: 0 trials requested, nothing verified", file=sys.stderr)
        return OK
    reference = p.module.clone()
    worst = 0.0
    try:
        for trial in range(args.trials):
            ins = random_inputs(reference, seed=args.seed + trial)
            want = interpret(reference, ins)
            got = spmd_interpret(loc, sharding, ins, tol=args.tol)
            for i, (g, w) in enumerate(zip(got, want)):
                err = relative_error(g, w)
                worst = max(worst, err)
                if err > args.tol:
                    raise DivergenceError(
                        f"result {i} diverges: relative error {err:.3e} "
                        f"> {args.tol:.1e} (trial {trial})")
    except DivergenceError as e:
        print(f"FAIL {e}", file=sys.stderr)
        return DIVERGED
    print(f"ok: {args.trials} trials, max relative error {worst:.3e} "
          f"(tolerance {args.tol:.1e})")
    return OK


def cmd_simulate(args) -> int:
    p = _partition(args)
    ex = p.export()
    if args.json:
        print(json.dumps({"counts": ex["counts"], "cost": ex["cost"]},
                         indent=2))
    else:
        c = ex["cost"]
        print(f"machine:      {p.machine.name}")
        print(f"runtime:      {c['runtime_s']:.6e} s")
        print(f"peak memory:  {c['peak_memory_bytes']:,} bytes/device")
        print(f"compute:      {c['compute_flops']:,.0f} flops/device")
        print(f"comm volume:  {c['comm_bytes']:,.0f} bytes/device")
        print(f"mfu:          {c['mfu_percent']:.2f}%")
        print(f"collectives:  {ex['counts']}")
    return CONFLICTS if _final_conflicts(p) else OK


def cmd_collectives(args) -> int:
    p = _partition(args)
    loc, _ = localize(lower_to_spmd(p.module))
    ex_counts = {k: 0 for k in COUNTED_COLLECTIVES}
    rows = []
    for op, _ in walk_ops(loc.func("main")):
        if op.kind in ex_counts:
            ex_counts[op.kind] += 1
            where = op.attrs.get("axes", op.attrs.get("axes_per_dim"))
            rows.append((op.kind, str(where), op.result_types[0].render()))
    if args.json:
        print(json.dumps({"counts": ex_counts,
                          "ops": [{"kind": k, "axes": a, "type": t}
                                  for k, a, t in rows]}, indent=2))
    else:
        for k, a, t in rows:
            print(f"{k:<16} {a:<24} {t}")
        header = "  ".join(f"{k:>14}" for k in COUNTED_COLLECTIVES)
        values = "  ".join(f"{ex_counts[k]:>14}" for k in COUNTED_COLLECTIVES)
        print(header)
        print(values)
    return CONFLICTS if _final_conflicts(p) else OK


def cmd_generate(args) -> int:
    module, _ = _load_module(args)
    text = print_module(module)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text, end="")
    return OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return OK


def _add_common(sp, mesh_required: bool = False):
    sp.add_argument("--module", required=True,
                    help="built-in model name or path to an IR file")
    sp.add_argument("--mesh", default=None,
                    help='mesh axes, e.g. "B:4,M:2"')
    sp.add_argument("--layers", type=int, default=1,
                    help="hidden layers for the mlp model")
    sp.add_argument("--blocks", type=int, default=1,
                    help="blocks for the transformer model")


def _add_schedule(sp):
    sp.add_argument("--schedule", default="",
                    help="comma-separated cookbook stages (e.g. bp,mp,z3) "
                         "or a JSON tactics file")
    sp.add_argument("--spec", default=None,
                    help="machine name or spec file for cost reports")


def build_arg_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="spindle",
        description="Partition tensor programs over a device mesh.")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("partition", help="apply a schedule and print the result")
    _add_common(sp)
    _add_schedule(sp)
    sp.add_argument("--dump-dir", default=None,
                    help="write core/spmd/local IR, sharding, and report here")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_partition)

    sp = sub.add_parser("verify",
                        help="differential-test partitioned vs reference")
    _add_common(sp)
    _add_schedule(sp)
    sp.add_argument("--trials", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-5)
    sp.add_argument("--self-test-corrupt", action="store_true",
                    help=argparse.SUPPRESS)
    sp.set_defaults(fn=cmd_verify)

    sp = sub.add_parser("simulate", help="cost a partitioned program")
    _add_common(sp)
    _add_schedule(sp)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("collectives",
                        help="list communication ops after partitioning")
    _add_common(sp)
    _add_schedule(sp)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_collectives)

    sp = sub.add_parser("generate", help="emit a built-in model as IR text")
    _add_common(sp)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("serve", help="run the partitioning session service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.set_defaults(fn=cmd_serve)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ParseError, VerifyError, PartitionError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
