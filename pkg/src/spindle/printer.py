"""Canonical textual form. `parse_module(print_module(m))` is the identity."""
from __future__ import annotations

from .ir import Func, Module, Op, Region, render_action

# Attrs rendered in braces, in this order. Everything else (e.g. loop origin
# tags used for provenance) is in-memory only and does not print.
_BRACE_ATTRS = ("perm", "dims", "monoid")


def _render_attr_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(str(x) for x in v) + "]"
    return str(v)


def _brace_attrs(op: Op) -> str:
    items = []
    for k in _BRACE_ATTRS:
        if k not in op.attrs:
            continue
        if k == "monoid" and op.attrs[k] == "sum":
            continue  # sum is the default
        items.append(f"{k} = {_render_attr_value(op.attrs[k])}")
    return " {" + ", ".join(items) + "}" if items else ""


def _axes_list(axes) -> str:
    return "[" + ", ".join(f'"{a}"' for a in axes) + "]"


def _axes_per_dim(apd) -> str:
    return "[" + ", ".join(_axes_list(axes) for axes in apd) + "]"


def _monoid_suffix(op: Op) -> str:
    m = op.attrs.get("monoid", "sum")
    return f"<{m}>" if m != "sum" else ""


def _print_op(op: Op, indent: int, lines: list[str]):
    pad = "  " * indent
    lhs = ", ".join(f"%{r}" for r in op.results)
    types = ", ".join(t.render() for t in op.result_types)
    k = op.kind

    if k == "loop":
        axis = op.attrs["axis"]
        actions = "[" + ", ".join(render_action(a) for a in op.attrs["actions"]) + "]"
        region = op.regions[0]
        binder = f" (%{region.arg}: range<{region.arg_size}>)" if region.arg else ""
        lines.append(f'{pad}{lhs} = loop "{axis}" {actions}{binder} {{')
        for inner in region.ops:
            _print_op(inner, indent + 1, lines)
        ys = ", ".join(f"%{y}" for y in region.yields)
        lines.append(f"{pad}  yield {ys}")
        lines.append(f"{pad}}} : {types}")
        return

    if k == "constant":
        body = f"constant {op.attrs['value']!r}"
    elif k == "slice":
        body = f"slice {op.attrs['dim']} %{op.operands[0]}[%{op.operands[1]}]"
    elif k == "tag":
        body = f'tag "{op.attrs["name"]}" %{op.operands[0]}'
    elif k == "all_reduce":
        body = f"all_reduce{_monoid_suffix(op)} {_axes_list(op.attrs['axes'])} %{op.operands[0]}"
    elif k == "all_slice":
        body = f"all_slice {_axes_per_dim(op.attrs['axes_per_dim'])} %{op.operands[0]}"
    elif k == "all_gather":
        body = f"all_gather {_axes_per_dim(op.attrs['axes_per_dim'])} %{op.operands[0]}"
    elif k == "all_to_all":
        body = (f"all_to_all {op.attrs['gather_dim']}->{op.attrs['slice_dim']} "
                f"{_axes_list(op.attrs['axes'])} %{op.operands[0]}")
    elif k == "reduce_scatter":
        body = (f"reduce_scatter{_monoid_suffix(op)} {_axes_list(op.attrs['axes'])} "
                f"{_axes_per_dim(op.attrs['axes_per_dim'])} %{op.operands[0]}")
    else:
        args = ", ".join(f"%{o}" for o in op.operands)
        body = f"{k} {args}" if args else k
        body += _brace_attrs(op)

    lines.append(f"{pad}{lhs} = {body} : {types}")


def print_func(func: Func) -> str:
    params = ", ".join(f"%{n}: {t.render()}" for n, t in func.args)
    rets = ", ".join(t.render() for t in func.result_types)
    if len(func.result_types) > 1:
        rets = f"({rets})"
    lines = [f"func @{func.name}({params}) -> {rets} {{"]
    for op in func.ops:
        _print_op(op, 1, lines)
    lines.append("  return " + ", ".join(f"%{r}" for r in func.results))
    lines.append("}")
    return "\n".join(lines)


def print_module(module: Module) -> str:
    parts = []
    if module.mesh is not None:
        parts.append("mesh " + module.mesh.render())
    parts.extend(print_func(f) for f in module.funcs)
    return "\n\n".join(parts) + "\n"
