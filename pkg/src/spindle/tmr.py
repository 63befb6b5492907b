"""Tiling registry: how tile actions move through each op kind.

An entry pairs per-operand tiling requirements (Tile(dim) or None for "no
requirement") with the action the op's result then carries. Matching an op's
current context against its entries drives propagation:

  full match     every required operand already tiled as demanded (forward),
                 or the result is demanded tiled exactly as the entry produces
                 (backward). A full match can be rewritten immediately.
  partial match  at least one requirement met, the rest merely absent; the
                 missing operands are candidates for inferred tiling.

An operand tiled differently from a requirement contradicts the entry and
removes it from consideration entirely.
"""
from __future__ import annotations

from dataclasses import dataclass

from .ir import Op, Sum, TensorType, Tile


@dataclass(frozen=True)
class Entry:
    operands: tuple  # Tile | None per operand
    result: object   # Tile | Sum

    def describe(self, kind: str) -> str:
        reqs = ", ".join("_" if r is None else r.render() for r in self.operands)
        return f"{kind}({reqs}) -> {self.result.render()}"


def entries_for(op: Op, operand_types: list[TensorType]) -> list[Entry]:
    k = op.kind
    if k == "matmul":
        return [
            Entry((Tile(0), None), Tile(0)),
            Entry((None, Tile(1)), Tile(1)),
            Entry((Tile(1), Tile(0)), Sum("sum")),
        ]
    if k in ("add", "mul"):
        rank = operand_types[0].rank
        return [Entry((Tile(d), Tile(d)), Tile(d)) for d in range(rank)]
    if k in ("neg", "exp", "tag"):
        rank = operand_types[0].rank
        return [Entry((Tile(d),), Tile(d)) for d in range(rank)]
    if k == "transpose":
        perm = op.attrs["perm"]
        return [Entry((Tile(d),), Tile(perm.index(d))) for d in range(len(perm))]
    if k == "reduce":
        dims = set(op.attrs["dims"])
        monoid = op.attrs.get("monoid", "sum")
        out = []
        for d in range(operand_types[0].rank):
            if d in dims:
                out.append(Entry((Tile(d),), Sum(monoid)))
            else:
                shifted = d - sum(1 for r in dims if r < d)
                out.append(Entry((Tile(d),), Tile(shifted)))
        return out
    if k == "reshape":
        in_dims = operand_types[0].dims
        out_dims = tuple(op.attrs["dims"])
        out = []
        for d in range(len(in_dims)):
            pin = 1
            for v in in_dims[:d]:
                pin *= v
            for d2 in range(len(out_dims)):
                pout = 1
                for v in out_dims[:d2]:
                    pout *= v
                if pin == pout:
                    out.append(Entry((Tile(d),), Tile(d2)))
        return out
    if k == "broadcast":
        return [Entry((Tile(i),), Tile(rd)) for i, rd in enumerate(op.attrs["dims"])]
    return []  # constant and anything non-registry


def applicable(entry: Entry, operand_types: list[TensorType],
               result_type: TensorType, axis_size: int) -> bool:
    """Entry usable at this axis size: every sliced dim must divide evenly."""
    for req, t in zip(entry.operands, operand_types):
        if isinstance(req, Tile) and t.dims[req.dim] % axis_size != 0:
            return False
    if isinstance(entry.result, Tile) and result_type.dims[entry.result.dim] % axis_size != 0:
        return False
    return True


@dataclass
class Match:
    entry: Entry
    missing: tuple[int, ...]  # operand indices needing inferred tiling (partial only)


def classify(entries: list[Entry], octx: list, rctx) -> tuple[list[Entry], list[Match]]:
    """Split entries into full matches and completable-looking partials.

    octx: per-operand Tile(d) (tiled on the axis at dim d) or None.
    rctx: Tile(d) demanded by sliced uses of the result, or None.
    Forward fulls are preferred: backward fulls only count when no forward
    full exists, so an op already satisfied by its operands is not re-matched
    against use-site demands.
    """
    forward, backward, partials = [], [], []
    for e in entries:
        contra = any(
            isinstance(req, Tile) and octx[i] is not None and octx[i] != req
            for i, req in enumerate(e.operands)
        )
        if contra:
            continue
        missing = tuple(
            i for i, req in enumerate(e.operands)
            if isinstance(req, Tile) and octx[i] is None
        )
        sat = sum(
            1 for i, req in enumerate(e.operands)
            if isinstance(req, Tile) and octx[i] == req
        )
        if not missing:
            forward.append(e)
        elif rctx is not None and e.result == rctx:
            backward.append(e)
        elif sat >= 1:
            partials.append(Match(e, missing))
    fulls = forward if forward else backward
    return fulls, partials
