"""Parser for the textual IR form emitted by `printer`.

Parsing is strict: every op's declared result type is checked against the
shape rules, so a module that parses is also shape-correct. Structural rules
that span ops (SSA scoping, mesh divisibility at slice sites) are checked here
too; `verify` re-checks them for programmatically built modules.
"""
from __future__ import annotations

import re

from .ir import (
    AnyAction,
    Func,
    Mesh,
    Module,
    Op,
    Region,
    ShapeError,
    Sum,
    TensorType,
    Tile,
    infer_result_types,
)


class ParseError(Exception):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"line {line}, col {col}: {msg}" if line else msg)
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(
    r"""
      (?P<ws>\s+)
    | (?P<comment>//[^\n]*)
    | (?P<tensortype>tensor<[^<>]*>)
    | (?P<rangetype>range<\d+>)
    | (?P<action>\#\w+(?:<\w+>)?)
    | (?P<arrow>->)
    | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
    | (?P<var>%[A-Za-z0-9_.]+)
    | (?P<string>"[^"\n]*")
    | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<punct>[(){}\[\],:=@<>])
    """,
    re.VERBOSE,
)


def _tokenize(text: str):
    tokens = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        tok = m.group()
        if kind not in ("ws", "comment"):
            tokens.append((kind, tok, line, col))
        nl = tok.count("\n")
        if nl:
            line += nl
            col = len(tok) - tok.rfind("\n")
        else:
            col += len(tok)
        pos = m.end()
    tokens.append(("eof", "", line, col))
    return tokens


class _Scope:
    """Chained lexical scope mapping value names to tensor types or range sizes."""

    def __init__(self, parent: "_Scope | None" = None):
        self.parent = parent
        self.tensors: dict[str, TensorType] = {}
        self.ranges: dict[str, int] = {}

    def define_tensor(self, name: str, t: TensorType):
        if self.lookup(name) is not None:
            raise KeyError(name)
        self.tensors[name] = t

    def define_range(self, name: str, size: int):
        if self.lookup(name) is not None:
            raise KeyError(name)
        self.ranges[name] = size

    def lookup(self, name: str):
        s = self
        while s is not None:
            if name in s.tensors:
                return ("tensor", s.tensors[name])
            if name in s.ranges:
                return ("range", s.ranges[name])
            s = s.parent
        return None


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.mesh: Mesh | None = None

    # -- token helpers --
    def peek(self, k: int = 0):
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def next(self):
        t = self.tokens[self.pos]
        if t[0] != "eof":
            self.pos += 1
        return t

    def error(self, msg: str, tok=None):
        tok = tok or self.peek()
        raise ParseError(msg, tok[2], tok[3])

    def expect(self, kind: str, text: str | None = None):
        t = self.next()
        if t[0] != kind or (text is not None and t[1] != text):
            want = text or kind
            self.error(f"expected {want!r}, got {t[1]!r}", t)
        return t

    def accept(self, kind: str, text: str | None = None):
        t = self.peek()
        if t[0] == kind and (text is None or t[1] == text):
            return self.next()
        return None

    # -- small grammars --
    def parse_type(self) -> TensorType:
        t = self.expect("tensortype")
        body = t[1][len("tensor<"):-1]
        parts = body.split("x")
        if len(parts) < 1 or parts[-1] not in ("f32", "i32"):
            self.error(f"bad tensor type {t[1]!r}", t)
        try:
            dims = tuple(int(p) for p in parts[:-1])
            return TensorType(dims, parts[-1])
        except (ValueError, ShapeError) as e:
            self.error(f"bad tensor type {t[1]!r}: {e}", t)

    def parse_int(self) -> int:
        t = self.expect("number")
        try:
            return int(t[1])
        except ValueError:
            self.error(f"expected integer, got {t[1]!r}", t)

    def parse_var(self) -> str:
        return self.expect("var")[1][1:]

    def parse_string(self) -> str:
        return self.expect("string")[1][1:-1]

    def parse_axes_list(self) -> list[str]:
        self.expect("punct", "[")
        axes = []
        while not self.accept("punct", "]"):
            if axes:
                self.expect("punct", ",")
            axes.append(self.parse_string())
        return axes

    def parse_axes_per_dim(self) -> list[list[str]]:
        self.expect("punct", "[")
        out = []
        while not self.accept("punct", "]"):
            if out:
                self.expect("punct", ",")
            out.append(self.parse_axes_list())
        return out

    def parse_action(self):
        t = self.expect("action")
        m = re.fullmatch(r"#(\w+)(?:<(\w+)>)?", t[1])
        name, param = m.group(1), m.group(2)
        if name == "tile":
            if param is None or not param.isdigit():
                self.error(f"#tile needs an integer dim, got {t[1]!r}", t)
            return Tile(int(param))
        if name == "sum":
            try:
                return Sum(param or "sum")
            except ValueError as e:
                self.error(str(e), t)
        if name == "any":
            if param is not None:
                self.error("#any takes no parameter", t)
            return AnyAction()
        self.error(f"unknown action {t[1]!r}", t)

    def parse_monoid_suffix(self) -> str:
        if self.accept("punct", "<"):
            m = self.expect("ident")[1]
            self.expect("punct", ">")
            return m
        return "sum"

    def parse_brace_attrs(self) -> dict:
        attrs = {}
        if not self.accept("punct", "{"):
            return attrs
        while not self.accept("punct", "}"):
            if attrs:
                self.expect("punct", ",")
            key = self.expect("ident")[1]
            self.expect("punct", "=")
            if self.accept("punct", "["):
                vals = []
                while not self.accept("punct", "]"):
                    if vals:
                        self.expect("punct", ",")
                    vals.append(self.parse_int())
                attrs[key] = vals
            elif self.peek()[0] == "ident":
                attrs[key] = self.next()[1]
            else:
                attrs[key] = self.parse_int()
        return attrs

    # -- module structure --
    def parse_module(self) -> Module:
        if self.peek()[:2] == ("ident", "mesh"):
            self.next()
            tok = self.peek()
            self.expect("punct", "{")
            axes = []
            while not self.accept("punct", "}"):
                if axes:
                    self.expect("punct", ",")
                name = self.expect("ident")[1]
                self.expect("punct", ":")
                axes.append((name, self.parse_int()))
            try:
                self.mesh = Mesh(tuple(axes))
            except ValueError as e:
                self.error(str(e), tok)
        funcs = []
        while self.peek()[0] != "eof":
            funcs.append(self.parse_func())
        if not funcs:
            self.error("module has no functions")
        names = [f.name for f in funcs]
        if len(set(names)) != len(names):
            self.error(f"duplicate function name in {names}")
        return Module(funcs, self.mesh)

    def parse_func(self) -> Func:
        self.expect("ident", "func")
        self.expect("punct", "@")
        name = self.expect("ident")[1]
        self.expect("punct", "(")
        scope = _Scope()
        args = []
        while not self.accept("punct", ")"):
            if args:
                self.expect("punct", ",")
            tok = self.peek()
            pname = self.parse_var()
            self.expect("punct", ":")
            ptype = self.parse_type()
            try:
                scope.define_tensor(pname, ptype)
            except KeyError:
                self.error(f"duplicate argument %{pname}", tok)
            args.append((pname, ptype))
        self.expect("arrow")
        if self.accept("punct", "("):
            result_types = [self.parse_type()]
            while self.accept("punct", ","):
                result_types.append(self.parse_type())
            self.expect("punct", ")")
        else:
            result_types = [self.parse_type()]
        self.expect("punct", "{")
        ops = self.parse_op_list(scope, terminator="return")
        self.expect("ident", "return")
        tok = self.peek()
        results = [self.parse_var()]
        while self.accept("punct", ","):
            results.append(self.parse_var())
        for r, want in zip(results, result_types):
            got = scope.lookup(r)
            if got is None:
                self.error(f"return of undefined value %{r}", tok)
            if got[0] != "tensor":
                self.error(f"cannot return range value %{r}", tok)
            if got[1] != want:
                self.error(f"return type mismatch for %{r}: {got[1].render()} vs {want.render()}", tok)
        if len(results) != len(result_types):
            self.error(f"function returns {len(results)} values, signature has {len(result_types)}", tok)
        self.expect("punct", "}")
        return Func(name, args, ops, results, result_types)

    def parse_op_list(self, scope: _Scope, terminator: str) -> list[Op]:
        ops = []
        while not (self.peek()[0] == "ident" and self.peek()[1] == terminator):
            if self.peek()[0] == "eof":
                self.error(f"unexpected end of input, expected {terminator!r}")
            ops.append(self.parse_op(scope))
        return ops

    def parse_op(self, scope: _Scope) -> Op:
        first = self.peek()
        results = [self.parse_var()]
        while self.accept("punct", ","):
            results.append(self.parse_var())
        self.expect("punct", "=")
        kind_tok = self.expect("ident")
        kind = kind_tok[1]

        operands: list[str] = []
        attrs: dict = {}
        regions: list[Region] = []
        inferred = None

        def operand(allow_range: bool = False) -> TensorType | int:
            tok = self.peek()
            nm = self.parse_var()
            got = scope.lookup(nm)
            if got is None:
                self.error(f"use of undefined value %{nm}", tok)
            if got[0] == "range" and not allow_range:
                self.error(f"%{nm} is a range value, tensor expected", tok)
            if got[0] == "tensor" and allow_range:
                self.error(f"%{nm} is a tensor, range index expected", tok)
            operands.append(nm)
            return got[1]

        if kind == "constant":
            vtok = self.expect("number")
            attrs["value"] = float(vtok[1])
            self.expect("punct", ":")
            attrs["type"] = self.parse_type()
            inferred = [attrs["type"]]
            self._bind(results, inferred, inferred, scope, first)
            return self._finish(kind, results, inferred, operands, attrs, regions)
        elif kind in ("matmul", "add", "mul"):
            t1 = operand()
            self.expect("punct", ",")
            t2 = operand()
            inferred = self._infer(kind, [t1, t2], attrs, kind_tok)
        elif kind in ("neg", "exp"):
            t1 = operand()
            inferred = self._infer(kind, [t1], attrs, kind_tok)
        elif kind in ("transpose", "reduce", "reshape", "broadcast"):
            t1 = operand()
            attrs.update(self.parse_brace_attrs())
            if kind == "reduce" and "monoid" not in attrs:
                attrs["monoid"] = "sum"
            declared = self._declared_types(results)
            if kind == "broadcast":
                attrs["shape"] = list(declared[0].dims)
            inferred = self._infer(kind, [t1], attrs, kind_tok)
            self._bind(results, declared, inferred, scope, kind_tok)
            return self._finish(kind, results, declared, operands, attrs, regions)
        elif kind == "tag":
            attrs["name"] = self.parse_string()
            t1 = operand()
            inferred = self._infer(kind, [t1], attrs, kind_tok)
        elif kind == "slice":
            attrs["dim"] = self.parse_int()
            t1 = operand()
            self.expect("punct", "[")
            idx_tok = self.peek()
            size = operand(allow_range=True)
            self.expect("punct", "]")
            inferred = self._infer("slice", [t1], {**attrs, "_range_size": size}, idx_tok)
        elif kind == "loop":
            return self.parse_loop(results, scope, kind_tok)
        elif kind == "all_reduce":
            attrs["monoid"] = self.parse_monoid_suffix()
            attrs["axes"] = self.parse_axes_list()
            t1 = operand()
            inferred = self._infer(kind, [t1], attrs, kind_tok)
        elif kind in ("all_slice", "all_gather"):
            attrs["axes_per_dim"] = self.parse_axes_per_dim()
            t1 = operand()
            inferred = self._infer(kind, [t1], attrs, kind_tok)
        elif kind == "all_to_all":
            attrs["gather_dim"] = self.parse_int()
            self.expect("arrow")
            attrs["slice_dim"] = self.parse_int()
            attrs["axes"] = self.parse_axes_list()
            t1 = operand()
            inferred = self._infer(kind, [t1], attrs, kind_tok)
        elif kind == "reduce_scatter":
            attrs["monoid"] = self.parse_monoid_suffix()
            attrs["axes"] = self.parse_axes_list()
            attrs["axes_per_dim"] = self.parse_axes_per_dim()
            t1 = operand()
            inferred = self._infer(kind, [t1], attrs, kind_tok)
        else:
            self.error(f"unknown op kind {kind!r}", kind_tok)

        declared = self._declared_types(results)
        self._bind(results, declared, inferred, scope, first)
        return self._finish(kind, results, declared, operands, attrs, regions)

    def _declared_types(self, results: list[str]) -> list[TensorType]:
        self.expect("punct", ":")
        types = [self.parse_type()]
        while len(types) < len(results):
            self.expect("punct", ",")
            types.append(self.parse_type())
        return types

    def _infer(self, kind, tys, attrs, tok, yield_types=None):
        try:
            return infer_result_types(kind, tys, attrs, yield_types, self.mesh)
        except ShapeError as e:
            self.error(str(e), tok)

    def _bind(self, results, declared, inferred, scope: _Scope, tok):
        if len(results) != len(inferred):
            self.error(f"op produces {len(inferred)} results, {len(results)} declared", tok)
        for r, d, i in zip(results, declared, inferred):
            if d != i:
                self.error(f"declared type {d.render()} for %{r}, shape rules give {i.render()}", tok)
            try:
                scope.define_tensor(r, d)
            except KeyError:
                self.error(f"redefinition of %{r}", tok)

    @staticmethod
    def _finish(kind, results, types, operands, attrs, regions) -> Op:
        attrs.pop("_range_size", None)
        return Op(kind, results, types, operands, attrs, regions)

    def parse_loop(self, results: list[str], scope: _Scope, kind_tok) -> Op:
        axis = self.parse_string()
        if self.mesh is None or not self.mesh.has(axis):
            self.error(f"loop axis {axis!r} not in mesh", kind_tok)
        self.expect("punct", "[")
        actions = [self.parse_action()]
        while self.accept("punct", ","):
            actions.append(self.parse_action())
        self.expect("punct", "]")
        arg = arg_size = None
        if self.accept("punct", "("):
            tok = self.peek()
            arg = self.parse_var()
            self.expect("punct", ":")
            rt = self.expect("rangetype")
            arg_size = int(rt[1][len("range<"):-1])
            if arg_size != self.mesh.size(axis):
                self.error(f"range<{arg_size}> does not match axis {axis!r} size {self.mesh.size(axis)}", rt)
            self.expect("punct", ")")
        self.expect("punct", "{")
        inner = _Scope(scope)
        if arg is not None:
            try:
                inner.define_range(arg, arg_size)
            except KeyError:
                self.error(f"binder %{arg} shadows an existing value", kind_tok)
        body = self.parse_op_list(inner, terminator="yield")
        self.expect("ident", "yield")
        ytok = self.peek()
        yields = [self.parse_var()]
        while self.accept("punct", ","):
            yields.append(self.parse_var())
        yield_types = []
        for y in yields:
            got = inner.lookup(y)
            if got is None:
                self.error(f"yield of undefined value %{y}", ytok)
            if got[0] != "tensor":
                self.error(f"cannot yield range value %{y}", ytok)
            yield_types.append(got[1])
        self.expect("punct", "}")
        attrs = {"axis": axis, "actions": actions}
        inferred = self._infer("loop", [], attrs, kind_tok, yield_types=yield_types)
        declared = self._declared_types(results)
        self._bind(results, declared, inferred, scope, kind_tok)
        region = Region(body, yields, arg, arg_size)
        return Op("loop", results, declared, [], attrs, [region])


def parse_module(text: str) -> Module:
    """Parse and shape-check a textual module."""
    return _Parser(text).parse_module()
