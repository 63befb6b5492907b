"""Dense interpreter: per-op numpy oracles and loop action semantics."""
import numpy as np
import pytest

from spindle.interp import EvalError, interpret, random_inputs
from spindle.ir import FuncBuilder, Mesh, Op, Region, TensorType, Tile, Sum, AnyAction, Func, Module
from spindle.models import build_model
from spindle.parser import parse_module

rng = np.random.default_rng(7)


def one_op(kind, arrays, attrs=None):
    b = FuncBuilder()
    names = [b.arg(f"a{i}", a.shape) for i, a in enumerate(arrays)]
    r = b.emit(kind, names, attrs or {})
    b.ret(r)
    (out,) = interpret(b.build(), list(arrays))
    return out


class TestDenseOps:
    def test_matmul(self):
        a, b = rng.standard_normal((4, 8)), rng.standard_normal((8, 2))
        np.testing.assert_allclose(one_op("matmul", [a, b]), a @ b, rtol=1e-6)

    def test_add_mul(self):
        a, b = rng.standard_normal((4, 8)), rng.standard_normal((4, 8))
        np.testing.assert_array_equal(one_op("add", [a, b]), a + b)
        np.testing.assert_array_equal(one_op("mul", [a, b]), a * b)

    def test_unary(self):
        a = rng.standard_normal((3, 5))
        np.testing.assert_array_equal(one_op("neg", [a]), -a)
        np.testing.assert_allclose(one_op("exp", [a]), np.exp(a), rtol=1e-6)

    def test_transpose(self):
        a = rng.standard_normal((4, 8))
        np.testing.assert_array_equal(
            one_op("transpose", [a], {"perm": [1, 0]}), a.T)

    def test_reduce_sum_and_max(self):
        a = rng.standard_normal((4, 8))
        np.testing.assert_allclose(
            one_op("reduce", [a], {"dims": [0]}), a.sum(axis=0), rtol=1e-6)
        np.testing.assert_array_equal(
            one_op("reduce", [a], {"dims": [1], "monoid": "max"}), a.max(axis=1))
        np.testing.assert_allclose(
            one_op("reduce", [a], {"dims": [0, 1]}), a.sum(), rtol=1e-6)

    def test_reshape_broadcast(self):
        a = rng.standard_normal((4, 8))
        np.testing.assert_array_equal(
            one_op("reshape", [a], {"dims": (2, 16)}), a.reshape(2, 16))
        v = rng.standard_normal((8,))
        np.testing.assert_array_equal(
            one_op("broadcast", [v], {"dims": [1], "shape": (4, 8)}),
            np.broadcast_to(v, (4, 8)))

    def test_tag_is_identity(self):
        a = rng.standard_normal((4, 4))
        np.testing.assert_array_equal(one_op("tag", [a], {"name": "t"}), a)

    def test_constant(self):
        b = FuncBuilder()
        b.arg("x", (2,))
        c = b.constant(2.5, (3, 3))
        b.ret(c)
        (out,) = interpret(b.build(), [np.zeros(2)])
        np.testing.assert_array_equal(out, np.full((3, 3), 2.5))

    def test_positional_and_dict_inputs(self):
        m = build_model("chain")
        by_name = random_inputs(m, seed=0)
        positional = [by_name[n] for n in m.func("main").arg_names()]
        a = interpret(m, positional)
        b = interpret(m, by_name)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


def loop_module(action, yields_slice=True, k=2):
    mesh = Mesh.parse(f"K:{k}")
    t = TensorType((4, 6))
    st = TensorType((4 // k, 6))
    if yields_slice:
        inner = [Op("slice", ["s"], [st], ["x", "i"], {"dim": 0})]
        yt = st
    else:
        inner = [Op("exp", ["s"], [t], ["x"], {})]
        yt = t
    if isinstance(action, Tile):
        rd = list(yt.dims)
        rd[action.dim] *= k
        rt = TensorType(tuple(rd))
    else:
        rt = yt
    loop = Op("loop", ["r"], [rt], [], {"axis": "K", "actions": [action]},
              [Region(inner, ["s"], "i" if yields_slice else None,
                      k if yields_slice else None)])
    f = Func("main", [("x", t)], [loop], ["r"], [rt])
    return Module([f], mesh)


class TestLoops:
    def test_tile_concatenates_ascending(self):
        m = loop_module(Tile(0))
        x = np.arange(24.0).reshape(4, 6)
        (out,) = interpret(m, [x])
        np.testing.assert_array_equal(out, x)  # slices reassemble in order

    def test_sum_folds(self):
        m = loop_module(Sum("sum"))
        x = rng.standard_normal((4, 6))
        (out,) = interpret(m, [x])
        np.testing.assert_allclose(out, x[:2] + x[2:], rtol=1e-6)

    def test_max_folds(self):
        m = loop_module(Sum("max"))
        x = rng.standard_normal((4, 6))
        (out,) = interpret(m, [x])
        np.testing.assert_array_equal(out, np.maximum(x[:2], x[2:]))

    def test_any_consensus_ok(self):
        m = loop_module(AnyAction(), yields_slice=False)
        x = rng.standard_normal((4, 6))
        (out,) = interpret(m, [x])
        np.testing.assert_array_equal(out, np.exp(x))

    def test_any_consensus_violation(self):
        # an any-loop whose body yields a different value per trip is invalid
        mesh = Mesh.parse("K:2")
        t = TensorType((4, 6))
        st = TensorType((2, 6))
        inner = [Op("slice", ["s"], [st], ["x", "i"], {"dim": 0})]
        loop = Op("loop", ["r"], [st], [], {"axis": "K", "actions": [AnyAction()]},
                  [Region(inner, ["s"], "i", 2)])
        f = Func("main", [("x", t)], [loop], ["r"], [st])
        m = Module([f], mesh)
        with pytest.raises(EvalError):
            interpret(m, [rng.standard_normal((4, 6))])

    def test_nested_loops(self):
        prog = """mesh {A:2, B:2}

func @main(%x: tensor<4x4xf32>) -> tensor<4x4xf32> {
  %r = loop "A" [#tile<0>] (%i: range<2>) {
    %s = loop "B" [#tile<1>] (%j: range<2>) {
      %a = slice 0 %x[%i] : tensor<2x4xf32>
      %b = slice 1 %a[%j] : tensor<2x2xf32>
      %e = neg %b : tensor<2x2xf32>
      yield %e
    } : tensor<2x4xf32>
    yield %s
  } : tensor<4x4xf32>
  return %r
}
"""
        m = parse_module(prog)
        x = rng.standard_normal((4, 4))
        (out,) = interpret(m, [x])
        np.testing.assert_array_equal(out, -x)


class TestHarness:
    def test_random_inputs_deterministic(self):
        m = build_model("mlp")
        a = random_inputs(m, seed=3)
        b = random_inputs(m, seed=3)
        c = random_inputs(m, seed=4)
        assert a.keys() == b.keys() == c.keys()
        for n in a:
            np.testing.assert_array_equal(a[n], b[n])
        assert any(not np.array_equal(a[n], c[n]) for n in a)

    def test_interpret_deterministic(self):
        m = build_model("transformer")
        ins = random_inputs(m, seed=1)
        a = interpret(m, ins)
        b = interpret(m, ins)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)  # bit-identical

    def test_float64_flows_through(self):
        m = build_model("chain")
        ins = random_inputs(m, seed=0, dtype=np.float64)
        outs = interpret(m, ins)
        assert all(o.dtype == np.float64 for o in outs)
