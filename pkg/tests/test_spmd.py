"""SPMD lowering: collective insertion, fusion rules, localization."""
import numpy as np
import pytest

from spindle.interp import interpret, random_inputs
from spindle.ir import Mesh
from spindle.models import build_model
from spindle.parser import parse_module
from spindle.printer import print_module
from spindle.rewrite import apply_tile, propagate
from spindle.spmd import (
    ShardingSpec,
    collective_counts,
    fuse_collectives,
    localize,
    lower_to_spmd,
)
from spindle.spmd_interp import relative_error, spmd_interpret
from spindle.verify import verify_module


def replicated_spec(func):
    return ShardingSpec(
        args={n: [[] for _ in t.dims] for n, t in func.args},
        results=[[[] for _ in t.dims] for t in func.result_types])


def fused(prog: str):
    """Parse, fuse, and return (module, pre-fusion module) both verified."""
    before = parse_module(prog)
    verify_module(before)
    after = before.clone()
    fuse_collectives(after.func("main"))
    verify_module(after)
    return after, before


def same_behavior(after, before, results=None, seed=0):
    """Fusion must preserve device-level semantics: same replicated inputs,
    same result layouts, same reassembled globals."""
    rng = np.random.default_rng(seed)
    ins = {n: rng.standard_normal(t.dims).astype(np.float32)
           for n, t in before.func("main").args}

    def spec(m):
        s = replicated_spec(m.func("main"))
        if results is not None:
            s.results = results
        return s

    a = spmd_interpret(after, spec(after), ins)
    b = spmd_interpret(before, spec(before), ins)
    return max(relative_error(x, y) for x, y in zip(a, b))


class TestFusionRules:
    def test_slice_of_reduce_becomes_reduce_scatter(self):
        after, before = fused("""mesh {K:2}

func @main(%x: tensor<4x4xf32>) -> tensor<2x4xf32> {
  %r = all_reduce ["K"] %x : tensor<4x4xf32>
  %s = all_slice [["K"], []] %r : tensor<2x4xf32>
  return %s
}
""")
        kinds = [op.kind for op in after.func("main").ops]
        assert kinds == ["reduce_scatter"]
        rs = after.func("main").ops[0]
        assert rs.attrs["axes"] == ["K"]
        assert rs.attrs["axes_per_dim"] == [["K"], []]
        assert same_behavior(after, before, [[["K"], []]]) < 1e-6

    def test_gather_then_cross_dim_slice_becomes_all_to_all(self):
        after, before = fused("""mesh {K:2}

func @main(%x: tensor<2x4xf32>) -> tensor<4x2xf32> {
  %g = all_gather [["K"], []] %x : tensor<4x4xf32>
  %s = all_slice [[], ["K"]] %g : tensor<4x2xf32>
  return %s
}
""")
        kinds = [op.kind for op in after.func("main").ops]
        assert kinds == ["all_to_all"]
        a2a = after.func("main").ops[0]
        assert a2a.attrs["gather_dim"] == 0
        assert a2a.attrs["slice_dim"] == 1
        assert a2a.attrs["axes"] == ["K"]
        assert same_behavior(after, before, [[[], ["K"]]]) < 1e-6

    def test_slice_of_gather_same_layout_cancels(self):
        after, before = fused("""mesh {K:2}

func @main(%x: tensor<2x4xf32>) -> tensor<2x4xf32> {
  %g = all_gather [["K"], []] %x : tensor<4x4xf32>
  %s = all_slice [["K"], []] %g : tensor<2x4xf32>
  return %s
}
""")
        f = after.func("main")
        assert f.ops == []
        assert f.results == ["x"]
        assert same_behavior(after, before) < 1e-6

    def test_slice_commutes_into_disjoint_reduce(self):
        after, before = fused("""mesh {A:2, B:2}

func @main(%x: tensor<4x4xf32>) -> tensor<2x4xf32> {
  %r = all_reduce ["A"] %x : tensor<4x4xf32>
  %s = all_slice [["B"], []] %r : tensor<2x4xf32>
  return %s
}
""")
        kinds = [op.kind for op in after.func("main").ops]
        assert kinds == ["all_slice", "all_reduce"]
        assert after.func("main").ops[1].attrs["axes"] == ["A"]
        assert same_behavior(after, before, [[["B"], []]]) < 1e-6

    def test_reduce_with_second_use_not_scattered(self):
        after, _ = fused("""mesh {K:2}

func @main(%x: tensor<4x4xf32>) -> (tensor<2x4xf32>, tensor<4x4xf32>) {
  %r = all_reduce ["K"] %x : tensor<4x4xf32>
  %s = all_slice [["K"], []] %r : tensor<2x4xf32>
  return %s, %r
}
""")
        kinds = sorted(op.kind for op in after.func("main").ops)
        assert kinds == ["all_reduce", "all_slice"]

    def test_max_monoid_survives_fusion(self):
        after, before = fused("""mesh {K:2}

func @main(%x: tensor<4x4xf32>) -> tensor<2x4xf32> {
  %r = all_reduce<max> ["K"] %x : tensor<4x4xf32>
  %s = all_slice [["K"], []] %r : tensor<2x4xf32>
  return %s
}
""")
        rs = after.func("main").ops[0]
        assert rs.kind == "reduce_scatter" and rs.attrs["monoid"] == "max"
        assert same_behavior(after, before, [[["K"], []]]) < 1e-6


class TestMerges:
    def test_slice_of_slice_merges(self):
        after, before = fused("""mesh {A:2, B:2}

func @main(%x: tensor<4x4xf32>) -> tensor<2x2xf32> {
  %a = all_slice [["A"], []] %x : tensor<2x4xf32>
  %b = all_slice [[], ["B"]] %a : tensor<2x2xf32>
  return %b
}
""")
        f = after.func("main")
        assert [op.kind for op in f.ops] == ["all_slice"]
        assert f.ops[0].attrs["axes_per_dim"] == [["A"], ["B"]]
        assert same_behavior(after, before, [[["A"], ["B"]]]) < 1e-6

    def test_gather_of_gather_merges(self):
        after, before = fused("""mesh {A:2, B:2}

func @main(%x: tensor<2x2xf32>) -> tensor<4x4xf32> {
  %a = all_gather [[], ["B"]] %x : tensor<2x4xf32>
  %b = all_gather [["A"], []] %a : tensor<4x4xf32>
  return %b
}
""")
        f = after.func("main")
        assert [op.kind for op in f.ops] == ["all_gather"]
        assert f.ops[0].attrs["axes_per_dim"] == [["A"], ["B"]]
        assert same_behavior(after, before) < 1e-6


class TestLowering:
    def test_per_use_materialization(self):
        prog = """mesh {K:2}

func @main(%x: tensor<4x4xf32>) -> (tensor<4x4xf32>, tensor<4x4xf32>) {
  %t = loop "K" [#tile<0>] (%i: range<2>) {
    %s = slice 0 %x[%i] : tensor<2x4xf32>
    %e = exp %s : tensor<2x4xf32>
    yield %e
  } : tensor<4x4xf32>
  %a = neg %t : tensor<4x4xf32>
  %b = exp %t : tensor<4x4xf32>
  return %a, %b
}
"""
        m = parse_module(prog)
        verify_module(m)
        sp = lower_to_spmd(m)
        verify_module(sp)
        # one gather per consuming site, binder slice communication-free
        assert collective_counts(sp) == {"all_gather": 2, "all_reduce": 0,
                                         "reduce_scatter": 0, "all_to_all": 0}
        ins = random_inputs(m, seed=1)
        want = interpret(m, ins)
        loc, sharding = localize(sp)
        got = spmd_interpret(loc, sharding, ins)
        assert max(relative_error(g, w) for g, w in zip(got, want)) < 1e-5

    def test_sum_loop_becomes_all_reduce(self):
        m = build_model("chain")
        m.mesh = Mesh.parse("B:4,M:2")
        f = m.func("main")
        apply_tile(f, m.mesh, "w1", 1, "M")
        assert propagate(f, m.mesh) == []
        sp = lower_to_spmd(m)
        counts = collective_counts(sp)
        assert counts["all_reduce"] == 1
        ar = next(op for op, _ in __import__("spindle.ir", fromlist=["walk_ops"]).walk_ops(sp.func("main"))
                  if op.kind == "all_reduce")
        assert ar.attrs["axes"] == ["M"]

    def test_any_loop_is_an_alias(self):
        prog = """mesh {K:2}

func @main(%x: tensor<4x4xf32>) -> tensor<4x4xf32> {
  %t = loop "K" [#any] {
    yield %x
  } : tensor<4x4xf32>
  %a = neg %t : tensor<4x4xf32>
  return %a
}
"""
        sp = lower_to_spmd(parse_module(prog))
        f = sp.func("main")
        assert [op.kind for op in f.ops] == ["neg"]
        assert f.ops[0].operands == ["x"]


class TestLocalize:
    def test_chain_bp_sharded_boundaries(self):
        m = build_model("chain")
        m.mesh = Mesh.parse("B:4,M:2")
        f = m.func("main")
        apply_tile(f, m.mesh, "x", 0, "B")
        assert propagate(f, m.mesh) == []
        loc, spec = localize(lower_to_spmd(m))
        lf = loc.func("main")
        assert dict(lf.args)["x"].render() == "tensor<64x8xf32>"
        assert spec.args["x"] == [["B"], []]
        assert spec.args["w1"] == [[], []]
        assert spec.results == [[["B"], []]]
        assert collective_counts(loc) == {"all_gather": 0, "all_reduce": 0,
                                          "reduce_scatter": 0, "all_to_all": 0}
        ins = random_inputs(m, seed=3)
        want = interpret(build_model("chain"), ins)
        got = spmd_interpret(loc, spec, ins)
        assert max(relative_error(g, w) for g, w in zip(got, want)) < 1e-5

    def test_mixed_use_arg_stays_global(self):
        prog = """mesh {K:2}

func @main(%x: tensor<4x4xf32>) -> tensor<4x4xf32> {
  %s = all_slice [["K"], []] %x : tensor<2x4xf32>
  %g = all_gather [["K"], []] %s : tensor<4x4xf32>
  %a = add %g, %x : tensor<4x4xf32>
  return %a
}
"""
        m = parse_module(prog)
        loc, spec = localize(m)
        assert spec.args["x"] == [[], []]
        assert dict(loc.func("main").args)["x"].render() == "tensor<4x4xf32>"

    def test_result_not_gather_only_stays_global(self):
        prog = """mesh {K:2}

func @main(%x: tensor<2x4xf32>) -> (tensor<4x4xf32>, tensor<4x4xf32>) {
  %g = all_gather [["K"], []] %x : tensor<4x4xf32>
  %a = neg %g : tensor<4x4xf32>
  return %g, %a
}
"""
        m = parse_module(prog)
        loc, spec = localize(m)
        assert spec.results == [[[], []], [[], []]]

    def test_sharding_spec_round_trips(self):
        m = build_model("chain")
        m.mesh = Mesh.parse("B:4,M:2")
        f = m.func("main")
        apply_tile(f, m.mesh, "x", 0, "B")
        propagate(f, m.mesh)
        _, spec = localize(lower_to_spmd(m))
        again = ShardingSpec.from_json(spec.to_json())
        assert again.args == spec.args and again.results == spec.results


class TestSpmdInterp:
    def test_all_reduce_of_ones_counts_devices(self):
        prog = """mesh {K:4}

func @main(%x: tensor<2x2xf32>) -> tensor<2x2xf32> {
  %r = all_reduce ["K"] %x : tensor<2x2xf32>
  return %r
}
"""
        m = parse_module(prog)
        (out,) = spmd_interpret(m, replicated_spec(m.func("main")),
                                {"x": np.ones((2, 2), np.float32)})
        np.testing.assert_array_equal(out, np.full((2, 2), 4.0))

    def test_axis_names_are_immaterial(self):
        def lowered_text(ax_batch, ax_model):
            m = build_model("chain")
            m.mesh = Mesh.parse(f"{ax_batch}:4,{ax_model}:2")
            f = m.func("main")
            apply_tile(f, m.mesh, "x", 0, ax_batch)
            propagate(f, m.mesh)
            apply_tile(f, m.mesh, "w1", 1, ax_model)
            propagate(f, m.mesh)
            loc, _ = localize(lower_to_spmd(m))
            return print_module(loc)

        a = lowered_text("B", "M")
        b = lowered_text("P", "Q")
        assert a == b.replace("P", "B").replace("Q", "M")

    def test_divergent_replicas_raise(self):
        from spindle.spmd_interp import DivergenceError
        # a "replicated" result that is actually device-varying must be caught
        prog = """mesh {K:2}

func @main(%x: tensor<4x4xf32>) -> tensor<2x4xf32> {
  %s = all_slice [["K"], []] %x : tensor<2x4xf32>
  return %s
}
"""
        m = parse_module(prog)
        spec = ShardingSpec(args={"x": [[], []]}, results=[[[], []]])
        with pytest.raises(DivergenceError):
            spmd_interpret(m, spec, {"x": np.arange(16.0).reshape(4, 4)})
