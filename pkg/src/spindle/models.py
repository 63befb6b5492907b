"""Built-in example programs.

Training-step models carry a hand-written backward pass and momentum update,
so a single function maps (inputs, params, momenta) to (loss, input gradient,
new params, new momenta). Writing the backward explicitly (including the
transposes) is what
gives the partitioner real material to work with: gradient matmuls contract
over the batch dimension, parameter updates touch every weight twice, and so
on. Shapes are kept small; the point is structure, not scale.
"""
from __future__ import annotations

from .ir import FuncBuilder, Module

MOMENTUM = 0.9
LEARNING_RATE = 0.01


def chain(batch: int = 256) -> Module:
    """Two stacked matmuls, the smallest interesting pipeline."""
    b = FuncBuilder()
    x = b.arg("x", (batch, 8))
    w1 = b.arg("w1", (8, 32))
    w2 = b.arg("w2", (32, 16))
    h = b.emit("matmul", [x, w1], name="h")
    o = b.emit("matmul", [h, w2], name="o")
    b.ret(o)
    return b.build()


def transpose_diag(n: int = 8) -> Module:
    """A value multiplied against its own transpose; the tagged transpose is
    the classic case where batch tiling reaches a matmul along both operands."""
    b = FuncBuilder()
    x = b.arg("x", (n, n))
    t = b.emit("transpose", [x], {"perm": [1, 0]})
    tx = b.emit("tag", [t], {"name": "tx"}, name="tx")
    o = b.emit("matmul", [x, tx], name="o")
    b.ret(o)
    return b.build()


class _Grad:
    """Shared pieces of the hand-written training steps."""

    def __init__(self, b: FuncBuilder):
        self.b = b

    def scaled(self, scale: float, value: str, dims) -> str:
        c = self.b.constant(scale, dims)
        return self.b.emit("mul", [c, value])

    def sub(self, a: str, bb: str, name: str | None = None) -> str:
        return self.b.emit("add", [a, self.b.emit("neg", [bb])], name=name)

    def mse_loss(self, pred: str, y: str, dims) -> tuple[str, str]:
        """Returns (loss, d_pred) for sum((pred - y)^2)."""
        d = self.sub(pred, y)
        loss = self.b.emit("reduce", [self.b.emit("mul", [d, d])],
                           {"dims": [0, 1]}, name="loss")
        dpred = self.scaled(2.0, d, dims)
        return loss, dpred

    def matmul_grads(self, lhs: str, rhs: str, dout: str,
                     dlhs_name: str | None = None):
        """Gradients of out = lhs @ rhs."""
        lhs_t = self.b.emit("transpose", [lhs], {"perm": [1, 0]})
        drhs = self.b.emit("matmul", [lhs_t, dout])
        rhs_t = self.b.emit("transpose", [rhs], {"perm": [1, 0]})
        dlhs = self.b.emit("matmul", [dout, rhs_t], name=dlhs_name)
        return dlhs, drhs

    def square_act(self, z: str) -> str:
        return self.b.emit("mul", [z, z])

    def square_act_grad(self, z: str, dh: str, dims) -> str:
        return self.b.emit("mul", [dh, self.scaled(2.0, z, dims)])

    def momentum_update(self, param: str, momentum: str, grad: str, dims,
                        new_name: str):
        """m' = mu*m + g; p' = p - lr*m'. Returns (p', m')."""
        m2 = self.b.emit("add", [self.scaled(MOMENTUM, momentum, dims), grad],
                         name="new_" + momentum)
        step = self.scaled(LEARNING_RATE, m2, dims)
        return self.sub(param, step, name=new_name), m2


def mlp_train(hidden_layers: int = 1, batch: int = 8, width: int = 8) -> Module:
    """One SGD-with-momentum step of a square-activation MLP.

    Arguments: x, y, weights w1..w{L+1}, biases b1..b{L+1}, and their momenta
    mw*/mb*. Returns the loss and the gradient with respect to x, followed by
    updated parameters and momenta.
    """
    L = hidden_layers
    b = FuncBuilder()
    g = _Grad(b)
    x = b.arg("x", (batch, width))
    y = b.arg("y", (batch, width))
    ws = [b.arg(f"w{i}", (width, width)) for i in range(1, L + 2)]
    bs = [b.arg(f"b{i}", (width,)) for i in range(1, L + 2)]
    mws = [b.arg(f"mw{i}", (width, width)) for i in range(1, L + 2)]
    mbs = [b.arg(f"mb{i}", (width,)) for i in range(1, L + 2)]
    dims = (batch, width)

    # forward
    hs = [x]      # layer inputs
    zs = []       # pre-activations, needed for the backward pass
    h = x
    for i in range(L):
        lin = b.emit("matmul", [h, ws[i]])
        z = b.emit("add", [lin, b.emit("broadcast", [bs[i]],
                                       {"dims": [1], "shape": list(dims)})])
        zs.append(z)
        h = g.square_act(z)
        hs.append(h)
    lin = b.emit("matmul", [h, ws[L]])
    pred = b.emit("add", [lin, b.emit("broadcast", [bs[L]],
                                      {"dims": [1], "shape": list(dims)})],
                  name="pred")
    loss, dz = g.mse_loss(pred, y, dims)

    # backward, top down; dz is the gradient at each layer's linear output
    dws, dbs = [None] * (L + 1), [None] * (L + 1)
    dx = None
    for i in range(L, -1, -1):
        dbs[i] = b.emit("reduce", [dz], {"dims": [0]})
        dh, dws[i] = g.matmul_grads(hs[i], ws[i], dz,
                                    dlhs_name="dx" if i == 0 else None)
        if i > 0:
            dz = g.square_act_grad(zs[i - 1], dh, dims)
        else:
            dx = dh

    # momentum updates
    outs = [loss, dx]
    new_ms = []
    for i in range(L + 1):
        p2, m2 = g.momentum_update(ws[i], mws[i], dws[i], (width, width),
                                   f"new_w{i + 1}")
        outs.append(p2)
        new_ms.append(m2)
    for i in range(L + 1):
        p2, m2 = g.momentum_update(bs[i], mbs[i], dbs[i], (width,),
                                   f"new_b{i + 1}")
        outs.append(p2)
        new_ms.append(m2)
    b.ret(*(outs + new_ms))
    return b.build()


def mini_transformer_train(blocks: int = 1, batch: int = 8,
                           d_model: int = 8, d_ff: int = 16) -> Module:
    """One training step of a toy residual network in transformer shape.

    Each block is two residual sublayers ("attention" and "feed-forward",
    both plain matmul pairs with a square activation between): the up
    projection widens, the down projection returns to the model width. No
    biases, so every parameter is a matrix with a clean parallel dimension.
    """
    b = FuncBuilder()
    g = _Grad(b)
    dims = (batch, d_model)
    x = b.arg("x", dims)
    y = b.arg("y", dims)
    names, shapes = [], {}
    for k in range(blocks):
        for part, shape in (("att_up", (d_model, d_model)),
                            ("att_down", (d_model, d_model)),
                            ("ff_up", (d_model, d_ff)),
                            ("ff_down", (d_ff, d_model))):
            n = f"blk{k}_{part}"
            names.append(n)
            shapes[n] = shape
            b.arg(n, shape)
    for n in names:
        b.arg(f"m_{n}", shapes[n])

    def sublayer(h, up, down, mid_dims):
        lin = b.emit("matmul", [h, up])
        act = g.square_act(lin)
        out = b.emit("matmul", [act, down])
        return b.emit("add", [h, out]), lin, act

    # forward, remembering everything the backward needs
    trace = []
    h = x
    for k in range(blocks):
        h_in = h
        h, a_lin, a_act = sublayer(h, f"blk{k}_att_up", f"blk{k}_att_down", dims)
        h_mid = h
        h, f_lin, f_act = sublayer(h, f"blk{k}_ff_up", f"blk{k}_ff_down",
                                   (batch, d_ff))
        trace.append((h_in, a_lin, a_act, h_mid, f_lin, f_act))
    loss, dh = g.mse_loss(h, y, dims)

    def sublayer_grads(h_in, lin, act, up, down, dh, mid_dims, name=None):
        """Backward of one residual sublayer; returns (dh_in, d_up, d_down)."""
        dact, d_down = g.matmul_grads(act, down, dh)
        dlin = g.square_act_grad(lin, dact, mid_dims)
        dh_sub, d_up = g.matmul_grads(h_in, up, dlin)
        return b.emit("add", [dh, dh_sub], name=name), d_up, d_down

    grads = {}
    for k in range(blocks - 1, -1, -1):
        h_in, a_lin, a_act, h_mid, f_lin, f_act = trace[k]
        dh, grads[f"blk{k}_ff_up"], grads[f"blk{k}_ff_down"] = sublayer_grads(
            h_mid, f_lin, f_act, f"blk{k}_ff_up", f"blk{k}_ff_down", dh,
            (batch, d_ff))
        dh, grads[f"blk{k}_att_up"], grads[f"blk{k}_att_down"] = sublayer_grads(
            h_in, a_lin, a_act, f"blk{k}_att_up", f"blk{k}_att_down", dh, dims,
            name="dx" if k == 0 else None)

    outs, new_ms = [loss, dh], []
    for n in names:
        p2, m2 = g.momentum_update(n, f"m_{n}", grads[n], shapes[n], f"new_{n}")
        outs.append(p2)
        new_ms.append(m2)
    b.ret(*(outs + new_ms))
    return b.build()


MODELS = {
    "chain": chain,
    "mlp": mlp_train,
    "transformer": mini_transformer_train,
    "transpose_diag": transpose_diag,
}


def build_model(name: str, **kwargs) -> Module:
    if name not in MODELS:
        raise ValueError(f"unknown model {name!r}; available: {sorted(MODELS)}")
    return MODELS[name](**kwargs)
