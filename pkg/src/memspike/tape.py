"""Fixed-vocabulary reverse-mode tape for backprop-through-time.

The tape records every primitive applied during a forward pass (convolution,
dense matmul, pooling, LIF charge, spike, sigmoid, straight-through Bernoulli,
upsample, reshape, stack-mean).  ``backward`` seeds one or more recorded nodes
with output gradients and walks the records in reverse order, which is a
reverse topological order because parents are always recorded before children.
After backward, ``node.grad`` holds d loss / d node.value for every visited
node, including each layer's pre-activation input at every timestep; that is
the quantity the straight-through score update consumes.

Spike nodes backpropagate the rectangular pseudo-derivative.  The hard-reset
gate (1 - o_prev) inside the LIF charge passes gradient into o_prev, which is
itself a spike node, so its credit also flows through the pseudo-derivative.

Not a general autodiff: the op vocabulary is fixed and tapes are single-owner
during forward/backward.  Tapes are never persisted.
"""

from __future__ import annotations

import numpy as np

from . import layers
from .neuron import LifParams, pseudo_grad, spike_hard, spike_smoothed

__all__ = ["Node", "Tape", "backward"]


class Node:
    """One recorded value.  ``grad`` is populated by :func:`backward`."""

    __slots__ = ("op", "value", "parents", "grad", "_backward", "_forward", "idx", "tape")

    def __init__(self, op, value, parents, backward_fn, forward_fn, idx, tape):
        self.op = op
        self.value = value
        self.parents = parents
        self.grad = None
        self._backward = backward_fn
        self._forward = forward_fn
        self.idx = idx
        self.tape = tape

    def __repr__(self):
        return f"Node#{self.idx}[{self.op}]{getattr(self.value, 'shape', ())}"


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def _record(self, op, value, parents, backward_fn, forward_fn=None) -> Node:
        node = Node(op, value, tuple(parents), backward_fn, forward_fn, len(self.nodes), self)
        self.nodes.append(node)
        return node

    def leaf(self, value, op="leaf") -> Node:
        return self._record(op, np.asarray(value), (), None, None)

    # ---- primitives -----------------------------------------------------

    def linear(self, x: Node, w: Node, geom: layers.LayerGeometry) -> Node:
        value = layers.fc_value(x.value, w.value, geom)

        def bwd(g):
            return [(x, g @ w.value.T), (w, x.value.T @ g)]

        return self._record("linear", value, (x, w), bwd,
                            lambda: layers.fc_value(x.value, w.value, geom))

    def conv2d(self, x: Node, w: Node, geom: layers.LayerGeometry) -> Node:
        value = layers.conv2d_value(x.value, w.value, geom)

        def bwd(g):
            gw = layers.conv2d_weight_grad(x.value, g, geom)
            gx = layers.conv2d_input_grad(g, w.value, x.value.shape, geom)
            return [(x, gx), (w, gw)]

        return self._record("conv2d", value, (x, w), bwd,
                            lambda: layers.conv2d_value(x.value, w.value, geom))

    def avgpool2(self, x: Node) -> Node:
        value = layers.avgpool2_value(x.value)

        def bwd(g):
            return [(x, layers.avgpool2_grad(g, x.value.shape))]

        return self._record("avgpool2", value, (x,), bwd,
                            lambda: layers.avgpool2_value(x.value))

    def upsample2(self, x: Node) -> Node:
        value = layers.upsample2_value(x.value)

        def bwd(g):
            return [(x, layers.upsample2_grad(g))]

        return self._record("upsample2", value, (x,), bwd,
                            lambda: layers.upsample2_value(x.value))

    def reshape(self, x: Node, shape) -> Node:
        shape = tuple(shape)
        old = x.value.shape

        def bwd(g):
            return [(x, g.reshape(old))]

        return self._record("reshape", x.value.reshape(shape), (x,), bwd,
                            lambda: x.value.reshape(shape))

    def lif_charge(self, x: Node, u_prev: Node | None, o_prev: Node | None,
                   params: LifParams) -> Node:
        """u_t = tau * u_{t-1} * (1 - o_{t-1}) + x_t; first step has no history."""
        if (u_prev is None) != (o_prev is None):
            raise ValueError("u_prev and o_prev must be supplied together")
        if u_prev is None:
            def bwd0(g):
                return [(x, g)]

            return self._record("lif_charge", x.value, (x,), bwd0, lambda: x.value)

        tau = x.value.dtype.type(params.tau_decay)
        value = tau * u_prev.value * (1 - o_prev.value) + x.value

        def bwd(g):
            return [
                (x, g),
                (u_prev, g * (tau * (1 - o_prev.value))),
                (o_prev, g * (-tau * u_prev.value)),
            ]

        return self._record(
            "lif_charge", value, (x, u_prev, o_prev), bwd,
            lambda: tau * u_prev.value * (1 - o_prev.value) + x.value)

    def spike(self, u: Node, params: LifParams, smoothed: bool = False) -> Node:
        """Heaviside spike (or its clipped-ramp surrogate when smoothed=True).

        Backward is the rectangular pseudo-derivative in both modes.
        """
        fwd = spike_smoothed if smoothed else spike_hard
        value = fwd(u.value, params)

        def bwd(g):
            return [(u, g * pseudo_grad(u.value, params))]

        return self._record("spike~" if smoothed else "spike", value, (u,), bwd,
                            lambda: fwd(u.value, params))

    def sigmoid(self, x: Node) -> Node:
        value = 1.0 / (1.0 + np.exp(-x.value))
        value = value.astype(x.value.dtype)

        def bwd(g):
            return [(x, g * value * (1 - value))]

        return self._record("sigmoid", value, (x,), bwd,
                            lambda: (1.0 / (1.0 + np.exp(-x.value))).astype(x.value.dtype))

    def bernoulli_st(self, p: Node, rng: np.random.Generator) -> Node:
        """Bernoulli draw with straight-through (identity) backward.

        The uniform draws are cached so replay reproduces the sample.
        """
        pv = p.value
        if np.any(pv < 0) or np.any(pv > 1):
            raise ValueError("Bernoulli probabilities must lie in [0, 1]")
        u01 = rng.random(pv.shape, dtype=np.float64)
        value = (u01 < pv).astype(pv.dtype)

        def bwd(g):
            return [(p, g)]

        return self._record("bernoulli_st", value, (p,), bwd,
                            lambda: (u01 < p.value).astype(p.value.dtype))

    def mean_stack(self, nodes) -> Node:
        """Mean across a list of same-shaped nodes (e.g. per-timestep readouts)."""
        nodes = list(nodes)
        if not nodes:
            raise ValueError("mean_stack needs at least one node")
        inv = nodes[0].value.dtype.type(1.0 / len(nodes))
        value = nodes[0].value * inv
        for n in nodes[1:]:
            value = value + n.value * inv

        def bwd(g):
            return [(n, g * inv) for n in nodes]

        def fwd():
            acc = nodes[0].value * inv
            for n in nodes[1:]:
                acc = acc + n.value * inv
            return acc

        return self._record("mean_stack", value, tuple(nodes), bwd, fwd)

    # ---- checks ----------------------------------------------------------

    def replay_check(self, atol=0.0) -> bool:
        """Re-run every recorded forward fn; True iff all outputs reproduce."""
        for node in self.nodes:
            if node._forward is None:
                continue
            again = node._forward()
            if not np.allclose(node.value, again, rtol=0.0, atol=atol):
                return False
        return True


def backward(tape: Tape, seeds) -> None:
    """Reverse sweep.  ``seeds`` maps recorded nodes to output gradients.

    Accepts a dict {node: grad} or a single (node, grad) pair.  Gradients
    accumulate on ``node.grad`` for every node reached from the seeds.
    """
    if not tape.nodes:
        raise RuntimeError("backward before any forward was recorded")
    if isinstance(seeds, tuple) and len(seeds) == 2 and isinstance(seeds[0], Node):
        seeds = {seeds[0]: seeds[1]}
    if not seeds:
        raise ValueError("no seed gradients given")
    for node in tape.nodes:
        node.grad = None
    for node, g in seeds.items():
        if node.tape is not tape:
            raise ValueError("seed node does not belong to this tape")
        g = np.asarray(g)
        if g.shape != node.value.shape:
            raise ValueError(f"seed gradient shape {g.shape} != value shape {node.value.shape}")
        node.grad = g.copy()
    # Children sit later in the record list, so the reversed walk finishes a
    # node's accumulation before visiting it; grads are never mutated in place.
    for node in reversed(tape.nodes):
        if node.grad is None or node._backward is None:
            continue
        for parent, pg in node._backward(node.grad):
            parent.grad = pg if parent.grad is None else parent.grad + pg
