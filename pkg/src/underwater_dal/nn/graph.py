import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..lib.errors import ShapeError, StateError
from . import ops
from .tensor import Tensor

logger = logging.getLogger(__name__)

Registry = Dict[str, Tensor]


@dataclass
class OpNode:
    name: str
    kind: str
    inputs: Tuple[str, ...]
    params: Tuple[str, ...] = ()
    attrs: dict = field(default_factory=dict)


@dataclass
class InputBinding:
    """Declared graph input; ``shape`` excludes the batch axis, ``None`` entries match anything."""

    name: str
    shape: Optional[Tuple]
    dtype: str = "float"


class Graph:
    """Static, topologically ordered network.

    Nodes may only consume values that already exist when they are added, so insertion order is a
    valid evaluation order. Activations of the last :func:`forward` are kept for :func:`backward`.
    """

    def __init__(self, name: str):
        self.name = name
        self.nodes: List[OpNode] = []
        self.params: Registry = {}
        self.param_init: Dict[str, str] = {}
        self.inputs: Dict[str, InputBinding] = {}
        self.outputs: Dict[str, str] = {}
        self._values: Optional[Dict[str, np.ndarray]] = None
        self._caches: Optional[Dict[str, object]] = None

    # construction

    def _check_new_name(self, name):
        if name in self.inputs or name in self.params or any(n.name == name for n in self.nodes):
            raise ShapeError(f"graph {self.name}: duplicate name {name!r}")

    def _has_value(self, name):
        return name in self.inputs or any(n.name == name for n in self.nodes)

    def add_input(self, name: str, shape=None, dtype="float") -> str:
        self._check_new_name(name)
        self.inputs[name] = InputBinding(name, None if shape is None else tuple(shape), dtype)
        return name

    def add_param(self, name: str, shape, init="he") -> str:
        self._check_new_name(name)
        self.params[name] = Tensor(np.zeros(shape, dtype=np.float32))
        self.param_init[name] = init
        return name

    def add_node(self, kind: str, inputs: Sequence[str], params: Sequence[str] = (), name=None, **attrs) -> str:
        if kind not in ops.OPS:
            raise ShapeError(f"graph {self.name}: unknown op kind {kind!r}")
        name = name or f"{kind}_{len(self.nodes)}"
        self._check_new_name(name)
        spec = ops.OPS[kind]
        if spec.n_inputs >= 0 and len(inputs) != spec.n_inputs:
            raise ShapeError(f"node {name} ({kind}) takes {spec.n_inputs} input(s), got {len(inputs)}")
        if len(params) != spec.n_params:
            raise ShapeError(f"node {name} ({kind}) takes {spec.n_params} parameter(s), got {len(params)}")
        for ref in inputs:
            if not self._has_value(ref):
                raise ShapeError(f"node {name} ({kind}) consumes unknown value {ref!r}")
        for ref in params:
            if ref not in self.params:
                raise ShapeError(f"node {name} ({kind}) uses unknown parameter {ref!r}")
        self.nodes.append(OpNode(name, kind, tuple(inputs), tuple(params), attrs))
        return name

    def add_output(self, value: str, alias: Optional[str] = None) -> str:
        if not self._has_value(value):
            raise ShapeError(f"graph {self.name}: unknown output value {value!r}")
        self.outputs[alias or value] = value
        return alias or value

    # layer helpers

    def conv2d(self, x, prefix, in_ch, out_ch, kernel=3, stride=1, pad=None):
        pad = kernel // 2 if pad is None else pad
        w = self.add_param(f"{prefix}.w", (out_ch, in_ch, kernel, kernel), "he")
        b = self.add_param(f"{prefix}.b", (out_ch,), "zeros")
        return self.add_node("conv2d", [x], [w, b], name=prefix, stride=stride, pad=pad)

    def linear(self, x, prefix, in_features, out_features):
        w = self.add_param(f"{prefix}.w", (out_features, in_features), "he")
        b = self.add_param(f"{prefix}.b", (out_features,), "zeros")
        return self.add_node("linear", [x], [w, b], name=prefix)

    def leaky_relu(self, x, slope, name=None):
        return self.add_node("leaky_relu", [x], name=name, slope=float(slope))

    def validate(self):
        seen = set(self.inputs)
        for node in self.nodes:
            missing = [ref for ref in node.inputs if ref not in seen]
            if missing:
                raise ShapeError(f"node {node.name} consumes {missing} before they are produced")
            seen.add(node.name)
        return self

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.params.values()))


def _check_binding(graph: Graph, name, value):
    binding = graph.inputs[name]
    if binding.dtype == "int":
        value = np.asarray(value)
        if not np.issubdtype(value.dtype, np.integer):
            raise ShapeError(f"graph {graph.name}: input {name!r} must be integer, got {value.dtype}")
    if binding.shape is not None:
        got = tuple(np.shape(value)[1:])
        want = binding.shape
        if len(got) != len(want) or any(w is not None and w != g for w, g in zip(want, got)):
            raise ShapeError(f"graph {graph.name}: input {name!r} expects (N, {want}), got {np.shape(value)}")
    return value


def forward(graph: Graph, inputs: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Evaluate every node in order

    Args:
        graph (Graph): network
        inputs (Dict[str, np.ndarray]): a value for every declared input

    Returns:
        Dict[str, np.ndarray]: the graph outputs by alias
    """
    missing = set(graph.inputs) - set(inputs)
    if missing:
        raise ShapeError(f"graph {graph.name}: missing inputs {sorted(missing)}")
    values = {name: _check_binding(graph, name, inputs[name]) for name in graph.inputs}
    caches = {}
    for node in graph.nodes:
        op = ops.OPS[node.kind]
        args = [values[ref] for ref in node.inputs]
        params = [graph.params[ref].data for ref in node.params]
        try:
            out, cache = op.forward(args, params, node.attrs)
        except ShapeError as e:
            raise ShapeError(f"graph {graph.name}, node {node.name} ({node.kind}): {e}") from None
        values[node.name] = out
        caches[node.name] = cache
    graph._values, graph._caches = values, caches
    return {alias: values[ref] for alias, ref in graph.outputs.items()}


def zero_grad(graph: Graph):
    for t in graph.params.values():
        t.zero_grad()


def backward(
    graph: Graph,
    output_grads: Dict[str, np.ndarray],
    accumulate_params=True,
) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """Propagate output gradients back through the last forward pass

    Parameter gradients accumulate into each parameter's ``grad`` buffer; parameters off the path
    keep an exact zero. With ``accumulate_params=False`` the graph is only differentiated with
    respect to its inputs and no parameter buffer is touched.

    Args:
        graph (Graph): network evaluated by :func:`forward`
        output_grads (Dict[str, np.ndarray]): gradient for some outputs, keyed by alias
        accumulate_params (bool, optional): whether to write parameter gradients. Defaults to True.

    Returns:
        (Dict[str, np.ndarray], Dict[str, np.ndarray]): parameter gradients and input gradients
    """
    if graph._values is None:
        raise StateError(f"graph {graph.name}: backward called before forward")
    values, caches = graph._values, graph._caches
    grads: Dict[str, np.ndarray] = {}
    for alias, g in output_grads.items():
        if alias not in graph.outputs:
            raise ShapeError(f"graph {graph.name}: unknown output {alias!r}")
        ref = graph.outputs[alias]
        g = np.asarray(g, dtype=values[ref].dtype)
        if g.shape != np.shape(values[ref]):
            raise ShapeError(f"graph {graph.name}: gradient for {alias!r} has shape {g.shape}, output is {np.shape(values[ref])}")
        grads[ref] = grads[ref] + g if ref in grads else g

    if accumulate_params:
        for t in graph.params.values():
            if t.grad is None:
                t.zero_grad()

    skip = ops.NON_DIFFERENTIABLE_INPUTS
    for node in reversed(graph.nodes):
        dout = grads.get(node.name)
        if dout is None:
            continue
        dinputs, dparams = ops.OPS[node.kind].backward(dout, caches[node.name], node.attrs)
        for position, (ref, g) in enumerate(zip(node.inputs, dinputs)):
            if g is None or position in skip.get(node.kind, ()):
                continue
            grads[ref] = grads[ref] + g if ref in grads else g
        if accumulate_params:
            for ref, g in zip(node.params, dparams):
                graph.params[ref].grad += g

    param_grads = {name: t.grad for name, t in graph.params.items()} if accumulate_params else {}
    input_grads = {}
    for name, binding in graph.inputs.items():
        if binding.dtype != "float":
            continue
        input_grads[name] = grads.get(name, np.zeros_like(values[name], dtype=np.result_type(values[name], np.float32)))
    return param_grads, input_grads


def init_params(graph: Graph, seed) -> Registry:
    """He-uniform weights scaled by fan-in, zero biases

    Args:
        graph (Graph): network whose registry is initialised in place
        seed (int | Sequence[int]): generator seed

    Returns:
        Registry: the initialised parameters
    """
    graph.validate()
    rng = np.random.default_rng(seed)
    for name, t in graph.params.items():
        if graph.param_init[name] == "zeros":
            t.data = np.zeros(t.shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(t.shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            t.data = rng.uniform(-bound, bound, size=t.shape).astype(np.float32)
        t.grad = None
    return graph.params
