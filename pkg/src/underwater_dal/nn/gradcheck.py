"""Central finite-difference verification of the analytic backward rules."""

import contextlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import ops
from .graph import Graph, backward, forward, init_params, zero_grad

logger = logging.getLogger(__name__)

ABS_FLOOR = 1e-5

# caches that change when a perturbation crosses a kink of a piecewise op
_BRANCH_CACHES = {
    "leaky_relu": lambda cache: cache,
    "max_pool2d": lambda cache: cache[1],
}


@dataclass
class GradCheckEntry:
    tensor: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    """Outcome of one gradient check.

    ``max_rel_error`` is taken over every checked entry; ``worst`` lists the largest offenders first.
    Entries whose perturbation switched a max-pool winner or the sign of a leaky-relu input are not
    comparable and only counted in ``skipped``.
    """

    name: str
    max_rel_error: float
    checked: int
    skipped: int = 0
    worst: List[GradCheckEntry] = field(default_factory=list)
    tolerance: float = 1e-6

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_error <= self.tolerance

    def summary(self) -> str:
        status = "ok" if self.passed else "FAIL"
        text = f"{self.name}: max rel err {self.max_rel_error:.3e} over {self.checked} entries [{status}]"
        if self.skipped:
            text += f", {self.skipped} skipped at kinks"
        return text


@contextlib.contextmanager
def flipped_backward(kind: str):
    """Temporarily negate every gradient produced by one op kind"""
    original = ops.OPS[kind]

    def flipped(dout, cache, attrs):
        dinputs, dparams = original.backward(dout, cache, attrs)
        return [None if g is None else -g for g in dinputs], [-g for g in dparams]

    ops.OPS[kind] = original._replace(backward=flipped)
    try:
        yield
    finally:
        ops.OPS[kind] = original


def _branch_state(graph: Graph):
    return {
        node.name: _BRANCH_CACHES[node.kind](graph._caches[node.name]).copy()
        for node in graph.nodes
        if node.kind in _BRANCH_CACHES
    }


def _same_branches(a, b):
    return all(np.array_equal(a[name], b[name]) for name in a)


def gradient_check(
    graph: Graph,
    bindings: Dict[str, np.ndarray],
    tolerance=1e-6,
    eps=1e-4,
    max_entries: Optional[int] = None,
    seed=0,
    wrt_inputs: Sequence[str] = (),
    name: Optional[str] = None,
    n_worst=5,
) -> GradCheckReport:
    """Compare analytic gradients against central differences in float64

    The graph outputs are folded into one scalar with fixed random projection weights, so every
    output contributes. Parameters are converted to float64 for the check and restored afterwards.

    Args:
        graph (Graph): network with initialised parameters
        bindings (Dict[str, np.ndarray]): input values
        tolerance (float, optional): pass threshold on the relative error. Defaults to 1e-6.
        eps (float, optional): finite-difference step. Defaults to 1e-4.
        max_entries (int, optional): entries sampled per tensor, all when None
        seed (int, optional): seed of the projection weights and of entry sampling. Defaults to 0.
        wrt_inputs (Sequence[str], optional): float inputs to check besides the parameters
        name (str, optional): report name. Defaults to the graph name.
        n_worst (int, optional): offenders kept in the report. Defaults to 5.

    Returns:
        GradCheckReport: worst relative errors, error scaled by the largest gradient of each tensor
    """
    rng = np.random.default_rng(seed)
    saved = {k: t.data for k, t in graph.params.items()}
    saved_grads = {k: t.grad for k, t in graph.params.items()}
    values = {
        k: (np.array(v, dtype=np.float64) if graph.inputs[k].dtype == "float" else np.asarray(v))
        for k, v in bindings.items()
    }
    try:
        for t in graph.params.values():
            t.data = t.data.astype(np.float64)
        outputs = forward(graph, values)
        weights = {k: rng.standard_normal(np.shape(v)) for k, v in outputs.items()}

        def objective():
            out = forward(graph, values)
            return float(sum(np.sum(weights[k] * out[k]) for k in out))

        objective()
        base_branches = _branch_state(graph)
        zero_grad(graph)
        param_grads, input_grads = backward(graph, weights)
        analytic = {k: g.copy() for k, g in param_grads.items()}
        analytic.update({f"input:{k}": input_grads[k].copy() for k in wrt_inputs})
        targets = {k: graph.params[k].data for k in graph.params}
        targets.update({f"input:{k}": values[k] for k in wrt_inputs})

        entries, skipped = [], 0
        for tname in sorted(targets):
            arr = targets[tname]
            indices = list(np.ndindex(arr.shape))
            if max_entries is not None and len(indices) > max_entries:
                picks = rng.choice(len(indices), size=max_entries, replace=False)
                indices = [indices[i] for i in sorted(picks)]
            numeric = {}
            for idx in indices:
                orig = arr[idx]
                arr[idx] = orig + eps
                plus = objective()
                smooth = _same_branches(base_branches, _branch_state(graph))
                arr[idx] = orig - eps
                minus = objective()
                smooth = smooth and _same_branches(base_branches, _branch_state(graph))
                arr[idx] = orig
                if smooth:
                    numeric[idx] = (plus - minus) / (2 * eps)
                else:
                    skipped += 1
            if not numeric:
                continue
            a_all = analytic[tname]
            scale = max(
                float(np.max(np.abs(a_all))) if a_all.size else 0.0,
                max(abs(n) for n in numeric.values()),
                ABS_FLOOR,
            )
            for idx, n in numeric.items():
                a = float(a_all[idx])
                entries.append(GradCheckEntry(tname, tuple(int(i) for i in idx), a, n, abs(a - n) / scale))
    finally:
        for k, t in graph.params.items():
            t.data = saved[k]
            t.grad = saved_grads[k]

    entries.sort(key=lambda e: e.rel_error, reverse=True)
    report = GradCheckReport(
        name or graph.name,
        entries[0].rel_error if entries else float("inf"),
        len(entries),
        skipped,
        entries[:n_worst],
        tolerance,
    )
    logger.debug(report.summary())
    return report


def op_cases(seed=0) -> List[Tuple[str, Graph, Dict[str, np.ndarray], Tuple[str, ...]]]:
    """One small graph per op kind, with float64 inputs

    Returns:
        List[(name, graph, bindings, wrt_inputs)]
    """
    rng = np.random.default_rng(seed)
    cases = []

    def image(*shape):
        return rng.standard_normal(shape)

    g = Graph("conv2d")
    x = g.add_input("x", (2, 5, 5))
    g.add_output(g.conv2d(x, "c", 2, 3, kernel=3, stride=1, pad=1), "y")
    cases.append(("conv2d", g, {"x": image(2, 2, 5, 5)}, ("x",)))

    g = Graph("conv2d_stride2")
    x = g.add_input("x", (2, 6, 6))
    g.add_output(g.conv2d(x, "c", 2, 3, kernel=3, stride=2, pad=1), "y")
    cases.append(("conv2d_stride2", g, {"x": image(2, 2, 6, 6)}, ("x",)))

    g = Graph("leaky_relu")
    x = g.add_input("x", (2, 3, 3))
    g.add_output(g.leaky_relu(x, 0.2), "y")
    cases.append(("leaky_relu", g, {"x": image(2, 2, 3, 3)}, ("x",)))

    g = Graph("sigmoid")
    x = g.add_input("x", (2, 3, 3))
    g.add_output(g.add_node("sigmoid", [x]), "y")
    cases.append(("sigmoid", g, {"x": image(2, 2, 3, 3)}, ("x",)))

    g = Graph("max_pool2d")
    x = g.add_input("x", (2, 4, 4))
    g.add_output(g.add_node("max_pool2d", [x]), "y")
    cases.append(("max_pool2d", g, {"x": image(2, 2, 4, 4)}, ("x",)))

    g = Graph("upsample_nearest")
    x = g.add_input("x", (2, 2, 3))
    g.add_output(g.add_node("upsample_nearest", [x]), "y")
    cases.append(("upsample_nearest", g, {"x": image(2, 2, 2, 3)}, ("x",)))

    g = Graph("concat_channels")
    a = g.add_input("a", (2, 3, 3))
    b = g.add_input("b", (1, 3, 3))
    g.add_output(g.add_node("concat_channels", [a, b]), "y")
    cases.append(("concat_channels", g, {"a": image(2, 2, 3, 3), "b": image(2, 1, 3, 3)}, ("a", "b")))

    g = Graph("linear")
    x = g.add_input("x", (4,))
    g.add_output(g.linear(x, "fc", 4, 3), "y")
    cases.append(("linear", g, {"x": image(3, 4)}, ("x",)))

    g = Graph("softmax")
    x = g.add_input("x", (6,))
    g.add_output(g.add_node("softmax", [x]), "y")
    cases.append(("softmax", g, {"x": image(3, 6)}, ("x",)))

    g = Graph("global_avg_pool")
    x = g.add_input("x", (3, 4, 4))
    g.add_output(g.add_node("global_avg_pool", [x]), "y")
    cases.append(("global_avg_pool", g, {"x": image(2, 3, 4, 4)}, ("x",)))

    g = Graph("mse_reduce")
    p = g.add_input("pred", (3, 4, 4))
    t = g.add_input("target", (3, 4, 4))
    g.add_output(g.add_node("mse_reduce", [p, t]), "loss")
    cases.append(("mse_reduce", g, {"pred": image(2, 3, 4, 4), "target": image(2, 3, 4, 4)}, ("pred", "target")))

    g = Graph("cross_entropy_reduce")
    x = g.add_input("logits", (6,))
    y = g.add_input("labels", (), dtype="int")
    probs = g.add_node("softmax", [x])
    g.add_output(g.add_node("cross_entropy_reduce", [probs, y]), "loss")
    cases.append(
        ("cross_entropy_reduce", g, {"logits": image(4, 6), "labels": rng.integers(0, 6, size=4)}, ("logits",))
    )

    g = Graph("neg_entropy_reduce")
    x = g.add_input("logits", (6,))
    probs = g.add_node("softmax", [x])
    g.add_output(g.add_node("neg_entropy_reduce", [probs]), "loss")
    cases.append(("neg_entropy_reduce", g, {"logits": image(4, 6)}, ("logits",)))

    for i, (_, graph, _, _) in enumerate(cases):
        init_params(graph, [seed, i])
    return cases


def check_ops(seed=0, tolerance=1e-6, eps=1e-4) -> List[GradCheckReport]:
    return [
        gradient_check(graph, bindings, tolerance, eps, seed=seed, wrt_inputs=wrt, name=name)
        for name, graph, bindings, wrt in op_cases(seed)
    ]
