import logging
from typing import List, Tuple

import numpy as np

from ..nn.gradcheck import GradCheckReport, check_ops, flipped_backward, gradient_check
from ..nn.graph import init_params
from .networks import ArchitectureConfig, build_training_graph

logger = logging.getLogger(__name__)

TINY_CONFIG = dict(height=8, width=8, base_channels=2, levels=2, classifier_widths=(1,))


def tiny_training_case(seed=0, batch=2):
    """Small composed E + G + D graph with all three losses, and matching inputs"""
    config = ArchitectureConfig(**TINY_CONFIG).validate()
    graph = build_training_graph(config, with_classifier=True)
    init_params(graph, seed)
    rng = np.random.default_rng([seed, 1])
    bindings = {
        "image": rng.uniform(0.0, 1.0, size=(batch,) + config.image_shape),
        "target": rng.uniform(0.0, 1.0, size=(batch,) + config.image_shape),
        "labels": rng.integers(0, config.num_classes, size=batch),
    }
    return graph, bindings


def run_gradcheck_suite(seed=0, tolerance=1e-6, eps=1e-4) -> List[Tuple[GradCheckReport, bool]]:
    """Every op kind, the composed network, and a sign-flipped negative control

    Returns:
        List[(GradCheckReport, bool)]: each report with whether it is expected to pass
    """
    results = [(report, True) for report in check_ops(seed, tolerance, eps)]
    graph, bindings = tiny_training_case(seed)
    results.append((gradient_check(graph, bindings, tolerance, eps, seed=seed, name="network+losses"), True))
    with flipped_backward("conv2d"):
        control = gradient_check(graph, bindings, tolerance, eps, max_entries=8, seed=seed, name="negative control (conv2d sign flip)")
    results.append((control, False))
    for report, expected in results:
        level = logging.INFO if report.passed == expected else logging.ERROR
        logger.log(level, report.summary())
    return results


def suite_passed(results: List[Tuple[GradCheckReport, bool]]) -> bool:
    return all(report.passed == expected for report, expected in results)
