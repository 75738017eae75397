"""Finite-difference verification of the backprop path.

Builds a deliberately tiny model, computes analytic gradients through
the float32 graph, and compares them against float64 central differences
taken through the graph-free reference evaluator.
"""

from __future__ import annotations

import numpy as np

from . import losses, model, temporal
from . import tensor as T
from . import reference
from .reference import GradcheckResult

LOSS_KINDS = ("ce", "ldam", "entropy", "tempt")

TINY_SPEC = model.ModelSpec(input_hw=8, stages=((4, 1), (8, 1)), num_classes=8, head_hidden=8, head_scale=16.0)


def _arrays(params: model.ModelParams) -> dict[str, np.ndarray]:
    return {name: params[name].array for name in params.names()}


def run_gradcheck(
    loss_kind: str,
    seed: int = 0,
    params: model.ModelParams | None = None,
    tolerance: float = 1e-3,
    step: float = 1e-3,
    max_probes_per_tensor: int = 256,
) -> GradcheckResult:
    """Compare analytic and numeric gradients for one loss on the tiny model.

    ce/ldam/entropy check every trainable group; the temporal-consistency
    loss checks the bn_affine subset it actually adapts.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"loss must be one of {LOSS_KINDS}, got {loss_kind!r}")
    if params is None:
        params = model.build_model(TINY_SPEC, seed)
    spec = params.spec
    rng = np.random.Generator(np.random.PCG64(seed + 17))
    k = spec.num_classes

    if loss_kind == "tempt":
        frames = rng.uniform(-1, 1, size=(6, spec.in_channels, spec.input_hw, spec.input_hw)).astype(np.float32)
        y0 = reference.forward_eval(_arrays(params), spec, frames, dtype=np.float32)
        target = temporal.median_filter(y0, 3)  # fixed while parameters are perturbed
        names = params.names_in_group(model.GROUP_BN_AFFINE)

        def numeric_loss(arrays: dict[str, np.ndarray]) -> tuple[float, bytes]:
            pattern: list = []
            z = reference.forward_eval(arrays, spec, frames, relu_pattern=pattern)
            return reference.temporal_consistency_value(z, target), b"".join(pattern)

        def analytic_loss(leaves):
            z = model.forward(params, frames, mode="eval", leaves=leaves)
            return losses.temporal_consistency_loss(z, target)

    else:
        frames = rng.uniform(-1, 1, size=(4, spec.in_channels, spec.input_hw, spec.input_hw)).astype(np.float32)
        labels = rng.integers(0, k, size=4)
        counts = losses.ClassCounts(tuple(int(c) for c in rng.integers(5, 50, size=k)), margin_scale=2.0)
        names = [n for n in params.names() if params[n].trainable]

        def numeric_loss(arrays: dict[str, np.ndarray]) -> tuple[float, bytes]:
            pattern: list = []
            z = reference.forward_eval(arrays, spec, frames, relu_pattern=pattern)
            if loss_kind == "ce":
                value = reference.cross_entropy_value(z, labels)
            elif loss_kind == "ldam":
                value = reference.ldam_value(z, labels, counts.n, counts.margin_scale)
            else:
                value = reference.entropy_value(z)
            return value, b"".join(pattern)

        def analytic_loss(leaves):
            z = model.forward(params, frames, mode="eval", leaves=leaves)
            if loss_kind == "ce":
                return losses.cross_entropy(z, labels)
            if loss_kind == "ldam":
                return losses.ldam_loss(z, labels, counts)
            return losses.entropy_loss(z)

    leaves = params.leaves(trainable=set(names))
    grads = T.backward(analytic_loss(leaves))
    analytic = {name: grads[leaves[name]].data for name in names}
    numeric, masked_fraction = reference.finite_difference_grads(
        numeric_loss,
        _arrays(params),
        names,
        step=step,
        max_probes_per_tensor=max_probes_per_tensor,
        seed=seed,
    )
    groups = {name: params[name].group for name in names}
    return reference.compare_grads(
        analytic, numeric, groups, tolerance, loss_name=loss_kind, masked_fraction=masked_fraction
    )
