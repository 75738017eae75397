"""Graph-free reference math for verification.

Everything here re-derives the model and loss values with plain numpy at
a caller-chosen dtype (float64 by default), without touching the autodiff
tape. ``finite_difference_grads`` perturbs raw parameter arrays and
re-evaluates through this path, so a gradcheck compares two genuinely
independent routes: float32 backprop against float64 central differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BN_EPS, HEAD_NORM_EPS, ModelParams, ModelSpec


def _conv(x, w, stride, pad, dtype):
    n, c, h, w_in = x.shape
    f, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w_in + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    out = cols.astype(dtype) @ w.reshape(f, -1).T.astype(dtype)
    return out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)


def _bn_eval(x, g, b, rm, rv, dtype):
    shape = (1, -1, 1, 1)
    inv = 1.0 / np.sqrt(rv.astype(dtype) + BN_EPS)
    return g.astype(dtype).reshape(shape) * (x - rm.astype(dtype).reshape(shape)) * inv.reshape(shape) + b.astype(
        dtype
    ).reshape(shape)


def forward_eval(
    arrays: dict[str, np.ndarray],
    spec: ModelSpec,
    batch: np.ndarray,
    dtype=np.float64,
    relu_pattern: list | None = None,
) -> np.ndarray:
    """Eval-mode logits computed outside the graph engine.

    ``relu_pattern`` collects the sign pattern at every relu site; a
    finite-difference probe is only a valid derivative estimate when the
    pattern is identical at both evaluation points.
    """
    x = batch.astype(dtype)

    def _relu(pre):
        if relu_pattern is not None:
            relu_pattern.append(np.packbits(pre.ravel() > 0).tobytes())
        return np.maximum(pre, 0)

    def block(x_in, prefix, downsample):
        stride = 2 if downsample else 1
        out = _conv(x_in, arrays[f"{prefix}.conv1.w"], stride, 1, dtype)
        out = _bn_eval(
            out,
            arrays[f"{prefix}.bn1.gamma"],
            arrays[f"{prefix}.bn1.beta"],
            arrays[f"{prefix}.bn1.running_mean"],
            arrays[f"{prefix}.bn1.running_var"],
            dtype,
        )
        out = _relu(out)
        out = _conv(out, arrays[f"{prefix}.conv2.w"], 1, 1, dtype)
        out = _bn_eval(
            out,
            arrays[f"{prefix}.bn2.gamma"],
            arrays[f"{prefix}.bn2.beta"],
            arrays[f"{prefix}.bn2.running_mean"],
            arrays[f"{prefix}.bn2.running_var"],
            dtype,
        )
        if downsample:
            skip = _conv(x_in, arrays[f"{prefix}.proj.w"], stride, 0, dtype)
            skip = _bn_eval(
                skip,
                arrays[f"{prefix}.proj_bn.gamma"],
                arrays[f"{prefix}.proj_bn.beta"],
                arrays[f"{prefix}.proj_bn.running_mean"],
                arrays[f"{prefix}.proj_bn.running_var"],
                dtype,
            )
        else:
            skip = x_in
        return _relu(out + skip)

    out = _conv(x, arrays["stem.conv.w"], 1, 1, dtype)
    out = _bn_eval(
        out,
        arrays["stem.bn.gamma"],
        arrays["stem.bn.beta"],
        arrays["stem.bn.running_mean"],
        arrays["stem.bn.running_var"],
        dtype,
    )
    out = _relu(out)
    for si, (_, blocks) in enumerate(spec.stages):
        for bi in range(blocks):
            out = block(out, f"stage{si}.block{bi}", bi == 0)
    feat = out.mean(axis=(2, 3))
    hidden = _relu(feat @ arrays["head.fc1.w"].astype(dtype).T + arrays["head.fc1.b"].astype(dtype))
    w = arrays["head.out.w"].astype(dtype)
    what = w / np.sqrt((w**2).sum(axis=1, keepdims=True))
    xhat = hidden / (np.sqrt((hidden**2).sum(axis=1, keepdims=True)) + HEAD_NORM_EPS)
    return spec.head_scale * (xhat @ what.T)


# naive float64 loss evaluations, shared by the op oracles and gradcheck


def ldam_value(z: np.ndarray, labels, counts_n, margin_scale: float) -> float:
    z = np.asarray(z, dtype=np.float64)
    margins = margin_scale / np.power(np.asarray(counts_n, dtype=np.float64), 0.25)
    total = 0.0
    for row, y in zip(z, labels):
        num = np.exp(row[y] - margins[y])
        den = num + np.exp(np.delete(row, y)).sum()
        total += -np.log(num / den)
    return total / z.shape[0]


def cross_entropy_value(z: np.ndarray, labels) -> float:
    return ldam_value(z, labels, np.ones(np.asarray(z).shape[1]), 0.0)


def entropy_value(z: np.ndarray) -> float:
    z = np.asarray(z, dtype=np.float64)
    ez = np.exp(z - z.max(axis=1, keepdims=True))
    p = ez / ez.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    return float((-plogp.sum(axis=1)).mean())


def temporal_consistency_value(y: np.ndarray, target: np.ndarray) -> float:
    d = np.asarray(y, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float((d**2).sum(axis=1).mean())


@dataclass
class GradcheckResult:
    loss: str
    group_errors: dict[str, float]  # parameter group -> max relative error
    worst_param: str
    max_rel_err: float
    masked_fraction: float  # probes dropped for crossing a relu kink
    passed: bool

    def to_json_dict(self) -> dict:
        return {
            "loss": self.loss,
            "group_errors": self.group_errors,
            "worst_param": self.worst_param,
            "max_rel_err": self.max_rel_err,
            "masked_fraction": self.masked_fraction,
            "passed": self.passed,
        }


def finite_difference_grads(
    loss_fn,
    arrays: dict[str, np.ndarray],
    names: list[str],
    step: float = 1e-3,
    max_probes_per_tensor: int | None = None,
    seed: int = 0,
) -> tuple[dict[str, np.ndarray], float]:
    """Central differences of ``loss_fn(arrays)`` w.r.t. the named arrays.

    ``loss_fn`` returns (value, signature); a probe whose two evaluation
    points disagree in signature straddles a non-differentiable point, so
    its estimate is invalid and comes back NaN. Probes every coordinate
    unless capped; capped tensors get a seeded coordinate sample, with
    unprobed entries also NaN. Returns (grads, masked_fraction).
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    out: dict[str, np.ndarray] = {}
    probed = 0
    masked = 0
    for name in names:
        base = arrays[name]
        grad = np.full(base.size, np.nan)
        coords = np.arange(base.size)
        if max_probes_per_tensor is not None and base.size > max_probes_per_tensor:
            coords = np.sort(rng.choice(base.size, size=max_probes_per_tensor, replace=False))
        work = base.astype(np.float64).ravel().copy()
        for ci in coords:
            original = work[ci]
            perturbed = dict(arrays)
            work[ci] = original + step
            perturbed[name] = work.reshape(base.shape)
            f_plus, sig_plus = loss_fn(perturbed)
            work[ci] = original - step
            perturbed[name] = work.reshape(base.shape)
            f_minus, sig_minus = loss_fn(perturbed)
            work[ci] = original
            probed += 1
            if sig_plus != sig_minus:
                masked += 1
                continue
            grad[ci] = (f_plus - f_minus) / (2 * step)
        out[name] = grad.reshape(base.shape)
    return out, (masked / probed if probed else 0.0)


MAX_MASKED_FRACTION = 0.25


def compare_grads(
    analytic: dict[str, np.ndarray],
    numeric: dict[str, np.ndarray],
    groups: dict[str, str],
    tolerance: float = 1e-3,
    loss_name: str = "",
    masked_fraction: float = 0.0,
) -> GradcheckResult:
    """Per-group max relative error, normalized by the group's gradient scale.

    The check also fails outright if too many probes were masked: a
    mostly-masked comparison would not be evidence of anything.
    """
    by_group: dict[str, list[tuple[str, float, float]]] = {}
    for name, fd in numeric.items():
        mask = np.isfinite(fd)
        diff = float(np.abs(analytic[name].astype(np.float64) - fd)[mask].max(initial=0.0))
        scale = float(np.abs(fd[mask]).max(initial=0.0))
        by_group.setdefault(groups[name], []).append((name, diff, scale))

    group_errors: dict[str, float] = {}
    worst_param = ""
    worst = 0.0
    for group, rows in by_group.items():
        denom = max(max(scale for _, _, scale in rows), 1e-6)
        err = 0.0
        for name, diff, _ in rows:
            rel = diff / denom
            if rel > err:
                err = rel
            if rel > worst:
                worst = rel
                worst_param = name
        group_errors[group] = err
    return GradcheckResult(
        loss=loss_name,
        group_errors=group_errors,
        worst_param=worst_param,
        max_rel_err=worst,
        masked_fraction=masked_fraction,
        passed=worst < tolerance and masked_fraction <= MAX_MASKED_FRACTION,
    )
