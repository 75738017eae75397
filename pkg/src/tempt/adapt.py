"""Per-video test-time adaptation over the batch-norm affine subset.

The engine never mutates the caller's parameters: each run adapts a
private copy, keeps batch-norm in eval mode throughout (running
statistics frozen), and reports before/after logits and metrics.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses, model, temporal
from . import tensor as T
from .errors import NoAdaptableParams, NonFiniteLoss
from .metrics import evaluate_logits
from .optim import AdamWConfig, AdamWState, adamw_step

log = logging.getLogger(__name__)

METHODS = ("none", "tent", "tempt")


@dataclass(frozen=True)
class AdaptConfig:
    method: str = "tempt"
    steps: int = 10
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    median_window: int = 11
    region_window: int = 32
    num_regions: int = 4
    batch_frames_cap: int = 128
    region_sample: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_frames_cap < 1:
            raise ValueError("batch_frames_cap must be >= 1")

    def adamw(self) -> AdamWConfig:
        return AdamWConfig(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)


@dataclass
class AdaptReport:
    method: str
    f1_before: float | None
    f1_after: float | None
    norm_changes_before: float
    norm_changes_after: float
    loss_trace: list[float]
    regions: list[temporal.Region]
    config: AdaptConfig
    diagnostic: str | None = None
    target_checksum: str | None = None
    logits_before: np.ndarray | None = field(default=None, repr=False)
    logits_after: np.ndarray | None = field(default=None, repr=False)

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "f1_before": self.f1_before,
            "f1_after": self.f1_after,
            "norm_changes_before": self.norm_changes_before,
            "norm_changes_after": self.norm_changes_after,
            "loss_trace": self.loss_trace,
            "regions": [{"start": r.start, "end": r.end, "change_count": r.change_count} for r in self.regions],
            "config": {
                "method": self.config.method,
                "steps": self.config.steps,
                "lr": self.config.lr,
                "beta1": self.config.beta1,
                "beta2": self.config.beta2,
                "eps": self.config.eps,
                "weight_decay": self.config.weight_decay,
                "median_window": self.config.median_window,
                "region_window": self.config.region_window,
                "num_regions": self.config.num_regions,
                "batch_frames_cap": self.config.batch_frames_cap,
                "region_sample": self.config.region_sample,
                "seed": self.config.seed,
            },
            "diagnostic": self.diagnostic,
            "target_checksum": self.target_checksum,
        }


def trainable_subset(params: model.ModelParams, method: str) -> list[str]:
    """Names the method is allowed to update: the bn_affine group only."""
    if method == "none":
        return []
    names = params.names_in_group(model.GROUP_BN_AFFINE)
    if not names:
        raise NoAdaptableParams("model has no batch-norm layers to adapt")
    return names


def forward_all(params: model.ModelParams, frames: np.ndarray, chunk: int = 128) -> np.ndarray:
    """Untracked eval-mode logits for every frame, in fixed-size chunks."""
    outs = []
    for lo in range(0, frames.shape[0], chunk):
        z = model.forward(params, frames[lo : lo + chunk], mode="eval")
        outs.append(z.data)
    return np.concatenate(outs, axis=0)


def _round_robin_cap(regions: list[temporal.Region], cap: int) -> np.ndarray:
    """Frame indices for the step batch, truncated round-robin per region."""
    pools = [list(range(r.start, r.end)) for r in regions]
    picked: list[int] = []
    cursor = 0
    while len(picked) < cap and any(pools):
        pool = pools[cursor % len(pools)]
        if pool:
            picked.append(pool.pop(0))
        cursor += 1
        if all(not p for p in pools):
            break
    picked.sort()
    return np.asarray(picked, dtype=np.int64)


def _checksum(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]


def adapt_video(
    params: model.ModelParams,
    frames: np.ndarray,
    config: AdaptConfig,
    labels: np.ndarray | None = None,
) -> tuple[model.ModelParams, AdaptReport]:
    """Adapt a private copy of ``params`` to one video.

    tempt: one full pass produces the logit series, its median-filtered
    copy becomes the fixed target, and the high-flicker regions form the
    step batch; each step minimizes the squared distance to the target
    on those frames, updating bn_affine parameters only. tent minimizes
    prediction entropy over a fresh random frame batch per step. Both
    re-run the full sequence afterwards for the report.
    """
    config.validate()
    t_frames = frames.shape[0]
    if config.method == "tempt" and t_frames < 2:
        raise ValueError("tempt needs at least two frames")

    work = params.copy()
    chunk = config.batch_frames_cap
    y_before = forward_all(work, frames, chunk)
    k = y_before.shape[1]

    def finish(y_after: np.ndarray, loss_trace, regions, diagnostic=None, checksum=None) -> AdaptReport:
        f1_b = f1_a = None
        if labels is not None:
            f1_b = evaluate_logits(y_before, labels, k).macro_f1
            f1_a = evaluate_logits(y_after, labels, k).macro_f1
        return AdaptReport(
            method=config.method,
            f1_before=f1_b,
            f1_after=f1_a,
            norm_changes_before=temporal.normalized_changes(y_before),
            norm_changes_after=temporal.normalized_changes(y_after),
            loss_trace=loss_trace,
            regions=regions,
            config=config,
            diagnostic=diagnostic,
            target_checksum=checksum,
            logits_before=y_before,
            logits_after=y_after,
        )

    if config.method == "none" or config.steps == 0:
        return work, finish(y_before.copy(), [], [])

    subset = set(trainable_subset(work, config.method))
    rng = np.random.Generator(np.random.PCG64(config.seed))
    opt_state = AdamWState.for_params({n: work[n].array for n in subset})
    adamw_cfg = config.adamw()

    regions: list[temporal.Region] = []
    target = None
    checksum = None
    if config.method == "tempt":
        target = temporal.median_filter(y_before, config.median_window)
        regions = temporal.select_regions(
            y_before, config.region_window, config.num_regions, rng=rng, sample=config.region_sample
        )
        batch_idx = _round_robin_cap(regions, config.batch_frames_cap)
        checksum = _checksum(target)

    loss_trace: list[float] = []
    for step in range(config.steps):
        if config.method == "tent":
            size = min(config.batch_frames_cap, t_frames)
            batch_idx = np.sort(rng.choice(t_frames, size=size, replace=False))
        leaves = work.leaves(trainable=subset)
        try:
            z = model.forward(work, frames[batch_idx], mode="eval", leaves=leaves)
            if config.method == "tempt":
                loss = losses.temporal_consistency_loss(z, target[batch_idx])
            else:
                loss = losses.entropy_loss(z)
            grads = T.backward(loss)
        except (NonFiniteLoss, T.NonFiniteValue) as exc:
            log.warning("adaptation aborted at step %d: %s", step, exc)
            fresh = params.copy()
            return fresh, finish(y_before.copy(), loss_trace, regions, diagnostic=str(exc), checksum=checksum)
        named = {name: grads[leaf].data for name, leaf in leaves.items() if leaf in grads}
        for name in subset - named.keys():
            named[name] = np.zeros_like(work[name].array)
        adamw_step({n: work[n].array for n in subset}, named, opt_state, adamw_cfg)
        loss_trace.append(loss.item())

    if config.method == "tempt" and checksum is not None:
        assert _checksum(target) == checksum, "median target drifted during adaptation"

    y_after = forward_all(work, frames, chunk)
    return work, finish(y_after, loss_trace, regions, checksum=checksum)


def isolate_check(before: model.ModelParams, after: model.ModelParams) -> list[str]:
    """Parameter-subset contract audit.

    Returns one violation string per entry outside bn_affine whose bytes
    changed; running-statistic drift is tagged 'stats-leak'. Expected
    empty after any adaptation run.
    """
    model.check_same_arch(before, after)
    violations: list[str] = []
    for name in before.names():
        ea, eb = before[name], after[name]
        if ea.group == model.GROUP_BN_AFFINE:
            continue
        if ea.array.tobytes() != eb.array.tobytes():
            tag = "stats-leak" if ea.group == model.GROUP_BN_STATS else "param-drift"
            violations.append(f"{tag}:{name}")
    return violations
