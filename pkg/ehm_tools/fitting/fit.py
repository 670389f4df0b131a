"""Two-stage analysis-by-synthesis fitting."""

from __future__ import annotations

import math
import os
import time
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import Tensor

from ehm_tools.body.export import write_obj
from ehm_tools.body.model import EhmModel
from ehm_tools.body.params import FullParams
from ehm_tools.exceptions import DivergenceDetected, MissingSupervision
from ehm_tools.fitting.optim import Optimizer
from ehm_tools.logger import StructuredLogger
from ehm_tools.losses import LossValue, Objective, Supervision
from ehm_tools.models import FitConfig, FitReport, FitStatus, StageConfig, StageReport

logger = StructuredLogger(__name__)

_TINY = 1e-300


@dataclass
class FitResult:
    """Fitted parameters as tensors plus the serializable report."""

    params: FullParams
    report: FitReport


def _learning_rate(stage: StageConfig, iteration: int) -> float:
    if stage.iterations <= 1:
        return stage.lr
    return stage.lr * stage.lr_decay_to ** (iteration / (stage.iterations - 1))


def _dump_obj(
    directory: Path, name: str, iteration: int, model: EhmModel, objective: Objective, x: Tensor
) -> None:
    with torch.no_grad():
        state = model(objective.layout.unpack(x, objective.base))
    write_obj(
        directory / f"{name}_{iteration:04d}.obj",
        state.vertices.cpu().numpy(),
        model.faces.cpu().numpy(),
    )


def _run_stage(
    name: str,
    model: EhmModel,
    params: FullParams,
    sup: Supervision,
    stage: StageConfig,
    cfg: FitConfig,
    frozen: Iterable[str],
) -> tuple[FullParams, StageReport]:
    started = time.perf_counter()
    log = logger.bind(stage=name)
    objective = Objective(
        model, params, sup, stage.weights, set(stage.frozen) | set(frozen), stage.raster
    )
    optimizer = Optimizer(objective.layout, cfg.optimizer, stage.lr_scale)
    debug_dir = Path(cfg.debug_obj_dir) if cfg.debug_obj_dir else None
    if debug_dir is not None:
        debug_dir.mkdir(parents=True, exist_ok=True)

    # A silhouette stage keeps its lowest-silhouette iterate, so it never
    # hands back a worse silhouette than it started from.
    by_photo = "photo" in objective.weights

    def criterion(v: LossValue) -> float:
        return v.per_term["photo"] if by_photo else v.total

    x = objective.layout.pack(params)
    value = objective.value_and_grad(x)
    initial = value.total
    initial_photo = value.per_term.get("photo")
    best, best_loss, best_x = criterion(value), initial, x
    losses: list[float] = []
    status = FitStatus.MAX_ITERATIONS
    stalled = 0

    for iteration in range(stage.iterations):
        if not bool(torch.any(value.gradient != 0)):
            status = FitStatus.CONVERGED
            break
        lr = _learning_rate(stage, iteration)
        x = optimizer.step(x, value.gradient, lr)
        value = objective.value_and_grad(x)
        losses.append(value.total)
        log.debug("Fit iteration", context={"iteration": iteration, "loss": value.total, "lr": lr})
        if debug_dir is not None:
            _dump_obj(debug_dir, name, iteration, model, objective, x)

        if not math.isfinite(value.total) or value.total > cfg.divergence_factor * max(
            initial, _TINY
        ):
            report = StageReport(
                name=name,
                status=FitStatus.DIVERGED,
                iterations=len(losses),
                initial_loss=initial,
                best_loss=best_loss,
                losses=losses,
                seconds=time.perf_counter() - started,
            )
            raise DivergenceDetected(
                f"Stage {name} diverged at iteration {iteration}",
                context={"stage": report.model_dump(mode="json"), "loss": value.total},
            )

        current = criterion(value)
        if current < best:
            gain = (best - current) / max(abs(best), _TINY)
            stalled = stalled + 1 if gain < cfg.convergence_rtol else 0
            best, best_loss, best_x = current, value.total, x
        else:
            stalled += 1
        if stalled >= cfg.patience:
            status = FitStatus.CONVERGED
            break

    report = StageReport(
        name=name,
        status=status,
        iterations=len(losses),
        initial_loss=initial,
        best_loss=best_loss,
        losses=losses,
        seconds=time.perf_counter() - started,
        selected_by="photo" if by_photo else "total",
        initial_photo=initial_photo,
        best_photo=best if by_photo else None,
    )
    log.info(
        "Stage finished",
        context={
            "status": status.value,
            "iterations": report.iterations,
            "initial_loss": initial,
            "best_loss": best_loss,
            "seconds": report.seconds,
        },
    )
    return objective.layout.unpack(best_x, objective.base), report


def fit(
    model: EhmModel,
    init: FullParams,
    sup: Supervision,
    cfg: FitConfig | None = None,
    frozen: Iterable[str] = (),
) -> FitResult:
    """Fit parameters to the supervision, coarse stage first, silhouette stage second.

    ``frozen`` blocks are held fixed in both stages in addition to each
    stage's own frozen list. Each stage returns its best iterate.

    Raises:
        NoActiveTerms: If a stage has nothing to minimize
        MissingSupervision: If stage 2 is enabled without a mask
        DivergenceDetected: If the loss exceeds ``divergence_factor`` times its initial value
    """
    cfg = cfg or FitConfig()
    frozen = tuple(frozen)
    if cfg.stage2.enabled and sup.mask is None:
        raise MissingSupervision("Stage 2 needs a silhouette mask")

    params = init.detach()
    stages: list[StageReport] = []
    final_loss = None
    for name, stage in (("stage1", cfg.stage1), ("stage2", cfg.stage2)):
        if not stage.enabled:
            stages.append(StageReport(name=name, status=FitStatus.SKIPPED))
            continue
        params, report = _run_stage(name, model, params, sup, stage, cfg, frozen)
        stages.append(report)
        final_loss = report.best_loss

    ran = [s for s in stages if s.status is not FitStatus.SKIPPED]
    status = ran[-1].status if ran else FitStatus.SKIPPED
    params = params.detach()
    return FitResult(
        params=params,
        report=FitReport(
            params=params.to_document(), stages=stages, status=status, final_loss=final_loss
        ),
    )


def worker_count(requested: int | None = None) -> int:
    """Worker pool size, capped by ``EHM_THREADS`` when it is set."""
    workers = requested or os.cpu_count() or 1
    cap = os.environ.get("EHM_THREADS")
    if cap:
        workers = min(workers, max(1, int(cap)))
    return max(1, workers)


def fit_many(
    model: EhmModel,
    jobs: Sequence[tuple[FullParams, Supervision]],
    cfg: FitConfig | None = None,
    workers: int | None = None,
) -> list[FitResult]:
    """Fit independent instances concurrently over one shared, read-only model."""
    n = min(worker_count(workers), max(1, len(jobs)))
    logger.info("Fitting batch", context={"jobs": len(jobs), "workers": n})
    if n == 1:
        return [fit(model, init, sup, cfg) for init, sup in jobs]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda job: fit(model, job[0], job[1], cfg), jobs))
