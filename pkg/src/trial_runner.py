"""
Worker pool for Monte Carlo trials.

Trials are independent jobs executed on a thread pool (numpy and LAPACK
release the GIL). The pool width is the configured thread count, reduced so
that the dense working set of all concurrent trials fits in a fraction of
available memory. Results come back sorted by (cell, seed) regardless of completion
order, so aggregation never depends on scheduling.
"""

import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Type

import psutil
import structlog

from .config import config
from .errors import SbmSpectraError
from .metrics import MetricsCollector, metrics

logger = structlog.get_logger()


class TrialStatus(Enum):
    OK = "ok"
    EXCLUDED = "excluded"


@dataclass(frozen=True)
class TrialJob:
    """One trial: a sweep cell index, its seed and the work to do."""
    cell: int
    seed: int
    fn: Callable[[int], Dict[str, Any]]

    @property
    def key(self) -> Tuple[int, int]:
        return (self.cell, self.seed)


@dataclass
class TrialResult:
    cell: int
    seed: int
    status: TrialStatus
    values: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def key(self) -> Tuple[int, int]:
        return (self.cell, self.seed)

    @property
    def ok(self) -> bool:
        return self.status == TrialStatus.OK


def trial_footprint_bytes(n: int) -> int:
    """Estimated peak memory of one dense trial at dimension n."""
    return config.ARRAYS_PER_TRIAL * 8 * n * n


def plan_width(n: int, requested: Optional[int] = None) -> int:
    """
    Worker count for trials at dimension n.

    Args:
        n: Matrix dimension of each trial
        requested: Desired width; defaults to Config.THREADS
    """
    requested = max(1, requested or config.THREADS)
    available = psutil.virtual_memory().available
    budget = available * config.MEMORY_FRACTION
    affordable = max(1, int(budget // max(1, trial_footprint_bytes(n))))
    width = min(requested, affordable)
    if width < requested:
        logger.info(
            "Pool width reduced by memory budget",
            requested=requested,
            width=width,
            available_gb=round(available / (1024**3), 2),
            n=n,
        )
    return width


class TrialRunner:
    """Runs trial jobs and collects results keyed by (cell, seed)."""

    def __init__(
        self,
        kind: str,
        width: int = 1,
        excludable: Sequence[Type[SbmSpectraError]] = (),
        verbose: bool = False,
        collector: Optional[MetricsCollector] = None,
    ):
        self.kind = kind
        self.width = max(1, width)
        self.excludable = tuple(excludable)
        self.verbose = verbose
        self.collector = collector or metrics

    def _execute(self, job: TrialJob) -> TrialResult:
        start_time = time.perf_counter()
        try:
            values = job.fn(job.seed)
        except self.excludable as exc:
            self.collector.record_trial(self.kind, TrialStatus.EXCLUDED.value, 0.0)
            logger.debug("Trial excluded", kind=self.kind, seed=job.seed, error=exc.name)
            return TrialResult(job.cell, job.seed, TrialStatus.EXCLUDED, error=exc.name)
        except Exception:
            self.collector.record_trial(self.kind, "error", time.perf_counter() - start_time)
            raise
        self.collector.record_trial(self.kind, TrialStatus.OK.value, time.perf_counter() - start_time)
        return TrialResult(job.cell, job.seed, TrialStatus.OK, values=values)

    def _progress(self, done: int, total: int) -> None:
        if self.verbose and (done % max(1, total // 20) == 0 or done == total):
            logger.info("Trials completed", kind=self.kind, done=done, total=total)

    def run(self, jobs: List[TrialJob]) -> List[TrialResult]:
        """Execute all jobs; any non-excludable error aborts the run."""
        total = len(jobs)
        self.collector.record_pool_width(self.width)
        logger.info("Running trials", kind=self.kind, trials=total, width=self.width)
        results: List[TrialResult] = []

        if self.width == 1:
            for job in jobs:
                results.append(self._execute(job))
                self._progress(len(results), total)
            return sorted(results, key=lambda r: r.key)

        with ThreadPoolExecutor(max_workers=self.width) as executor:
            pending = {executor.submit(self._execute, job) for job in jobs}
            while pending:
                finished, pending = wait(pending, return_when=FIRST_COMPLETED)
                for future in finished:
                    error = future.exception()
                    if error is not None:
                        for other in pending:
                            other.cancel()
                        raise error
                    results.append(future.result())
                    self._progress(len(results), total)

        return sorted(results, key=lambda r: r.key)
