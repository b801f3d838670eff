"""Logging and run metrics for the analysis pipeline."""

import logging
import time
from dataclasses import dataclass, field, asdict
from datetime import datetime
from typing import Optional
from uuid import uuid4

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger("invstab")


@dataclass
class RunMetrics:
    """Metrics collected during one scenario run."""

    run_id: str = field(default_factory=lambda: str(uuid4())[:8])
    run_timestamp: str = field(default_factory=lambda: datetime.now().isoformat())
    scenario: str = ""

    # Numerics
    newton_iterations: int = 0
    sweep_points: int = 0
    infeasible_points: int = 0
    integration_steps: int = 0

    # Timing
    stage_durations_ms: dict[str, int] = field(default_factory=dict)
    total_duration_ms: int = 0

    # Errors
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        """Convert to dictionary for logging/storage."""
        return asdict(self)


class MetricsLogger:
    """
    Collects and logs scenario run metrics.

    Usage:
        metrics = MetricsLogger("gfl_weak")
        metrics.start()

        with metrics.track_stage("equilibrium"):
            # solve

        metrics.record_newton(iterations=4)
        metrics.finish()
        metrics.log_summary()
    """

    def __init__(self, scenario: str = ""):
        self.metrics = RunMetrics(scenario=scenario)
        self._start_time: Optional[float] = None

    def start(self):
        """Start run timing."""
        self._start_time = time.perf_counter()
        logger.info(f"Run started: {self.metrics.run_id} ({self.metrics.scenario})")

    def finish(self):
        """Finish run timing."""
        if self._start_time is not None:
            self.metrics.total_duration_ms = int(
                (time.perf_counter() - self._start_time) * 1000
            )

    @property
    def wall_time_s(self) -> float:
        return self.metrics.total_duration_ms / 1000.0

    def record_newton(self, iterations: int):
        """Record Newton iterations spent on an equilibrium solve."""
        self.metrics.newton_iterations += iterations

    def record_sweep_point(self, feasible: bool):
        """Record one pole-sweep point."""
        self.metrics.sweep_points += 1
        if not feasible:
            self.metrics.infeasible_points += 1

    def record_steps(self, steps: int):
        """Record integration steps taken."""
        self.metrics.integration_steps += steps

    def record_stage_duration(self, stage: str, duration_ms: int):
        """Record duration for a pipeline stage."""
        self.metrics.stage_durations_ms[stage] = duration_ms

    def record_failure(self, error: str):
        """Record a failure."""
        self.metrics.failures.append(error)
        logger.error(f"Run failure: {error}")

    def track_stage(self, stage: str):
        """Context manager for tracking stage duration."""
        return StageTimer(self, stage)

    def log_summary(self):
        """Log a summary of the run."""
        m = self.metrics

        logger.info("=" * 50)
        logger.info(f"Run Summary: {m.run_id} ({m.scenario})")
        logger.info("=" * 50)
        logger.info(f"Duration: {m.total_duration_ms}ms")

        if m.newton_iterations:
            logger.info(f"Newton iterations: {m.newton_iterations}")
        if m.sweep_points:
            logger.info(f"Sweep points: {m.sweep_points} ({m.infeasible_points} infeasible)")
        if m.integration_steps:
            logger.info(f"Integration steps: {m.integration_steps}")

        if m.stage_durations_ms:
            logger.info("Stage durations:")
            for stage, ms in m.stage_durations_ms.items():
                logger.info(f"  - {stage}: {ms}ms")

        if m.failures:
            logger.warning(f"Failures: {len(m.failures)}")
            for failure in m.failures:
                logger.warning(f"  - {failure}")
        else:
            logger.info("Status: SUCCESS")

        logger.info("=" * 50)


class StageTimer:
    """Context manager for timing a pipeline stage."""

    def __init__(self, metrics_logger: MetricsLogger, stage: str):
        self.metrics_logger = metrics_logger
        self.stage = stage
        self.start_time: Optional[float] = None

    def __enter__(self):
        self.start_time = time.perf_counter()
        logger.debug(f"Starting stage: {self.stage}")
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.start_time is not None:
            duration_ms = int((time.perf_counter() - self.start_time) * 1000)
            self.metrics_logger.record_stage_duration(self.stage, duration_ms)
            logger.debug(f"Stage {self.stage} completed in {duration_ms}ms")

        if exc_type:
            self.metrics_logger.record_failure(
                f"{self.stage}: {exc_type.__name__}: {exc_val}"
            )

        return False  # Don't suppress exceptions
