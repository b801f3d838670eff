"""Runner - executes scenarios and writes their artifacts."""

import asyncio
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .artifacts import MANIFEST_NAME, RunManifest
from .commands import AnalysisResult, run_analysis
from .config import InvstabConfig, get_config
from .errors import ConfigError, InvstabError
from .observability import MetricsLogger, logger
from .scenario import Scenario, render_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


@dataclass
class RunOptions:
    """Per-invocation switches from the command line."""
    out_dir: Path
    seedless: bool = False
    guess: Optional[Path] = None


@dataclass
class RunOutcome:
    """Result of one scenario run."""
    scenario: str
    out_dir: Path
    exit_code: int
    artifacts: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def success(self) -> bool:
        return self.exit_code == EXIT_OK


def _parameter_dump(scenario: Scenario) -> dict:
    return {
        "system": asdict(scenario.system),
        "control": asdict(scenario.control),
        "operating": asdict(scenario.operating),
        "bases": asdict(scenario.system.bases),
    }


class ScenarioRunner:
    """
    Runs scenarios, one output directory per scenario.

    Each run does:
    1. Analysis (equilibrium, poles, admittance or simulate) in a worker thread
    2. CSV artifacts
    3. Manifest with the resolved scenario and the artifact list
    """

    def __init__(self, options: RunOptions, config: Optional[InvstabConfig] = None):
        self.options = options
        self.config = config or get_config()

    async def run(self, scenario: Scenario) -> RunOutcome:
        """
        Run one scenario.

        Args:
            scenario: Resolved scenario

        Returns:
            RunOutcome with exit code 0, 2 (config error) or 3 (numeric failure)
        """
        out_dir = Path(self.options.out_dir) / scenario.name
        metrics = MetricsLogger(scenario.name)
        metrics.start()

        manifest = RunManifest(
            scenario=scenario.name,
            mode=scenario.mode.value,
            analysis=scenario.analysis.kind.value,
            scenario_text=render_scenario(scenario),
            parameters=_parameter_dump(scenario),
        )

        try:
            logger.info(f"Step 1: Running {scenario.analysis.kind.value} analysis for {scenario.name}...")
            result: AnalysisResult = await asyncio.to_thread(
                run_analysis, scenario, metrics, self.options.guess
            )

            logger.info(f"Step 2: Writing {len(result.tables)} tables to {out_dir}...")
            for table in result.tables:
                table.write(out_dir)
                manifest.artifacts.append(table.name)
            manifest.summary = result.summary
            exit_code, error = EXIT_OK, None

        except ConfigError as e:
            exit_code, error = EXIT_CONFIG, str(e)
        except InvstabError as e:
            exit_code, error = EXIT_NUMERIC, str(e)

        if error:
            logger.error(f"Scenario {scenario.name} failed: {error}")
            metrics.record_failure(error)
            manifest.status = "error"
            manifest.error = error

        metrics.finish()
        manifest.run_id = metrics.metrics.run_id
        manifest.run_timestamp = metrics.metrics.run_timestamp
        manifest.wall_time_s = metrics.wall_time_s

        logger.info("Step 3: Writing manifest...")
        manifest.artifacts.append(MANIFEST_NAME)
        manifest.write(out_dir, seedless=self.options.seedless)
        metrics.log_summary()

        return RunOutcome(
            scenario=scenario.name,
            out_dir=out_dir,
            exit_code=exit_code,
            artifacts=list(manifest.artifacts),
            summary=manifest.summary,
            error=error,
        )

    async def run_batch(self, scenarios: list[Scenario]) -> list[RunOutcome]:
        """
        Run scenarios concurrently, at most `workers` at a time.

        Outcomes come back in input order.
        """
        limit = asyncio.Semaphore(self.config.workers)

        async def bounded(scenario: Scenario) -> RunOutcome:
            async with limit:
                return await self.run(scenario)

        logger.info(f"Running {len(scenarios)} scenario(s) with up to {self.config.workers} workers")
        return list(await asyncio.gather(*(bounded(s) for s in scenarios)))


def batch_exit_code(outcomes: list[RunOutcome]) -> int:
    """Highest exit code of a batch (numeric failures outrank config errors)."""
    return max((o.exit_code for o in outcomes), default=EXIT_OK)


async def run_scenarios(
    scenarios: list[Scenario],
    options: RunOptions,
    config: Optional[InvstabConfig] = None,
) -> list[RunOutcome]:
    """Entry point used by the CLI."""
    runner = ScenarioRunner(options, config)
    if len(scenarios) == 1:
        return [await runner.run(scenarios[0])]
    return await runner.run_batch(scenarios)
