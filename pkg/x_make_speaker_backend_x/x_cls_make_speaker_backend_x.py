from __future__ import annotations

import sys
from contextlib import suppress
from pathlib import Path

from .pipeline import (
    EvaluationReport,
    PipelineConfig,
    load_pipeline_config,
    render_report_text,
    run_pipeline,
)
from .run_reports import write_run_report
from .x_env_x import default_workers
from .x_logging_utils_x import get_logger

_LOGGER = get_logger()


def _emit_stdout(message: str) -> bool:
    try:
        print(message, end="" if message.endswith("\n") else "\n")
    except (OSError, RuntimeError):
        return False
    return True


def _emit_stderr(message: str) -> bool:
    try:
        print(message, file=sys.stderr)
    except (OSError, RuntimeError):
        return False
    return True


def _info(*parts: object) -> None:
    msg = " ".join(str(part) for part in parts)
    if not _emit_stdout(msg):
        with suppress(Exception):
            sys.stdout.write(msg + "\n")


def _error(*parts: object) -> None:
    msg = " ".join(str(part) for part in parts)
    with suppress(Exception):
        _LOGGER.error("%s", msg)
    if not _emit_stderr(msg):
        with suppress(Exception):
            sys.stderr.write(msg + "\n")


class XClsMakeSpeakerBackendX:
    """Runs the configured back-end and publishes its report."""

    def __init__(self, config: PipelineConfig, *, workers: int | None = None) -> None:
        self._config = config
        self._workers = workers if workers is not None else default_workers()

    @property
    def config(self) -> PipelineConfig:
        return self._config

    def evaluate(self) -> EvaluationReport:
        return run_pipeline(self._config, workers=self._workers)

    def run(self) -> EvaluationReport:
        report = self.evaluate()
        _info(render_report_text(report))
        if self._config.report_json is not None:
            written = write_run_report(report.to_payload(), self._config.report_json)
            _LOGGER.info("report written to %s", written)
        return report


def main(config_path: Path | str) -> EvaluationReport:
    return XClsMakeSpeakerBackendX(load_pipeline_config(config_path)).run()


if __name__ == "__main__":
    if len(sys.argv) != 2:  # noqa: PLR2004 - program name plus config path
        _error("usage: x_cls_make_speaker_backend_x CONFIG_JSON")
        raise SystemExit(2)
    try:
        main(sys.argv[1])
    except Exception as exc:
        _error("x_make_speaker_backend_x run failed:", exc)
        raise SystemExit(1) from exc


x_cls_make_speaker_backend_x = XClsMakeSpeakerBackendX

__all__ = ["XClsMakeSpeakerBackendX", "main", "x_cls_make_speaker_backend_x"]
