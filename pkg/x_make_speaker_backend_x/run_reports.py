"""JSON run reports for CLI commands and full pipeline runs."""

from __future__ import annotations

import json
from collections.abc import Mapping
from pathlib import Path

__all__ = [
    "REPORTS_DIR_NAME",
    "ensure_reports_dir",
    "write_run_report",
]

REPORTS_DIR_NAME = "reports"


def ensure_reports_dir(
    base_dir: Path | str | None = None,
    *,
    reports_name: str = REPORTS_DIR_NAME,
) -> Path:
    reports_dir = (Path.cwd() if base_dir is None else Path(base_dir)) / reports_name
    reports_dir.mkdir(parents=True, exist_ok=True)
    return reports_dir


def write_run_report(
    payload: Mapping[str, object],
    path: Path | str | None = None,
    *,
    tool_slug: str = "speaker_backend",
) -> Path:
    """Write *payload* as indented JSON; the default lands in ``reports/``.

    No wall-clock fields are added so identical runs give identical bytes.
    """

    report_path = (
        Path(path)
        if path is not None
        else ensure_reports_dir() / f"{tool_slug}_report.json"
    )
    report_path.parent.mkdir(parents=True, exist_ok=True)
    data = {str(key): value for key, value in payload.items()}
    data.setdefault("tool", tool_slug)
    report_path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    return report_path
