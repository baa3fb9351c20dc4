"""Plain-text run summaries rendered from Jinja2 templates."""

from typing import Any, Optional

import pandas as pd
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from mchmm.config import TEMPLATES_DIR
from mchmm.experiments.selection import SelectionReport
from mchmm.hmm.baum_welch import EstimateReport

_env = Environment(
    loader=FileSystemLoader(str(TEMPLATES_DIR)),
    undefined=StrictUndefined,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)


def render(name: str, **context: Any) -> str:
    return _env.get_template(name).render(**context)


def estimate_summary(report: EstimateReport, failures: Optional[list[str]] = None) -> str:
    return render("estimate.txt.j2", report=report, failures=failures or [])


def selection_summary(report: SelectionReport) -> str:
    return render("selection.txt.j2", report=report)


def batch_summary(summary: pd.DataFrame, wins: dict[str, int], replications: int) -> str:
    return render(
        "batch.txt.j2",
        rows=summary.to_dict(orient="records"),
        columns=list(summary.columns),
        wins=wins,
        replications=replications,
    )
