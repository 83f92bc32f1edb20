"""
Summary Renderer - Turns fold results into the plain-text run summaries using Jinja2 templates
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union
import os

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined, TemplateNotFound
from tabulate import tabulate

from mran.errors import UsageError
from mran.models.records import FoldResult

# published 5-fold averages on the four-domain Amazon review corpus
REFERENCE_AVERAGES = {"MRAN": 87.64, "MAN-NLL": 85.66}


@dataclass
class AccuracyRow:
    """Mean and standard deviation of one row, in percent"""
    name: str
    mean: float
    std: float

    def cell(self) -> str:
        return f"{self.mean:.2f} ± {self.std:.2f}"


def aggregate(results: Sequence[FoldResult]) -> List[AccuracyRow]:
    """
    One row per domain plus AVG.

    With several repeats the spread is across repeats (each repeat averaged over
    its folds); with one repeat it is across folds.
    """
    if not results:
        raise UsageError("no fold results to aggregate")
    names = results[0].test.domain_names
    repeats = sorted({r.repeat for r in results})
    # rows: (num_groups, M + 1) accuracies in percent, last column the cross-domain average
    groups = [[r for r in results if r.repeat == rep] for rep in repeats] if len(repeats) > 1 else [[r] for r in results]
    table = np.array(
        [np.mean([[*r.test.per_domain, r.test.average] for r in group], axis=0) for group in groups]
    ) * 100.0
    means, stds = table.mean(axis=0), table.std(axis=0)
    return [AccuracyRow(name, float(m), float(s)) for name, m, s in zip([*names, "AVG"], means, stds)]


class SummaryRenderer:
    """Renders run summaries from fold results"""

    TEMPLATE_MAP = {
        "summary": "summary.j2",
        "ablation": "ablation.j2",
    }

    def __init__(self, templates_dir: Optional[Union[str, Path]] = None):
        """
        Args:
            templates_dir: Directory containing Jinja2 templates (default: mran/templates)
        """
        if templates_dir is None:
            templates_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), "templates")
        self.templates_dir = Path(templates_dir)
        self.env = Environment(
            loader=FileSystemLoader(str(self.templates_dir)),
            undefined=StrictUndefined,
            keep_trailing_newline=True,
            trim_blocks=True,
            lstrip_blocks=True,
        )

    def _render(self, kind: str, **context) -> str:
        if kind not in self.TEMPLATE_MAP:
            raise UsageError(f"no template for '{kind}'")
        try:
            template = self.env.get_template(self.TEMPLATE_MAP[kind])
        except TemplateNotFound as e:
            raise UsageError(f"template file not found: {self.TEMPLATE_MAP[kind]} in {self.templates_dir}") from e
        return template.render(**context)

    def render_summary(
        self,
        results: Sequence[FoldResult],
        config_lines: Sequence[str],
        title: str = "MRAN",
        corpus: Optional[str] = None,
    ) -> str:
        """
        Per-domain mean ± std table with an AVG row, the fold listing and the config echo.

        corpus names the real corpus the run used; it enables the gap report.
        """
        rows = aggregate(results)
        table = tabulate(
            [[row.name, row.cell()] for row in rows],
            headers=["Domain", title],
            tablefmt="simple",
            disable_numparse=True,
        )
        folds = tabulate(
            [
                [r.repeat, r.fold, r.seed, r.best_epoch, f"{100 * r.best_validation:.2f}", f"{100 * r.test.average:.2f}"]
                for r in results
            ],
            headers=["repeat", "fold", "seed", "best epoch", "val avg", "test avg"],
            tablefmt="simple",
            disable_numparse=True,
        )
        gaps = None
        if corpus is not None:
            average = rows[-1].mean
            gaps = [(name, ref, average - ref) for name, ref in REFERENCE_AVERAGES.items()]
        return self._render(
            "summary",
            title=title,
            corpus=corpus,
            table=table,
            folds=folds,
            average=rows[-1],
            gaps=gaps,
            substituted=any(r.unlabeled_substituted for r in results),
            num_repeats=len({r.repeat for r in results}),
            num_folds=len({r.fold for r in results}),
            config_lines=list(config_lines),
        )

    def render_ablation(self, variants: Dict[str, Sequence[FoldResult]], config_lines: Sequence[str]) -> str:
        """One row per variant (full model first), one column per domain plus AVG"""
        if not variants:
            raise UsageError("no ablation variants to render")
        rows_by_variant = {label: aggregate(results) for label, results in variants.items()}
        names = [row.name for row in next(iter(rows_by_variant.values()))]
        table = tabulate(
            [[label, *(row.cell() for row in rows)] for label, rows in rows_by_variant.items()],
            headers=["Model", *names],
            tablefmt="simple",
            disable_numparse=True,
        )
        ranking = sorted(((rows[-1].mean, label) for label, rows in rows_by_variant.items()), reverse=True)
        return self._render(
            "ablation",
            table=table,
            ranking=[(label, mean) for mean, label in ranking],
            config_lines=list(config_lines),
        )
