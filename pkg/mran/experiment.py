"""
Experiment Runner - cross-validated training runs and ablation studies.

One dataset, many cycles: every repeat re-deals the folds from its own seed and
every fold trains a fresh model, writing its metrics stream and best checkpoint.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple
import logging

from tqdm import tqdm

from mran.checkpoint_storage import CheckpointStorage
from mran.data import LAYOUT_HINT, MultiDomainDataset, load_corpus
from mran.errors import ConfigError
from mran.folds import FoldPlan, make_folds
from mran.metrics_stream import MetricsStream
from mran.models.ablation_variant import AblationVariant
from mran.models.config_model import ExperimentConfig
from mran.models.records import FoldResult
from mran.summary_renderer import SummaryRenderer
from mran.synthetic import synth_from_config
from mran.training import FoldData, fit

logger = logging.getLogger(__name__)

FULL_MODEL = "MRAN"
SUMMARY_FILE = "summary.txt"
ABLATION_FILE = "ablation.txt"
ECHO_FILE = "config.echo"
VOCAB_FILE = "vocab.txt"


@dataclass
class RunOutcome:
    results: List[FoldResult]
    summary: str
    out_dir: Path


def build_fold_data(dataset: MultiDomainDataset, plan: FoldPlan, test_fold: int) -> FoldData:
    """
    Slice every domain into the rotation's train / validation / test rows.

    Domains without unlabeled rows fall back to their labeled training rows
    with labels hidden.
    """
    train_labeled, train_labels, unlabeled, validation, test = [], [], [], [], []
    substituted = False
    for i, domain in enumerate(dataset.domains):
        split = plan.rotation(i, test_fold)
        rows = domain.labeled[split.train]
        train_labeled.append(rows)
        train_labels.append(domain.labels[split.train])
        if domain.num_unlabeled > 0:
            unlabeled.append(domain.unlabeled)
        else:
            unlabeled.append(rows)
            substituted = True
        validation.append((domain.labeled[split.validation], domain.labels[split.validation]))
        test.append((domain.labeled[split.test], domain.labels[split.test]))
    return FoldData(
        domain_names=dataset.domain_names,
        input_dim=dataset.input_dim,
        train_labeled=train_labeled,
        train_labels=train_labels,
        unlabeled=unlabeled,
        validation=validation,
        test=test,
        unlabeled_substituted=substituted,
    )


class ExperimentRunner:
    """Runs the k-fold protocol for one configuration and renders its summaries"""

    def __init__(self, config: ExperimentConfig, renderer: Optional[SummaryRenderer] = None):
        self.config = config
        self.renderer = renderer or SummaryRenderer()

    def load_dataset(self) -> Tuple[MultiDomainDataset, Optional[str]]:
        """
        Returns:
            The dataset and the corpus name (None for synthetic data)

        Raises:
            ConfigError: no data source configured, or the corpus layout is wrong
        """
        config = self.config
        if config.synth:
            dataset = synth_from_config(config)
            logger.info(f"✓ Generated synthetic corpus: {dataset.num_domains} domains, width {dataset.input_dim}")
            return dataset, None
        if config.data_dir is None:
            raise ConfigError(f"no data source: pass --data-dir, set MRAN_DATA_DIR or use --synth; {LAYOUT_HINT}")
        dataset = load_corpus(config.data_dir, config.domain_names, config.vocab_size, config.log_counts)
        if not dataset.has_unlabeled:
            logger.warning("⚠ Some domains have no unlabeled file; their labeled training rows serve as the unlabeled pool")
        return dataset, Path(config.data_dir).name

    def run_cross_validation(self, dataset: MultiDomainDataset, out_dir: Path, config: Optional[ExperimentConfig] = None) -> List[FoldResult]:
        """Every repeat x fold cycle, each writing repeat{r}/fold{k}/metrics.csv and best.ckpt"""
        config = config or self.config
        echo = "\n".join(config.echo_lines()) + "\n"
        labels = [d.labels for d in dataset.domains]
        results: List[FoldResult] = []

        cycles = [(r, k) for r in range(config.repeats) for k in range(config.folds)]
        plans: Dict[int, FoldPlan] = {}
        for repeat, fold in tqdm(cycles, desc="folds", disable=config.quiet or None):
            seed = config.seed + repeat
            if repeat not in plans:
                plans[repeat] = make_folds(labels, seed, config.folds)
            cycle_dir = out_dir / f"repeat{repeat}" / f"fold{fold}"
            fold_data = build_fold_data(dataset, plans[repeat], fold)
            run_config = config.model_copy(update={"seed": seed})
            outcome = fit(run_config, fold_data, seed_key=(fold,), metrics=MetricsStream(cycle_dir / "metrics.csv"))
            CheckpointStorage(cycle_dir).save_model("best", outcome.model, echo)

            result = FoldResult(
                repeat=repeat,
                fold=fold,
                seed=seed,
                best_epoch=outcome.best_epoch,
                best_validation=outcome.best_validation,
                test=outcome.test,
                unlabeled_substituted=fold_data.unlabeled_substituted,
            )
            results.append(result)
            logger.info(
                f"✓ Repeat {repeat} fold {fold}: best epoch {result.best_epoch}, "
                f"test average {100 * result.test.average:.2f}%"
            )
        return results

    def _write_run(self, dataset: MultiDomainDataset, corpus: Optional[str], out_dir: Path, config: ExperimentConfig, title: str) -> RunOutcome:
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = config.echo_lines()
        (out_dir / ECHO_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
        if dataset.vocabulary is not None:
            dataset.vocabulary.save(out_dir / VOCAB_FILE)
        results = self.run_cross_validation(dataset, out_dir, config)
        summary = self.renderer.render_summary(results, lines, title=title, corpus=corpus)
        (out_dir / SUMMARY_FILE).write_text(summary, encoding="utf-8")
        logger.info(f"✓ Wrote {out_dir / SUMMARY_FILE}")
        return RunOutcome(results, summary, out_dir)

    def train(self) -> RunOutcome:
        dataset, corpus = self.load_dataset()
        title = FULL_MODEL if not self.config.ablate else f"{FULL_MODEL} " + " ".join(v.label for v in self.config.ablate)
        return self._write_run(dataset, corpus, Path(self.config.output_dir), self.config, title)

    def run_ablation(self) -> Tuple[Dict[str, RunOutcome], str]:
        """
        The full model and the four single-variant ablations on identical folds and seeds.

        Each variant gets its own subdirectory; ablation.txt compares them.
        """
        dataset, corpus = self.load_dataset()
        out_dir = Path(self.config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        runs: Dict[str, RunOutcome] = {}
        plan = [(FULL_MODEL, "full", [])] + [(f"{FULL_MODEL} {v.label}", f"wo_{v.value}", [v]) for v in AblationVariant]
        for label, dirname, ablate in plan:
            logger.info(f"Running {label}")
            config = self.config.model_copy(update={"ablate": ablate})
            runs[label] = self._write_run(dataset, corpus, out_dir / dirname, config, label)

        table = self.renderer.render_ablation({label: run.results for label, run in runs.items()}, self.config.echo_lines())
        (out_dir / ABLATION_FILE).write_text(table, encoding="utf-8")
        logger.info(f"✓ Wrote {out_dir / ABLATION_FILE}")
        return runs, table
