"""
Command-line experiment runner: train, ablate, gradcheck and synth.
"""
from pathlib import Path
from typing import Any, Dict, List, Optional
import functools
import logging

import typer
from dotenv import load_dotenv
from rich.console import Console
from tabulate import tabulate
from typing_extensions import Annotated

from mran.data import write_corpus
from mran.errors import MranError
from mran.experiment import ExperimentRunner
from mran.gradcheck import DEFAULT_TOLERANCE, assert_gradients, report_rows, run_gradcheck
from mran.logging_setup import console, setup_logging
from mran.models.config_model import ExperimentConfig, load_config_file
from mran.synthetic import synth_from_config

logger = logging.getLogger("mran.cli")

app = typer.Typer(
    name="mran",
    help="Mixup regularized adversarial networks for multi-domain text classification",
    add_completion=False,
    no_args_is_help=True,
)
stdout = Console(highlight=False, markup=False, emoji=False, soft_wrap=True)

ConfigOption = Annotated[Optional[Path], typer.Option("--config", help="key = value config file")]
DataDirOption = Annotated[Optional[Path], typer.Option("--data-dir", help="Corpus root, one directory per domain")]
SynthOption = Annotated[Optional[bool], typer.Option("--synth/--no-synth", help="Use the synthetic corpus")]
SeedOption = Annotated[Optional[int], typer.Option("--seed", help="Experiment seed")]
RepeatsOption = Annotated[Optional[int], typer.Option("--repeats", help="Repeat the rotation with seeds seed..seed+N-1")]
EpochsOption = Annotated[Optional[int], typer.Option("--max-epochs", help="Epoch budget per fold")]
BatchOption = Annotated[Optional[int], typer.Option("--batch-size", help="Instances per domain per step")]
AblateOption = Annotated[Optional[List[str]], typer.Option("--ablate", help="Disable a regularizer: dm, cm, lcm or ucm")]
OutOption = Annotated[Optional[Path], typer.Option("--out", help="Output directory")]
VerboseOption = Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging")]
QuietOption = Annotated[bool, typer.Option("--quiet", "-q", help="Warnings only, no progress bars")]


def resolve_config(config_path: Optional[Path], **flags: Any) -> ExperimentConfig:
    """flag > config file > environment > default"""
    file_values: Dict[str, Any] = load_config_file(config_path) if config_path is not None else {}
    return ExperimentConfig.build(file_values, flags)


def cli_command(fn):
    """The single error boundary: mran errors become a red message and exit status 1"""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except MranError as e:
            console.print(f"[bold red]Error:[/bold red] {e}", markup=True, highlight=False)
            raise typer.Exit(code=1)
        except OSError as e:
            console.print(f"[bold red]I/O error:[/bold red] {e}", markup=True, highlight=False)
            raise typer.Exit(code=1)

    return wrapper


@app.callback()
def main():
    """Environment defaults (MRAN_DATA_DIR, MRAN_OUTPUT_DIR) may come from a .env file"""
    load_dotenv()


@app.command()
@cli_command
def train(
    config: ConfigOption = None,
    data_dir: DataDirOption = None,
    synth: SynthOption = None,
    seed: SeedOption = None,
    repeats: RepeatsOption = None,
    max_epochs: EpochsOption = None,
    batch_size: BatchOption = None,
    ablate: AblateOption = None,
    out: OutOption = None,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """Run the k-fold rotation and write metrics, checkpoints and summary.txt"""
    setup_logging(verbose, quiet)
    cfg = resolve_config(
        config,
        data_dir=data_dir,
        synth=synth,
        seed=seed,
        repeats=repeats,
        max_epochs=max_epochs,
        batch_size=batch_size,
        ablate=_join(ablate),
        output_dir=out,
        quiet=quiet or None,
    )
    outcome = ExperimentRunner(cfg).train()
    stdout.print(outcome.summary, end="")
    logger.info(f"✓ Artifacts in {outcome.out_dir}")


@app.command()
@cli_command
def ablate(
    config: ConfigOption = None,
    data_dir: DataDirOption = None,
    synth: SynthOption = None,
    seed: SeedOption = None,
    repeats: RepeatsOption = None,
    max_epochs: EpochsOption = None,
    batch_size: BatchOption = None,
    out: OutOption = None,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """Full model plus the four single-regularizer ablations on identical folds"""
    setup_logging(verbose, quiet)
    cfg = resolve_config(
        config,
        data_dir=data_dir,
        synth=synth,
        seed=seed,
        repeats=repeats,
        max_epochs=max_epochs,
        batch_size=batch_size,
        output_dir=out,
        quiet=quiet or None,
    )
    _, table = ExperimentRunner(cfg).run_ablation()
    stdout.print(table, end="")


@app.command()
@cli_command
def gradcheck(
    term: Annotated[Optional[List[str]], typer.Option("--term", help="Check only this term (repeatable)")] = None,
    seed: Annotated[int, typer.Option("--seed", help="Probe seed")] = 0,
    dropout: Annotated[float, typer.Option("--dropout", help="Must stay 0; checks need a deterministic graph")] = 0.0,
    tolerance: Annotated[float, typer.Option("--tolerance", help="Max relative error")] = DEFAULT_TOLERANCE,
    verbose: VerboseOption = False,
):
    """Compare analytic gradients of every loss term with central differences"""
    setup_logging(verbose)
    results = run_gradcheck(_split(term), seed=seed, dropout=dropout)
    stdout.print(tabulate(report_rows(results, tolerance), headers="keys", tablefmt="simple", disable_numparse=True))
    assert_gradients(results, tolerance)
    logger.info(f"✓ All {len(results)} term(s) within {tolerance:.0e}")


@app.command()
@cli_command
def synth(
    out: Annotated[Path, typer.Option("--out", help="Directory to write the corpus into")],
    config: ConfigOption = None,
    seed: SeedOption = None,
    domains: Annotated[Optional[int], typer.Option("--domains", help="Number of domains")] = None,
    labeled: Annotated[Optional[int], typer.Option("--labeled", help="Labeled instances per domain")] = None,
    unlabeled: Annotated[Optional[int], typer.Option("--unlabeled", help="Unlabeled instances per domain")] = None,
    dim: Annotated[Optional[int], typer.Option("--dim", help="Feature dimension")] = None,
    shared_signal: Annotated[Optional[float], typer.Option("--shared-signal", help="Class separation")] = None,
    domain_shift: Annotated[Optional[float], typer.Option("--domain-shift", help="Domain offset magnitude")] = None,
    noise: Annotated[Optional[float], typer.Option("--noise", help="Noise scale")] = None,
    verbose: VerboseOption = False,
):
    """Write a synthetic corpus in the domain-directory layout"""
    setup_logging(verbose)
    cfg = resolve_config(
        config,
        seed=seed,
        synth_domains=domains,
        synth_labeled=labeled,
        synth_unlabeled=unlabeled,
        synth_dim=dim,
        synth_shared_signal=shared_signal,
        synth_domain_shift=domain_shift,
        synth_noise=noise,
    )
    dataset = synth_from_config(cfg)
    write_corpus(dataset, out)
    stdout.print(
        tabulate(
            [[d.name, d.num_labeled, d.num_unlabeled] for d in dataset.domains],
            headers=["domain", "labeled", "unlabeled"],
            tablefmt="simple",
        )
    )


def _split(values: Optional[List[str]]) -> Optional[List[str]]:
    """Repeatable options also accept comma-separated values"""
    if not values:
        return None
    return [part.strip() for value in values for part in value.split(",") if part.strip()]


def _join(values: Optional[List[str]]) -> Optional[str]:
    parts = _split(values)
    return ",".join(parts) if parts else None
