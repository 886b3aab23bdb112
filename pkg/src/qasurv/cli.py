"""Command-line pipeline: ingest a dump, then run cohort and forest analyses.

Exit codes: 0 success, 1 internal error, 2 bad input or configuration.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import click
import numpy as np

from .cache import load_cache, save_cache
from .cohort import (
    ATTRIBUTE_LABELS,
    ATTRIBUTE_NAMES,
    AttributeSelection,
    CohortError,
    Criterion,
    Population,
    build_samples,
    dichotomize,
    label_disengagement,
)
from .concordance import ConcordanceError
from .evaluation import CV_HEADER, CrossValidationError, cross_validate
from .ingest import CommunityDataset, DumpError, dataset_stats, load_dataset
from .plots import importance_svg, km_svg
from .rsf import ForestError, ForestParams, fit_forest, permutation_importance, save_forest
from .survival import SurvivalError, greenwood_ci, km_fit, log_rank

logger = logging.getLogger(__name__)

INPUT_ERRORS = (
    DumpError,
    CohortError,
    SurvivalError,
    ForestError,
    CrossValidationError,
    ConcordanceError,
)
DEFAULT_THETAS = (24, 36)
CACHE_NAME = "dataset.npz"


class BadInput(click.ClickException):
    exit_code = 2


class PipelineGroup(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except INPUT_ERRORS as exc:
            raise BadInput(str(exc)) from exc


def read_config(path: str | Path) -> dict[str, object]:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Keys use the long flag names with ``-`` or ``_``. Comma-separated values
    become lists (for repeatable flags such as ``theta``).
    """
    config: dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadInput(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        config[key] = [v.strip() for v in value.split(",")] if "," in value else value
    return config


def _apply_config(ctx: click.Context, param, value):
    if value is None:
        return value
    try:
        config = read_config(value)
    except OSError as exc:
        raise BadInput(f"cannot read config {value}: {exc}") from None
    names = {p.name for p in ctx.command.params}
    unknown = sorted(set(config) - names)
    if unknown:
        raise BadInput(f"unknown config keys for '{ctx.command.name}': {', '.join(unknown)}")
    for name in ("theta", "attributes", "criterion"):
        if name in config and not isinstance(config[name], list):
            config[name] = [config[name]]
    ctx.default_map = {**(ctx.default_map or {}), **config}
    return value


config_option = click.option(
    "--config",
    type=click.Path(dir_okay=False),
    is_eager=True,
    expose_value=False,
    callback=_apply_config,
    help="Key-value file supplying defaults for any flag of this command.",
)
dataset_argument = click.argument("dataset", type=click.Path(exists=True))
theta_option = click.option(
    "--theta", type=int, multiple=True, default=DEFAULT_THETAS, show_default=True,
    help="Inactivity threshold in months (repeatable).",
)
output_option = click.option(
    "--output-dir", "-o", type=click.Path(file_okay=False), default=".", show_default=True
)


def forest_options(f):
    options = [
        click.option("--seed", type=int, required=True, help="Master seed (required)."),
        click.option("--n-trees", type=int, default=100, show_default=True),
        click.option("--min-leaf-deaths", type=int, default=3, show_default=True),
        click.option("--mtry", type=int, default=None, help="Features per node [floor(sqrt(m))]."),
        click.option("--max-split-candidates", type=int, default=32, show_default=True),
        click.option("--threads", type=int, default=1, show_default=True),
        click.option(
            "--population",
            type=click.Choice([p.value for p in Population]),
            default=Population.CONTRIBUTORS.value,
            show_default=True,
        ),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _forest_params(seed, n_trees, min_leaf_deaths, mtry, max_split_candidates) -> ForestParams:
    try:
        return ForestParams(n_trees, min_leaf_deaths, mtry, max_split_candidates, seed)
    except ForestError as exc:
        raise BadInput(str(exc)) from None


def open_dataset(path: str) -> CommunityDataset:
    """A dump directory, a directory holding an ingest cache, or a cache file."""
    p = Path(path)
    if p.is_dir():
        if (p / CACHE_NAME).is_file() and not (p / "Users.xml").exists():
            return load_cache(p / CACHE_NAME)
        return load_dataset(p)
    return load_cache(p)


def _out(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


@click.group(cls=PipelineGroup)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Survival analysis of user disengagement in Stack Exchange dumps."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@config_option
@click.argument("dump_dir", type=click.Path())
@output_option
def ingest(dump_dir, output_dir):
    """Parse an extracted dump and cache it for the other commands.

    Dumps ship as 7z archives; extract Users.xml, Posts.xml and Comments.xml
    into DUMP_DIR first.
    """
    dataset = load_dataset(dump_dir)
    out = _out(output_dir)
    save_cache(dataset, out / CACHE_NAME)
    stats = dataset_stats(dataset).to_dict()
    (out / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    report = dataset.report
    (out / "ingest_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    (out / "ingest_report.txt").write_text(report.to_text())
    click.echo(report.to_text(), nl=False)
    click.echo(json.dumps(stats))


@cli.command()
@config_option
@dataset_argument
def stats(dataset):
    """Print question, user, answer and comment counts as JSON."""
    click.echo(json.dumps(dataset_stats(open_dataset(dataset)).to_dict(), indent=2))


def _cohort_samples(ds: CommunityDataset, ids, theta):
    labels = [label_disengagement(ds.users_by_id[uid], ds.observation_end, theta) for uid in sorted(ids)]
    events = np.array([e for e, _ in labels], dtype=np.int64)
    durations = np.array([d for _, d in labels], dtype=np.int64)
    return events, durations


def _split_groups(ds: CommunityDataset, criterion: Criterion):
    split = dichotomize(ds, criterion)
    if not split.in_set or not split.out_set:
        empty = criterion.value if not split.in_set else f"not-{criterion.value}"
        raise BadInput(f"cohort {empty} is empty; cannot compare curves for criterion {criterion.value}")
    return split


LOGRANK_HEADER = "criterion,theta,n_in,n_out,observed_in,expected_in,statistic,p_value"


def _logrank_row(criterion, theta, split, result) -> str:
    return (
        f"{criterion.value},{theta},{len(split.in_set)},{len(split.out_set)},"
        f"{result.observed_a:.6g},{result.expected_a:.6g},{result.statistic:.6g},{result.p_value:.6g}"
    )


@cli.command()
@config_option
@dataset_argument
@click.option(
    "--criterion", "-c", type=click.Choice([c.value for c in Criterion]), multiple=True,
    default=tuple(c.value for c in Criterion), show_default=True,
)
@theta_option
@click.option("--confidence-level", type=float, default=0.95, show_default=True)
@click.option("--ci-transform", type=click.Choice(["log-log", "plain"]), default="log-log",
              show_default=True)
@click.option("--svg/--no-svg", default=True, show_default=True)
@output_option
def km(dataset, criterion, theta, confidence_level, ci_transform, svg, output_dir):
    """Kaplan-Meier curves of each contribution cohort versus its complement."""
    ds = open_dataset(dataset)
    out = _out(output_dir)
    rows = [LOGRANK_HEADER]
    for crit in (Criterion(c) for c in criterion):
        split = _split_groups(ds, crit)
        for th in theta:
            ev_in, du_in = _cohort_samples(ds, split.in_set, th)
            ev_out, du_out = _cohort_samples(ds, split.out_set, th)
            curves = []
            for side, ev, du in (("in", ev_in, du_in), ("out", ev_out, du_out)):
                curve = greenwood_ci(km_fit(ev, du), confidence_level, ci_transform)
                (out / f"km_{crit.value}_theta{th}_{side}.csv").write_text(curve.to_csv())
                label = crit.value if side == "in" else f"not {crit.value}"
                curves.append((f"{label} (n={len(ev)})", curve))
            result = log_rank(ev_in, du_in, ev_out, du_out)
            rows.append(_logrank_row(crit, th, split, result))
            if svg:
                title = f"{crit.value} vs not {crit.value}, theta={th}, log-rank p={result.p_value:.3g}"
                (out / f"km_{crit.value}_theta{th}.svg").write_text(km_svg(curves, title))
    text = "\n".join(rows) + "\n"
    (out / "logrank.csv").write_text(text)
    click.echo(text, nl=False)


@cli.command()
@config_option
@dataset_argument
@theta_option
@output_option
def logrank(dataset, theta, output_dir):
    """Log-rank tests for all five contribution cohorts."""
    ds = open_dataset(dataset)
    rows = [LOGRANK_HEADER]
    for crit in Criterion:
        split = _split_groups(ds, crit)
        for th in theta:
            ev_in, du_in = _cohort_samples(ds, split.in_set, th)
            ev_out, du_out = _cohort_samples(ds, split.out_set, th)
            rows.append(_logrank_row(crit, th, split, log_rank(ev_in, du_in, ev_out, du_out)))
    text = "\n".join(rows) + "\n"
    (_out(output_dir) / "logrank.csv").write_text(text)
    click.echo(text, nl=False)


@cli.command("rsf-cv")
@config_option
@dataset_argument
@theta_option
@click.option(
    "--attributes", type=click.Choice([a.value for a in AttributeSelection]), multiple=True,
    default=tuple(a.value for a in AttributeSelection), show_default=True,
)
@click.option("--k", "k", type=int, default=5, show_default=True)
@click.option("--runs", type=int, default=30, show_default=True)
@click.option("--label", default=None, help="Dataset label for the report [directory name].")
@click.option("--fold-detail", is_flag=True, help="Also write per-fold scores.")
@forest_options
@output_option
def rsf_cv(dataset, theta, attributes, k, runs, label, fold_detail, seed, n_trees,
           min_leaf_deaths, mtry, max_split_candidates, threads, population, output_dir):
    """Cross-validated C-index of forests per threshold and attribute set."""
    ds = open_dataset(dataset)
    params = _forest_params(seed, n_trees, min_leaf_deaths, mtry, max_split_candidates)
    label = label or Path(dataset).resolve().name.removesuffix(".npz")
    out = _out(output_dir)
    rows = [CV_HEADER]
    for th in theta:
        for attr in attributes:
            samples = build_samples(ds, th, attr, population)
            report = cross_validate(samples, params, k, runs, seed, label, threads)
            rows.append(report.csv_row())
            if fold_detail:
                (out / f"rsf_cv_folds_theta{th}_{attr}.csv").write_text(report.folds_csv())
    text = "\n".join(rows) + "\n"
    (out / "rsf_cv.csv").write_text(text)
    click.echo(text, nl=False)


@cli.command()
@config_option
@dataset_argument
@theta_option
@click.option(
    "--attributes", type=click.Choice([a.value for a in AttributeSelection]),
    default=AttributeSelection.BOTH.value, show_default=True,
)
@click.option("--n-repeats", type=int, default=10, show_default=True)
@click.option("--save-forest", "save_forests", is_flag=True, help="Also write the fitted forest per threshold.")
@forest_options
@output_option
def importance(dataset, theta, attributes, n_repeats, save_forests, seed, n_trees,
               min_leaf_deaths, mtry, max_split_candidates, threads, population, output_dir):
    """Permutation importance of each attribute on the OOB error."""
    ds = open_dataset(dataset)
    params = _forest_params(seed, n_trees, min_leaf_deaths, mtry, max_split_candidates)
    out = _out(output_dir)
    for th in theta:
        samples = build_samples(ds, th, attributes, population)
        forest = fit_forest(samples.features, samples.events, samples.durations, params, threads)
        rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), th]))
        report = permutation_importance(
            forest, samples.features, samples.events, samples.durations, n_repeats, rng,
            samples.feature_names,
        )
        text = report.to_csv()
        (out / f"importance_theta{th}.csv").write_text(text)
        labels = [
            f"{n} {ATTRIBUTE_LABELS[ATTRIBUTE_NAMES.index(n)]}" for n in samples.feature_names
        ]
        svg = importance_svg(labels, report.mean_importance, report.std_importance,
                             f"Permutation importance, theta={th}")
        (out / f"importance_theta{th}.svg").write_text(svg)
        if save_forests:
            save_forest(forest, out / f"forest_theta{th}.npz")
        click.echo(f"theta={th} baseline_oob_error={report.baseline_error:.6f}")
        click.echo(text, nl=False)


@cli.command("export-samples")
@config_option
@dataset_argument
@click.option("--theta", type=int, default=24, show_default=True)
@click.option(
    "--attributes", type=click.Choice([a.value for a in AttributeSelection]),
    default=AttributeSelection.BOTH.value, show_default=True,
)
@click.option(
    "--population", type=click.Choice([p.value for p in Population]),
    default=Population.ALL.value, show_default=True,
)
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None,
              help="CSV path [stdout].")
def export_samples(dataset, theta, attributes, population, output):
    """Write survival samples as CSV: user_id,event,duration,<attributes>."""
    samples = build_samples(open_dataset(dataset), theta, attributes, population)
    text = samples.to_csv()
    if output:
        Path(output).write_text(text)
    else:
        click.echo(text, nl=False)


def main() -> None:
    cli()
