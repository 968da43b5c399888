"""Command-line interface: optimize, simulate, evaluate.

Runs are configured by a JSON document; command-line flags override file
values, which override defaults.  Every artifact embeds the resolved
configuration and seed so a run can be reproduced byte-for-byte.  Exit codes
are stable: 0 success, 2 configuration error, 3 data error, 4 optimizer
infeasibility.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import sys
from pathlib import Path

import click

from .evaluation import compare_thresholds
from .histograms import Domain, ThresholdSet, linearized_quantile_grid, probability_grid
from .ingestion import CsvSchema, InclusionPolicy, apply_inclusion, empirical_histogram, read_cgm_csv
from .losses import Cohort, LossKind, LossSpec
from .optimizers import (
    DEConfig,
    Method,
    SearchBudgetExceeded,
    optimize,
    round_up_thresholds,
)
from .simulation import MixtureSpec, generate_cohort, run_benchmark

log = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INFEASIBLE = 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _check_keys(obj: dict, allowed: set, context: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {context}")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as handle:
            config = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    return config


def _mixture_spec(section: dict) -> MixtureSpec:
    allowed = {
        "base_thresholds",
        "domain",
        "noise_sd",
        "noise_truncation",
        "weight_scheme",
        "n_subjects",
        "obs_per_subject",
        "histogram_cutoffs",
    }
    _check_keys(section, allowed, "input.mixture")
    kwargs = dict(section)
    if "domain" in kwargs:
        lower, upper = kwargs["domain"]
        kwargs["domain"] = Domain(float(lower), float(upper))
    if "base_thresholds" in kwargs:
        kwargs["base_thresholds"] = tuple(kwargs["base_thresholds"])
    if "histogram_cutoffs" in kwargs:
        kwargs["histogram_cutoffs"] = tuple(kwargs["histogram_cutoffs"])
    try:
        return MixtureSpec(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid input.mixture: {exc}")


def _de_config(section: dict, seed) -> DEConfig:
    allowed = {
        "population_size_per_dim",
        "mutation_range",
        "crossover_prob",
        "max_generations",
        "convergence_tol",
        "seed",
    }
    _check_keys(section, allowed, "de")
    kwargs = dict(section)
    if seed is not None:
        kwargs["seed"] = int(seed)
    if "mutation_range" in kwargs:
        kwargs["mutation_range"] = tuple(kwargs["mutation_range"])
    try:
        return DEConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid de section: {exc}")


def _load_input(section: dict, method: Method, out_dir: Path):
    """Build the cohort named by an input section.

    Simulation inputs expose the empirical cohort to continuous solvers and the
    binned cohort to discrete ones (overridable with "use"); CSV inputs yield
    integer histograms of the kept subjects and write an ingest sidecar.
    """
    if not isinstance(section, dict) or "kind" not in section:
        raise ConfigError('input must be an object with a "kind" of "simulation" or "csv"')
    kind = section["kind"]
    if kind == "simulation":
        _check_keys(section, {"kind", "mixture", "seed", "use"}, "input")
        spec = _mixture_spec(section.get("mixture", {}))
        seed = int(section.get("seed", 0))
        empirical, binned = generate_cohort(spec, seed)
        use = section.get("use", "auto")
        if use not in ("auto", "empirical", "binned"):
            raise ConfigError('input.use must be "auto", "empirical" or "binned"')
        if use == "auto":
            use = "empirical" if method is Method.DIFFERENTIAL_EVOLUTION else "binned"
        return empirical if use == "empirical" else binned
    if kind == "csv":
        _check_keys(section, {"kind", "path", "columns", "on_bad_row", "inclusion"}, "input")
        if "path" not in section:
            raise ConfigError("input.path is required for csv inputs")
        columns = section.get("columns", {})
        _check_keys(columns, {"id", "time", "value"}, "input.columns")
        schema = CsvSchema(
            id_column=columns.get("id", "id"),
            time_column=columns.get("time", "time"),
            value_column=columns.get("value", "gl"),
        )
        policy_section = section.get("inclusion", {})
        _check_keys(
            policy_section,
            {"short_days", "short_fraction", "mid_days", "mid_fraction",
             "long_window_days", "long_fraction"},
            "input.inclusion",
        )
        try:
            policy = InclusionPolicy(**policy_section)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid input.inclusion: {exc}")
        try:
            result = read_cgm_csv(
                section["path"], schema=schema, on_bad_row=section.get("on_bad_row", "error")
            )
        except FileNotFoundError:
            raise DataError(f"input file {section['path']} not found")
        except ValueError as exc:
            raise DataError(str(exc))
        decisions = {s.subject_id: apply_inclusion(s, policy) for s in result.series}
        kept = [s for s in result.series if decisions[s.subject_id].keep]
        sidecar = {
            "clamp_counts": result.clamp_counts,
            "skipped_rows": [{"line": line, "reason": reason} for line, reason in result.skipped_rows],
            "decisions": {
                sid: {"keep": d.keep, "reason": d.reason, "wear_days": d.wear_days}
                for sid, d in sorted(decisions.items())
            },
        }
        _write_json(out_dir / "ingest_report.json", sidecar)
        if not kept:
            raise DataError("no subjects pass the inclusion criteria")
        return Cohort([empirical_histogram(s) for s in kept])
    raise ConfigError(f"unknown input kind {kind!r}")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _parse_fixed(raw) -> tuple:
    if raw is None:
        return ()
    if isinstance(raw, str):
        parts = [p for p in raw.split(",") if p.strip()]
        try:
            return tuple(sorted(float(p) for p in parts))
        except ValueError:
            raise ConfigError(f"cannot parse fixed thresholds from {raw!r}")
    return tuple(sorted(float(v) for v in raw))


@click.group()
@click.option("--threads", type=int, default=None, help="Cap worker parallelism (results are identical for any value).")
def main(threads):
    """Data-driven thresholds for cohorts of bounded distributions."""
    level = os.environ.get("OPTITHRESH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    if threads is not None and threads < 1:
        _fail(EXIT_CONFIG, "--threads must be positive")
    if threads:
        log.info("thread cap set to %d (evaluation is deterministic regardless)", threads)


@main.command("optimize")
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON run configuration.")
@click.option("--loss", type=click.Choice(["l1", "l2"]), default=None)
@click.option("--method", type=click.Choice([m.value for m in Method]), default=None)
@click.option("--k", type=int, default=None)
@click.option("--fixed", type=str, default=None, help="Comma-separated fixed thresholds.")
@click.option("--grid-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
def cmd_optimize(config_path, loss, method, k, fixed, grid_size, seed, out_dir):
    """Find optimal thresholds for one cohort and write result artifacts."""
    try:
        config = _load_config(config_path)
        _check_keys(
            config,
            {"input", "loss", "method", "k", "fixed", "grid_size", "seed", "de", "out"},
            "config",
        )
        method_token = method or config.get("method", "de")
        try:
            method_enum = Method(method_token)
        except ValueError:
            raise ConfigError(f"unknown method {method_token!r}")
        loss_token = loss if loss is not None else config.get("loss")
        if method_enum is Method.PAA:
            if loss_token is not None:
                raise ConfigError(
                    "the PAA baseline optimizes its own compositional objective and "
                    "accepts no quantile-grid loss"
                )
            spec = None
        else:
            loss_token = loss_token or "l1"
            if loss_token not in ("l1", "l2"):
                raise ConfigError(f"loss must be 'l1' or 'l2', got {loss_token!r}")
            spec = LossSpec(LossKind(loss_token), int(grid_size or config.get("grid_size", 200)))
        k_value = k if k is not None else config.get("k")
        if k_value is None:
            raise ConfigError("k is required (flag --k or config key 'k')")
        fixed_values = _parse_fixed(fixed if fixed is not None else config.get("fixed"))
        seed_value = seed if seed is not None else config.get("seed", 0)
        out_path = Path(out_dir or config.get("out", "."))
        out_path.mkdir(parents=True, exist_ok=True)
        if "input" not in config:
            raise ConfigError("config requires an 'input' section")
        cohort = _load_input(config["input"], method_enum, out_path)
        de_config = _de_config(config.get("de", {}), seed_value)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except DataError as exc:
        _fail(EXIT_DATA, str(exc))

    try:
        result = optimize(
            cohort, int(k_value), spec, method_enum, fixed=fixed_values, config=de_config
        )
    except SearchBudgetExceeded as exc:
        _fail(EXIT_INFEASIBLE, str(exc))
    except ValueError as exc:
        _fail(EXIT_INFEASIBLE, f"optimizer infeasibility: {exc}")

    resolved = {
        "config_file": str(config_path) if config_path else None,
        "input": config.get("input"),
        "method": method_enum.value,
        "loss": result.loss_spec.kind.value,
        "grid_size": result.loss_spec.grid_size,
        "k": int(k_value),
        "fixed": list(fixed_values),
        "seed": int(seed_value),
    }
    payload = {
        "config": resolved,
        "thresholds": list(result.thresholds.thresholds),
        "thresholds_rounded_up": (
            list(round_up_thresholds(result.thresholds)) if cohort.integer_valued else None
        ),
        "loss": result.loss,
        "method": result.method.value,
        "evaluations": result.evaluations,
        "trace": None if result.trace is None else [[i, v] for i, v in result.trace],
    }
    _write_json(out_path / "result.json", payload)

    from .evaluation import tir_summary

    summary = tir_summary(cohort, result.thresholds)
    _write_csv(
        out_path / "tir_summary.csv",
        ["subject_id", *summary.range_labels],
        [
            [sid, *(repr(float(v)) for v in row)]
            for sid, row in zip(summary.subject_ids, summary.per_subject)
        ],
    )

    grid = result.loss_spec.grid_size
    u = probability_grid(grid)
    base = cohort.quantile_matrix(grid)
    rows = []
    for i, member in enumerate(cohort.members):
        lin = linearized_quantile_grid(member, result.thresholds, grid).values
        sid = member.subject_id if member.subject_id is not None else str(i)
        for m in range(grid):
            rows.append([sid, repr(float(u[m])), repr(float(base[i, m])), repr(float(lin[m]))])
    _write_csv(out_path / "linearization.csv", ["subject_id", "u", "q", "q_linearized"], rows)
    click.echo(f"wrote {out_path / 'result.json'}")


@main.command("simulate")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--k", type=int, default=None)
@click.option("--reps", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--grid-size", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
def cmd_simulate(config_path, k, reps, seed, grid_size, out_dir):
    """Run the synthetic benchmark and write aggregate and per-replication tables."""
    try:
        config = _load_config(config_path)
        _check_keys(
            config,
            {"mixture", "methods", "losses", "k", "reps", "seed", "noise_levels",
             "grid_size", "de", "out"},
            "config",
        )
        spec = _mixture_spec(config.get("mixture", {}))
        methods = config.get("methods", ["oracle", "de", "sa"])
        losses = config.get("losses", ["l1"])
        if any(token not in ("l1", "l2") for token in losses):
            raise ConfigError(
                "losses must be drawn from ['l1', 'l2']; the PAA baseline supplies its own "
                "compositional objective"
            )
        grid = int(grid_size or config.get("grid_size", 200))
        loss_specs = [LossSpec(LossKind(token), grid) for token in losses]
        k_value = int(k if k is not None else config.get("k", 3))
        reps_value = int(reps if reps is not None else config.get("reps", 10))
        seed_value = int(seed if seed is not None else config.get("seed", 0))
        noise_levels = config.get("noise_levels")
        de_config = _de_config(config.get("de", {}), None)
        out_path = Path(out_dir or config.get("out", "."))
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))

    try:
        report = run_benchmark(
            spec,
            methods,
            loss_specs,
            k=k_value,
            reps=reps_value,
            seeds=seed_value,
            noise_levels=noise_levels,
            de_config=de_config,
        )
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))

    out_path.mkdir(parents=True, exist_ok=True)
    payload = report.to_json_dict()
    payload["config"] = {
        "config_file": str(config_path) if config_path else None,
        "mixture": config.get("mixture", {}),
        "methods": list(methods),
        "losses": list(losses),
        "k": k_value,
        "reps": reps_value,
        "seed": seed_value,
        "noise_levels": noise_levels,
    }
    _write_json(out_path / "benchmark.json", payload)
    _write_csv(
        out_path / "benchmark.csv",
        ["method", "loss", "noise_sd", "k", "reps", "mean_thresholds", "se_thresholds",
         "mean_loss", "se_loss"],
        [
            [
                row.method,
                row.loss_kind,
                row.noise_sd,
                row.k,
                row.reps,
                " ".join(repr(float(v)) for v in row.mean_thresholds),
                "" if row.se_thresholds is None else " ".join(repr(float(v)) for v in row.se_thresholds),
                repr(row.mean_loss),
                "" if row.se_loss is None else repr(row.se_loss),
            ]
            for row in report.rows
        ],
    )
    _write_csv(
        out_path / "replications.csv",
        ["method", "loss", "noise_sd", "replication", "thresholds", "loss_value"],
        [
            [
                rec.method,
                rec.loss_kind,
                rec.noise_sd,
                rec.replication,
                " ".join(repr(float(v)) for v in rec.thresholds),
                repr(rec.loss),
            ]
            for rec in report.replications
        ],
    )
    click.echo(f"wrote {out_path / 'benchmark.json'}")


def _split_by_label(section: dict, out_dir: Path):
    """One CSV cohort split into two groups by a per-subject label column."""
    _check_keys(
        section, {"kind", "path", "columns", "on_bad_row", "inclusion", "label_column"}, "input"
    )
    label_column = section["label_column"]
    inner = {k: v for k, v in section.items() if k != "label_column"}
    cohort = _load_input(inner, Method.DIFFERENTIAL_EVOLUTION, out_dir)
    import csv as _csv

    labels: dict = {}
    columns = section.get("columns", {})
    id_column = columns.get("id", "id")
    with open(section["path"], newline="", encoding="utf-8") as handle:
        reader = _csv.DictReader(handle)
        if label_column not in (reader.fieldnames or []):
            raise DataError(f"label column {label_column!r} not present in {section['path']}")
        for row in reader:
            sid, label = row.get(id_column), row.get(label_column)
            if sid and label is not None:
                previous = labels.setdefault(sid, label)
                if previous != label:
                    raise DataError(f"subject {sid} carries conflicting labels")
    values = sorted(set(labels.values()))
    if len(values) != 2:
        raise DataError(f"label column must carry exactly two values, got {values}")
    group_a = [m for m in cohort.members if labels.get(m.subject_id) == values[0]]
    group_b = [m for m in cohort.members if labels.get(m.subject_id) == values[1]]
    if not group_a or not group_b:
        raise DataError("both label groups must contain at least one kept subject")
    return Cohort(group_a), Cohort(group_b)


@main.command("evaluate")
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--grid-size", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
def cmd_evaluate(config_path, grid_size, out_dir):
    """Compare threshold sets on two labeled cohorts (or one cohort + label column)."""
    try:
        config = _load_config(config_path)
        _check_keys(
            config,
            {"group_a", "group_b", "input", "threshold_sets", "reference", "grid_size", "out"},
            "config",
        )
        if "threshold_sets" not in config:
            raise ConfigError("config requires 'threshold_sets'")
        labeled_single = "input" in config
        if labeled_single == ("group_a" in config or "group_b" in config):
            raise ConfigError(
                "provide either 'group_a' and 'group_b', or a single 'input' with a label_column"
            )
        out_path = Path(out_dir or config.get("out", "."))
        out_path.mkdir(parents=True, exist_ok=True)
        if labeled_single:
            if config["input"].get("kind") != "csv" or "label_column" not in config["input"]:
                raise ConfigError("single-input evaluation requires a csv input with label_column")
            cohort_a, cohort_b = _split_by_label(config["input"], out_path)
        else:
            for key in ("group_a", "group_b"):
                if key not in config:
                    raise ConfigError(f"config requires {key!r}")
            cohort_a = _load_input(config["group_a"], Method.DIFFERENTIAL_EVOLUTION, out_path)
            cohort_b = _load_input(config["group_b"], Method.DIFFERENTIAL_EVOLUTION, out_path)
        sets = [ThresholdSet.ordered(values) for values in config["threshold_sets"]]
        reference = (
            ThresholdSet.ordered(config["reference"]) if "reference" in config else None
        )
        grid = int(grid_size or config.get("grid_size", 200))
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except DataError as exc:
        _fail(EXIT_DATA, str(exc))

    try:
        report = compare_thresholds(
            cohort_a, cohort_b, sets, LossSpec(LossKind.L2, grid), reference=reference
        )
    except ValueError as exc:
        _fail(EXIT_DATA, str(exc))

    payload = report.to_json_dict()
    payload["config"] = {
        "config_file": str(config_path),
        "threshold_sets": config["threshold_sets"],
        "reference": config.get("reference"),
        "grid_size": grid,
    }
    _write_json(out_path / "comparison.json", payload)
    _write_csv(
        out_path / "comparison.csv",
        ["thresholds", "loss_l1", "loss_l2", "reduction_l1_pct", "reduction_l2_pct"],
        [
            [
                " ".join(repr(float(v)) for v in entry.thresholds),
                repr(entry.loss_l1),
                repr(entry.loss_l2),
                repr(entry.reduction_l1_pct),
                repr(entry.reduction_l2_pct),
            ]
            for entry in report.entries
        ],
    )
    (out_path / "tables.md").write_text(report.to_markdown(), encoding="utf-8")
    click.echo(f"wrote {out_path / 'comparison.json'}")


if __name__ == "__main__":
    main()
