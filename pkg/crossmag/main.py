#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Crossmag Main Module
--------------------

Command-line entry point. Each pipeline stage is a subcommand working inside
one run directory:

    run_dir/
        data/                 synthetic slides as a manifest of patch pyramids
        checkpoints/          teacher, initial and distilled student weights
        embeddings/           bag stores and probe embeddings
        reports/              CSV tables
        logs/                 <command>.log and the distillation loss log
        resolved_config.yaml  configuration actually used by the last command

Usage:
    crossmag <command> [options]

Commands:
    synth      Generate synthetic slides and tessellate them
    distill    Distill the 20x teacher into the 5x student
    mil        Cross-validated ABMIL on frozen embeddings of several encoders
    e2e        End-to-end MIL with the block-unfreezing ablation
    probe      Patch-level linear probe on dominant-region labels
    stats      Paired tests between the MIL models
    bench      Speed table from fixtures and measured encoder throughput

Options:
    --config       Path to config file (default: config.yaml)
    --seed         Override global.seed
    --run-dir      Override global.run_dir
    --log-level    Override global.log_level

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite,
4 invariant violation, 1 anything else.
"""

import argparse
import itertools
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import psutil
import yaml
from tqdm import tqdm

from crossmag.benchmark import BenchConfig, emit_speed_table, load_speed_fixtures, time_encoder
from crossmag.benchmark.speed import REFERENCE_PATCHES_20X, REFERENCE_PATCHES_5X
from crossmag.distill import DistillConfig, pairs_from_manifest, train_distill
from crossmag.evaluation import (
    FOLD_COLUMNS,
    METRIC_COLUMNS,
    PAIRED_COLUMNS,
    ProbeConfig,
    bootstrap_f1_test,
    delong_test,
    evaluate_predictions,
    export_embeddings,
    linear_probe,
    mcnemar_test,
    stratified_split,
    summarize_folds,
    write_table,
)
from crossmag.mil import MilRunConfig, build_bags, build_head, load_slide_patches, run_block_ablation, save_bags
from crossmag.mil import train_mil_frozen
from crossmag.models import WeightFileError, build_encoder, load_encoder, preset, resolve_block_grid, save_encoder
from crossmag.pyramid import GeneratorConfig, Manifest, ManifestError, build_manifest, generate_synthetic_wsi
from crossmag.pyramid import read_manifest, tessellate
from crossmag.utils.config_loader import COMMAND_SECTIONS, apply_overrides, dump_config, get_config, load_config
from crossmag.utils.config_loader import section_values
from crossmag.utils.errors import ConfigError, CrossmagError, InvariantViolation, MissingArtifactError
from crossmag.utils.file_hash import get_file_hash
from crossmag.utils.logging_setup import configure_logging, get_logger

logger = get_logger(__name__)

COMMANDS = ("synth", "distill", "mil", "e2e", "probe", "stats", "bench")
RUN_SUBDIRS = ("data", "checkpoints", "embeddings", "reports", "logs")
LOCK_NAME = ".lock"
SLIDE_SEED_STRIDE = 1_000_000

# model name -> (checkpoint file, bag view)
MODEL_SOURCES = {
    "student_ema": ("student_ema.cmw", "lowmag"),
    "student_init": ("student_init.cmw", "lowmag"),
    "teacher_20x": ("teacher.cmw", "children_mean"),
}
MEASURED_ENCODERS = {
    "student": ("student_ema.cmw", "measured_student_5x", REFERENCE_PATCHES_5X, "5x"),
    "teacher": ("teacher.cmw", "measured_teacher_20x", REFERENCE_PATCHES_20X, "20x"),
}

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_INVARIANT = 4


class RunDirLockedError(CrossmagError):
    """Another live process holds the run directory."""


class CommandLineParser:
    """Argument parser with one subcommand per pipeline stage."""

    def __init__(self):
        self.parser = argparse.ArgumentParser(
            prog="crossmag",
            description="Cross-magnification distillation pipeline",
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        self._add_arguments()

    def _add_arguments(self) -> None:
        """Add the subcommand and the shared flags."""
        self.parser.add_argument("command", choices=COMMANDS, help="Pipeline stage to run")
        self.parser.add_argument(
            "--config", type=str, default="config.yaml", help="Path to config file (default: config.yaml)"
        )
        self.parser.add_argument("--seed", type=int, default=None, help="Override global.seed")
        self.parser.add_argument("--run-dir", type=str, default=None, help="Override global.run_dir")
        self.parser.add_argument(
            "--log-level",
            type=str.upper,
            default=None,
            choices=("DEBUG", "INFO", "WARNING", "ERROR"),
            help="Override global.log_level",
        )

    def parse(self, argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
        """Parse command line arguments."""
        return self.parser.parse_args(argv)


def slide_seeds(seed: int, n_slides: int) -> List[int]:
    """
    Generation seed of every synthetic slide of a run.

    >>> slide_seeds(2, 3)
    [2000000, 2000001, 2000002]
    """
    return [seed * SLIDE_SEED_STRIDE + i for i in range(n_slides)]


class RunManager:
    """
    Runs one command inside a run directory.

    Attributes:
        args: Command line arguments
        config: Resolved configuration
        run_dir: Run directory
    """

    def __init__(self, args: argparse.Namespace):
        """Initialize with command line arguments."""
        self.args = args
        self.command = args.command
        self.config: Dict[str, Dict[str, Any]] = {}
        self.run_dir: Optional[Path] = None
        self._lock: Optional[Path] = None

    @property
    def seed(self) -> int:
        return self.config["global"]["seed"]

    def path(self, *parts: str) -> Path:
        return self.run_dir.joinpath(*parts)

    def setup(self) -> None:
        """
        Load and resolve the configuration, lay out the run directory and start the run log.

        Raises:
            ConfigError: If the configuration is invalid
            RunDirLockedError: If another live process uses the run directory
        """
        required = [section for section in COMMAND_SECTIONS[self.command] if section != "global"]
        load_config(self.args.config, sections=required)
        self.config = apply_overrides(
            get_config(), seed=self.args.seed, run_dir=self.args.run_dir, log_level=self.args.log_level
        )
        try:
            configure_logging(self.config["global"]["log_level"])
        except ValueError as e:
            raise ConfigError(str(e), field="global.log_level") from e

        self.run_dir = Path(self.config["global"]["run_dir"])
        for name in RUN_SUBDIRS:
            self.path(name).mkdir(parents=True, exist_ok=True)
        self._acquire_lock()
        configure_logging(self.config["global"]["log_level"], log_file=self.path("logs", f"{self.command}.log"))
        dump_config(self.config, self.path("resolved_config.yaml"))

    def _acquire_lock(self) -> None:
        lock = self.path(LOCK_NAME)
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            try:
                owner = int(lock.read_text(encoding="utf-8").strip() or 0)
            except (OSError, ValueError):
                owner = 0
            if owner and owner != os.getpid() and psutil.pid_exists(owner):
                raise RunDirLockedError(f"Run directory {self.run_dir} is in use by process {owner}") from None
            logger.warning("Removing stale lock %s (owner %s)", lock, owner or "unknown")
            lock.unlink(missing_ok=True)
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(str(os.getpid()))
        self._lock = lock

    def teardown(self) -> None:
        """Release the run-directory lock and detach the run log."""
        if self._lock is not None:
            self._lock.unlink(missing_ok=True)
            self._lock = None
        configure_logging(logging.getLogger().level)

    # Prerequisites

    def require(self, path: Path, hint: str) -> Path:
        if not path.exists():
            raise MissingArtifactError(path, hint=hint)
        return path

    def manifest(self) -> Manifest:
        self.require(self.path("data", "manifest.jsonl"), "run `crossmag synth` first")
        return read_manifest(self.path("data"))

    def checkpoint(self, name: str) -> Path:
        return self.require(self.path("checkpoints", name), "run `crossmag distill` first")

    def n_classes(self, manifest: Manifest) -> int:
        histogram = manifest.records[0].region_label_histogram
        return max(len(histogram), max(r.slide_label for r in manifest) + 1)

    # Commands

    def cmd_synth(self) -> Manifest:
        """Generate slides, tessellate them and persist the manifest under data/."""
        section = self.config["synth"]
        with section_values("synth", section):
            generator = GeneratorConfig.from_config(section)
        seeds = slide_seeds(self.seed, section["n_slides"])

        pairs = []
        for seed in tqdm(seeds, desc="Slides"):
            pairs.extend(tessellate(generate_synthetic_wsi(generator, seed), section["background_threshold"]))
        manifest = build_manifest(pairs, self.path("data"), workers=section["workers"])
        digest = get_file_hash(self.path("data", "manifest.jsonl"))
        logger.info("Manifest with %d records from %d slides (sha256 %s)", len(manifest), len(seeds), digest[:12])
        return manifest

    def build_encoders(self):
        section = self.config["encoder"]
        with section_values("encoder", section):
            teacher_config = preset(section["teacher_preset"], **section["teacher_overrides"])
            student_config = preset(section["student_preset"], **section["student_overrides"])
        teacher = build_encoder(teacher_config, seed=section["init_seed"])
        student = build_encoder(student_config, seed=section["init_seed"] + 1)
        return teacher, student

    def cmd_distill(self) -> None:
        """Distill; writes teacher, initial student and EMA student checkpoints."""
        manifest = self.manifest()
        with section_values("distill", self.config["distill"]):
            config = DistillConfig.from_config(self.config["distill"])
        teacher, student = self.build_encoders()
        save_encoder(self.path("checkpoints", "teacher.cmw"), teacher)
        save_encoder(self.path("checkpoints", "student_init.cmw"), student)

        pairs = pairs_from_manifest(manifest, self.path("data"))
        result = train_distill(pairs, teacher, student, config, seed=self.seed, run_dir=self.run_dir)
        final = result.history[-1] if result.history else {}
        summary = {key: value for key, value in final.items() if key != "wall_ms"}
        write_table([summary], self.path("reports", "distill_summary.csv"), ["step", "lr", "L", "L_global", "L_local"])
        logger.info("Distillation finished: %s", ", ".join(f"{k}={v:.4f}" for k, v in summary.items()))

    def _split_external(self, slide_labels: Sequence[int], fraction: float):
        if fraction <= 0:
            return np.arange(len(slide_labels)), np.array([], dtype=int)
        return stratified_split(np.asarray(slide_labels), fraction, self.seed)

    def cmd_mil(self) -> None:
        """Bags per model, cross-validated frozen ABMIL, fold/summary/prediction CSVs."""
        section = self.config["mil"]
        manifest = self.manifest()
        n_classes = self.n_classes(manifest)
        with section_values("mil", section):
            run_config = MilRunConfig.from_config(section, "frozen", seed=self.seed)
        task = self.config["stats"]["task"]

        fold_rows: List[Dict[str, Any]] = []
        summaries = []
        for model in section["models"]:
            if model not in MODEL_SOURCES:
                raise ConfigError(f"Unknown MIL model {model}; expected one of {sorted(MODEL_SOURCES)}", "mil.models")
            filename, view = MODEL_SOURCES[model]
            checkpoint = self.checkpoint(filename)
            encoder = load_encoder(checkpoint)
            bags = build_bags(manifest, self.path("data"), encoder, view=view, workers=section["workers"])
            save_bags(bags, self.path("embeddings", model), get_file_hash(checkpoint))

            cohort, external = self._split_external([bag.label for bag in bags], section["external_fraction"])
            head = build_head(
                bags[0].dim, n_classes, run_config.attention_dim, run_config.gated, seed=self.seed
            )
            result = train_mil_frozen(
                [bags[i] for i in cohort], head, run_config, external=[bags[i] for i in external] or None
            )
            rows = [{"task": task, "model": model, **row} for row in result.rows]
            fold_rows.extend(rows)
            summaries.append(summarize_folds(pd.DataFrame(rows), by=["task", "model", "split"]))
            write_table(
                result.predictions,
                self.path("reports", f"predictions_{model}.csv"),
                ["slide_id", "fold", "split", "label", "pred"],
            )

        write_table(fold_rows, self.path("reports", "mil_folds.csv"), METRIC_COLUMNS)
        summary = pd.concat(summaries, ignore_index=True)
        write_table(summary.to_dict("records"), self.path("reports", "mil_summary.csv"), list(summary.columns))

    def cmd_e2e(self) -> None:
        """Block-unfreezing ablation of end-to-end MIL on the distilled student."""
        section = self.config["e2e"]
        manifest = self.manifest()
        encoder = load_encoder(self.checkpoint("student_ema.cmw"))
        slides = [load_slide_patches(records, self.path("data")) for records in manifest.by_slide().values()]
        with section_values("e2e", section):
            run_config = MilRunConfig.from_config(section, "e2e", seed=self.seed)
        with section_values("e2e", section, field="block_grid"):
            grid = resolve_block_grid(section["block_grid"], len(encoder.blocks))
        head = build_head(
            encoder.config.embed_dim,
            self.n_classes(manifest),
            run_config.attention_dim,
            run_config.gated,
            run_config.projection_dim,
            seed=self.seed,
        )
        ablation = run_block_ablation(slides, encoder, head, run_config, grid=grid)
        write_table(ablation.summary.to_dict("records"), self.path("reports", "ablation.csv"), ["k"])
        write_table(ablation.folds.to_dict("records"), self.path("reports", "ablation_folds.csv"), FOLD_COLUMNS)

    def cmd_probe(self) -> None:
        """Linear probe on dominant-region patch labels with a slide-level held-out split."""
        with section_values("probe", self.config["probe"]):
            config = ProbeConfig.from_config(self.config["probe"])
        manifest = self.manifest()
        self.checkpoint("student_ema.cmw")
        by_slide = manifest.by_slide()
        slide_ids = list(by_slide)
        _, test_slides = stratified_split(
            np.array([by_slide[s][0].slide_label for s in slide_ids]), config.test_fraction, self.seed
        )
        held_out = {slide_ids[i] for i in test_slides}
        records = [record for slide in slide_ids for record in by_slide[slide]]
        labels = np.array([record.dominant_region for record in records])
        test_indices = [i for i, record in enumerate(records) if record.slide_id in held_out]
        n_classes = len(records[0].region_label_histogram)

        index_rows = [
            {
                "slide_id": r.slide_id,
                "grid_row": r.grid_row,
                "grid_col": r.grid_col,
                "label": int(labels[i]),
                "split": "test" if r.slide_id in held_out else "train",
            }
            for i, r in enumerate(records)
        ]
        write_table(index_rows, self.path("embeddings", "probe", "patches.csv"), list(index_rows[0]))

        rows = []
        for model, (filename, view) in MODEL_SOURCES.items():
            checkpoint = self.path("checkpoints", filename)
            if not checkpoint.exists():
                logger.warning("Skipping probe for %s: %s not found", model, checkpoint)
                continue
            bags = build_bags(manifest, self.path("data"), load_encoder(checkpoint), view=view)
            embeddings = np.concatenate([bag.embeddings for bag in bags])
            export_embeddings(
                embeddings,
                self.path("embeddings", "probe", model),
                {"model": model, "view": view, "encoder_checkpoint_hash": get_file_hash(checkpoint)},
            )
            result = linear_probe(
                embeddings, labels, config, seed=self.seed, test_indices=test_indices, n_classes=n_classes
            )
            rows.append({"task": "patch_phenotype", "model": model, "fold": "holdout", **result.report.as_row()})
        write_table(rows, self.path("reports", "probe.csv"), METRIC_COLUMNS)

    def _load_predictions(self, model: str) -> pd.DataFrame:
        path = self.require(self.path("reports", f"predictions_{model}.csv"), "run `crossmag mil` first")
        frame = pd.read_csv(path)
        return frame[frame["split"] == "test"].sort_values("slide_id").reset_index(drop=True)

    def cmd_stats(self) -> None:
        """Pooled test-set metrics per model and DeLong / McNemar / bootstrap-F1 per model pair."""
        section = self.config["stats"]
        models = section["models"]
        if len(models) < 2:
            raise ConfigError("stats needs at least two models", field="stats.models")
        frames = {model: self._load_predictions(model) for model in models}

        metric_rows = []
        for model, frame in frames.items():
            probs = frame.filter(like="prob_").to_numpy()
            report = evaluate_predictions(probs, frame["label"].to_numpy(), n_boot=section["n_boot"], seed=self.seed)
            metric_rows.append({"task": section["task"], "model": model, "fold": "pooled", **report.as_row()})
        write_table(metric_rows, self.path("reports", "metrics.csv"), METRIC_COLUMNS)

        paired_rows = []
        for model_a, model_b in itertools.combinations(models, 2):
            a, b = frames[model_a], frames[model_b]
            if not a["slide_id"].equals(b["slide_id"]) or not a["label"].equals(b["label"]):
                raise InvariantViolation(f"Predictions of {model_a} and {model_b} cover different test slides")
            labels = a["label"].to_numpy()
            probs_a, probs_b = a.filter(like="prob_").to_numpy(), b.filter(like="prob_").to_numpy()
            results = []
            if probs_a.shape[1] == 2 and np.unique(labels).size == 2:
                results.append(delong_test(probs_a[:, 1], probs_b[:, 1], labels))
            else:
                logger.warning(
                    "Skipping DeLong for %s vs %s: needs two classes in both labels and scores", model_a, model_b
                )
            results.append(mcnemar_test(a["pred"].to_numpy(), b["pred"].to_numpy(), labels))
            results.append(
                bootstrap_f1_test(
                    a["pred"].to_numpy(),
                    b["pred"].to_numpy(),
                    labels,
                    n_boot=section["n_boot"],
                    seed=self.seed,
                    n_classes=probs_a.shape[1],
                )
            )
            for result in results:
                paired_rows.append(
                    {
                        "task": section["task"],
                        "model_a": model_a,
                        "model_b": model_b,
                        "test": result.test,
                        "statistic": result.statistic,
                        "p": result.p_value,
                        "delta": result.delta,
                        "flagged": result.flagged,
                        "note": result.note,
                    }
                )
        write_table(paired_rows, self.path("reports", "paired_tests.csv"), PAIRED_COLUMNS)

    def cmd_bench(self) -> None:
        """Speed table from the fixture file; measured throughput of the configured encoders."""
        with section_values("bench", self.config["bench"]):
            config = BenchConfig.from_config(self.config["bench"])
        fixture = load_speed_fixtures(config.fixture_file)
        for note in fixture.notes:
            logger.info("Fixture note: %s", note)
        emit_speed_table(
            fixture.rows,
            self.path("reports", "speed_table.csv"),
            reference=fixture.reference,
            caption_speedups=fixture.caption_speedups,
        )
        if not config.measure:
            return

        teacher, student = self.build_encoders()
        fallback = {"student": student, "teacher": teacher}
        measured = []
        reports = {}
        for name in config.encoders:
            if name not in MEASURED_ENCODERS:
                raise ConfigError(f"Unknown bench encoder {name}; expected one of {sorted(MEASURED_ENCODERS)}")
            filename, model, patches_per_wsi, magnification = MEASURED_ENCODERS[name]
            checkpoint = self.path("checkpoints", filename)
            encoder = load_encoder(checkpoint) if checkpoint.exists() else fallback[name]
            report = time_encoder(
                encoder,
                n_patches=config.n_patches,
                batch_size=config.batch_size,
                warmup_batches=config.warmup_batches,
                seed=self.seed,
            )
            reports[model] = report.to_dict()
            measured.append(report.as_fixture(model, patches_per_wsi, magnification))
        if measured:
            emit_speed_table(measured, self.path("reports", "speed_measured.csv"))
        self.path("reports", "throughput.yaml").write_text(
            yaml.safe_dump(reports, default_flow_style=False, sort_keys=True), encoding="utf-8"
        )

    def run(self) -> None:
        """
        Set up, run the command and release the run directory.

        Raises:
            CrossmagError: If the command fails
        """
        start_time = time.time()
        try:
            self.setup()
            getattr(self, f"cmd_{self.command}")()
            logger.info("crossmag %s completed in %.1fs", self.command, time.time() - start_time)
        finally:
            self.teardown()


def exit_code_for(error: BaseException) -> int:
    """
    Map an exception to the process exit code.

    Corrupt manifests and weight files count as missing prerequisites.

    >>> exit_code_for(ConfigError("bad")), exit_code_for(InvariantViolation("nan")), exit_code_for(OSError())
    (2, 4, 1)
    >>> exit_code_for(WeightFileError("truncated"))
    3
    """
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, (MissingArtifactError, ManifestError, WeightFileError)):
        return EXIT_MISSING
    if isinstance(error, InvariantViolation):
        return EXIT_INVARIANT
    return EXIT_FAILURE


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Main entry point.

    Returns:
        int: Exit code (0 success, 2 config, 3 missing prerequisite, 4 invariant, 1 other)
    """
    args = CommandLineParser().parse(argv)
    try:
        RunManager(args).run()
        return EXIT_OK

    except KeyboardInterrupt:
        logger.info("Operation cancelled by user")
        return EXIT_FAILURE
    except Exception as e:  # pylint: disable=broad-except
        code = exit_code_for(e)
        if code == EXIT_CONFIG:
            logger.error("Configuration error: %s", e)
        elif code == EXIT_FAILURE and not isinstance(e, (CrossmagError, ValueError, OSError)):
            logger.critical("An unexpected error occurred: %s", e)
        else:
            logger.error("crossmag %s failed: %s", args.command, e)
        if args.log_level == "DEBUG":
            logger.exception("Detailed error information:")
        return code


if __name__ == "__main__":
    sys.exit(main())
