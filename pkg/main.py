"""
DACL command-line interface

Dual adversarial co-learning for multi-domain text classification: corpus
generation, training, evaluation, ablations, unsupervised domain adaptation,
loss-weight sweeps and the gradient oracle.

Every run command writes a self-describing directory (manifest.json,
metrics CSV, snapshots, reports) that `replay` can re-execute.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError

from config import DEFAULT_OUTPUT_DIR, DEFAULT_SEED, DEFAULT_THREADS, LOG_LEVEL, SWEEP_VALUES, read_run_config
from errors import AcceptanceFailure, ConfigurationError, DaclError, exit_code_for
from models import AblationEnum, EvalReport, RunManifest, SweepParameter, SweepSpec, SynthSpec, TrainConfig
from services import evaluation, reporting
from services.data import MultiDomainDataset, load_corpus, write_corpus
from services.gradcheck import DEFAULT_CASES, run_gradcheck
from services.snapshot import load_snapshot, save_snapshot
from services.synthetic import generate_synthetic

# Configure logging
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

RUN_COMMANDS = ("train", "eval", "ablate", "uda", "sweep", "baseline")
MANIFEST_FILE = "manifest.json"


class DaclArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ── Argument parsing ────────────────────────────────────


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help="Corpus manifest (file or directory); a synthetic corpus is generated when omitted")
    parser.add_argument("--config", help="Flat key=value run-config file")
    parser.add_argument("--out", default=None, help=f"Output directory (default {DEFAULT_OUTPUT_DIR}/<command>)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--alpha", type=float, default=None, help="Separation regularizer weight")
    parser.add_argument("--gamma", type=float, default=None, help="Domain-adversarial weight")
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--batch", type=int, default=None, help="Examples per domain per pool")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--folds", type=int, default=1, choices=(1, 5))
    parser.add_argument("--ablation", choices=[a.value for a in AblationEnum], default=None)
    parser.add_argument("--uda-target", default=None, help="Domain name treated as the unlabeled target")
    parser.add_argument("--uda-unlabeled", choices=(evaluation.UDA_UNLABELED_WITHHELD, evaluation.UDA_UNLABELED_POOL), default=evaluation.UDA_UNLABELED_WITHHELD)
    parser.add_argument("--binarize", action="store_true", default=None, help="Clip feature values to 0/1")
    parser.add_argument("--threads", type=int, default=DEFAULT_THREADS, help="Run-level parallelism only")


def build_parser() -> argparse.ArgumentParser:
    parser = DaclArgumentParser(prog="dacl", description="Dual adversarial co-learning for multi-domain text classification")
    parser.add_argument("--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR"), default=None)
    commands = parser.add_subparsers(dest="command", required=True, parser_class=DaclArgumentParser)

    gradcheck = commands.add_parser("gradcheck", help="Finite-difference gradient oracle")
    gradcheck.add_argument("--cases", type=int, default=DEFAULT_CASES)
    gradcheck.add_argument("--seed", type=int, default=DEFAULT_SEED)

    synth = commands.add_parser("synth", help="Write a seeded polarity-flip corpus")
    synth.add_argument("--out", required=True)
    synth.add_argument("--seed", type=int, default=DEFAULT_SEED)
    synth.add_argument("--domains", type=int, default=None)
    synth.add_argument("--vocab", type=int, default=None)
    synth.add_argument("--labeled", type=int, default=None)
    synth.add_argument("--unlabeled", type=int, default=None)
    synth.add_argument("--valid", type=int, default=None)
    synth.add_argument("--test", type=int, default=None)
    synth.add_argument("--noise", type=float, default=None)

    for name, help_text in (
        ("train", "Train DACL and report test accuracy"),
        ("eval", "Score a saved snapshot on the test pools"),
        ("ablate", "Full model, no-D and no-C2 arms with shared seeds"),
        ("uda", "Unsupervised adaptation to one unlabeled target domain"),
        ("sweep", "Sensitivity sweep over alpha or gamma"),
        ("baseline", "Shared-only MLP on pooled labels"),
    ):
        sub = commands.add_parser(name, help=help_text)
        _add_run_flags(sub)
        if name == "eval":
            sub.add_argument("--snapshot", required=True)
        if name == "sweep":
            sub.add_argument("--parameter", choices=[p.value for p in SweepParameter], default=SweepParameter.ALPHA.value)
            sub.add_argument("--values", type=float, nargs="+", default=list(SWEEP_VALUES))
            sub.add_argument("--fixed-other", type=float, default=0.1)

    replay = commands.add_parser("replay", help="Re-execute a run from its manifest.json")
    replay.add_argument("--manifest", required=True)
    replay.add_argument("--out", required=True)
    return parser


# ── Configuration ───────────────────────────────────────


def resolve_config(args: argparse.Namespace) -> TrainConfig:
    """Defaults < config file < command-line flags"""
    values: Dict[str, object] = {"seed": DEFAULT_SEED}
    if args.config:
        file_values = read_run_config(args.config)
        unknown = sorted(set(file_values) - set(TrainConfig.model_fields))
        if unknown:
            raise ConfigurationError(f"{args.config}: unknown keys {unknown}")
        values.update(file_values)

    overrides = {
        "seed": args.seed,
        "alpha": args.alpha,
        "gamma": args.gamma,
        "lr": args.lr,
        "batch_size": args.batch,
        "epochs": args.epochs,
        "ablation": args.ablation,
        "binarize": args.binarize,
    }
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return TrainConfig(**values)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration: {e}")


def manifest_from_args(args: argparse.Namespace) -> RunManifest:
    config = resolve_config(args)
    if args.uda_target is not None and args.folds > 1:
        raise ConfigurationError("--uda-target cannot be combined with --folds 5")
    if args.command == "uda" and args.uda_target is None:
        raise ConfigurationError("uda needs --uda-target")
    if args.threads < 1:
        raise ConfigurationError("--threads must be >= 1")

    sweep = None
    if args.command == "sweep":
        try:
            sweep = SweepSpec(parameter=args.parameter, values=args.values, fixed_other=args.fixed_other)
        except ValidationError as e:
            raise ConfigurationError(f"invalid sweep: {e}")

    out = args.out or str(Path(DEFAULT_OUTPUT_DIR) / args.command)
    return RunManifest(
        command=args.command,
        config=config,
        dataset_manifest=args.data,
        output_dir=out,
        seed=config.seed,
        folds=args.folds,
        uda_target=args.uda_target,
        uda_unlabeled=args.uda_unlabeled,
        sweep=sweep,
        snapshot=getattr(args, "snapshot", None),
        threads=args.threads,
    )


def load_run_dataset(manifest: RunManifest) -> MultiDomainDataset:
    """Load the manifest's corpus, or generate and persist the default synthetic one"""
    if manifest.dataset_manifest:
        return load_corpus(manifest.dataset_manifest)
    spec = SynthSpec(seed=manifest.seed)
    dataset = generate_synthetic(spec)
    data_dir = Path(manifest.output_dir) / "data"
    manifest.dataset_manifest = str(write_corpus(dataset, str(data_dir)))
    logger.info(f"No --data given; generated synthetic corpus at {data_dir}")
    return dataset


# ── Run commands ────────────────────────────────────────


def _write_reports(out: Path, reports: Dict[str, EvalReport]) -> None:
    reporting.write_report_csv(list(reports.values()), out / "report.csv")
    reporting.write_table(reports, out / "report.txt")
    for arm, report in reports.items():
        reporting.write_report_json(report, out / f"report_{arm}.json")
    print(reporting.format_table(reports))


def _save_fold_snapshots(out: Path, outcome: evaluation.RunOutcome, prefix: str = "snapshot") -> None:
    if len(outcome.results) == 1:
        save_snapshot(outcome.results[0].selected, out / f"{prefix}.bin")
        return
    for k, result in enumerate(outcome.results):
        save_snapshot(result.selected, out / f"{prefix}_fold{k}.bin")


def execute(manifest: RunManifest) -> int:
    """Run one command described by a RunManifest and write its outputs"""
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_run_dataset(manifest)
    (out / MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")

    config = manifest.config
    target = dataset.index_of(manifest.uda_target) if manifest.uda_target is not None else None
    logger.info(f"Running {manifest.command} (seed {config.seed}, fingerprint {config.fingerprint()}) into {out}")

    if manifest.command == "eval":
        if not manifest.snapshot:
            raise ConfigurationError("eval needs --snapshot")
        params = load_snapshot(manifest.snapshot)
        arm = evaluation.ARM_NAMES[config.ablation]
        if params.num_domains != dataset.num_domains or params.input_dim != dataset.vocab_size:
            raise ConfigurationError(
                f"snapshot has {params.num_domains} domains / input {params.input_dim}, "
                f"corpus has {dataset.num_domains} / {dataset.vocab_size}"
            )
        if target is not None:
            split = evaluation.uda_dataset(dataset, target, manifest.uda_unlabeled)
            report = evaluation.evaluate(params, split, uda_target=target, config=config, domains=[target], arm=arm)
        else:
            report = evaluation.evaluate(params, evaluation.holdout_dataset(dataset, config.seed), config=config, arm=arm)
        _write_reports(out, {report.arm: report})

    elif manifest.command == "train" or manifest.command == "uda":
        if target is not None:
            outcome = evaluation.run_uda(dataset, target, config, manifest.uda_unlabeled, metrics_dir=out)
        else:
            outcome = evaluation.run_mdtc(dataset, config, manifest.folds, manifest.threads, metrics_dir=out)
        _save_fold_snapshots(out, outcome)
        _write_reports(out, {outcome.report.arm: outcome.report})

    elif manifest.command == "ablate":
        outcomes = evaluation.run_ablation(dataset, config, manifest.folds, manifest.threads, metrics_dir=out)
        for arm, outcome in outcomes.items():
            _save_fold_snapshots(out, outcome, prefix=f"snapshot_{arm}")
        _write_reports(out, {arm: outcome.report for arm, outcome in outcomes.items()})

    elif manifest.command == "sweep":
        reports = evaluation.run_sweep(dataset, manifest.sweep, config, manifest.folds, manifest.threads, metrics_dir=out)
        reporting.write_sweep_csv(manifest.sweep, reports, out / "sweep.csv")
        _write_reports(out, {f"{manifest.sweep.parameter.value}={v:g}": r for v, r in zip(manifest.sweep.values, reports)})

    elif manifest.command == "baseline":
        if target is not None:
            report = evaluation.run_uda_baseline(dataset, target, config, manifest.uda_unlabeled)
        else:
            report = evaluation.run_baseline(dataset, config, manifest.folds, manifest.threads).report
        _write_reports(out, {report.arm: report})

    else:
        raise ConfigurationError(f"unknown run command {manifest.command!r}")

    logger.info(f"Finished {manifest.command}; outputs in {out}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    report = run_gradcheck(cases=args.cases, seed=args.seed)
    print(report.table())
    if not report.passed:
        names = ", ".join(f"{e.name} ({e.worst_error:.2e} at {e.worst_shapes})" for e in report.failures)
        raise AcceptanceFailure(f"gradient check failed: {names}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    overrides = {
        "seed": args.seed,
        "domains": args.domains,
        "vocab_size": args.vocab,
        "labeled_per_domain": args.labeled,
        "unlabeled_per_domain": args.unlabeled,
        "valid_per_domain": args.valid,
        "test_per_domain": args.test,
        "noise_rate": args.noise,
    }
    try:
        spec = SynthSpec(**{key: value for key, value in overrides.items() if value is not None})
    except ValidationError as e:
        raise ConfigurationError(f"invalid synthetic spec: {e}")
    manifest = write_corpus(generate_synthetic(spec), args.out)
    print(manifest)
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    path = Path(args.manifest)
    if path.is_dir():
        path = path / MANIFEST_FILE
    try:
        manifest = RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise ConfigurationError(f"{path}: invalid run manifest: {e}")
    if manifest.command not in RUN_COMMANDS:
        raise ConfigurationError(f"{path}: cannot replay command {manifest.command!r}")
    manifest = manifest.model_copy(update={"output_dir": args.out})
    logger.info(f"Replaying {manifest.command} from {path}")
    return execute(manifest)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        logging.getLogger().setLevel(args.log_level)

    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "replay":
            return cmd_replay(args)
        return execute(manifest_from_args(args))
    except (DaclError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
