"""``voxlink`` command line: simulate, harmonize, score, threshold, evaluate, report.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Settings come from
command-line flags, then an optional ``--config`` file (TOML or JSON), then
built-in defaults.  In the config file, top-level keys apply to every
subcommand and a table named after the subcommand overrides them; the
``measure_config`` and ``registration`` tables tune the measures and the
registration.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import IoFailure, VoxlinkError
from .experiments import scoring_mask
from .harmonize.pipeline import HarmonizationStages, harmonize_pipeline, intensity_reference
from .harmonize.registration import RegistrationConfig
from .io import Manifest, ManifestEntry, atomic_write_text, load_volume, save_volume
from .linkage.evaluation import LinkageReport, evaluate
from .linkage.thresholds import METHODS, estimate_threshold
from .records import pair_scores_from_csv, pair_scores_to_csv
from .report import write_report
from .simmetrics.measures import MeasureConfig, parse_measures
from .simmetrics.scoring import score_all_pairs
from .synth import build_simulated_dataset, template_phantom

logger = logging.getLogger("voxlink")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
SECTION_TABLES = ("measure_config", "registration")


class UsageError(Exception):
    """Bad flags or config values (exit code 2)."""


# ---------------------------------------------------------------------------
# argument types


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _non_negative_int(text: str) -> int:
    n = int(text)
    if n < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {n}")
    return n


def _measures(text) -> tuple:
    try:
        return tuple(m.value for m in parse_measures(text))
    except VoxlinkError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def resolve_workers(value: Optional[int]) -> int:
    """``--workers`` if given, else ``VOXLINK_WORKERS``, else 1."""
    if value is not None:
        return value
    raw = os.environ.get("VOXLINK_WORKERS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"VOXLINK_WORKERS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("VOXLINK_WORKERS must be >= 1")
    return n


# ---------------------------------------------------------------------------
# config file


def load_config(path: Path) -> dict:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(raw.decode("utf-8"))
        else:
            data = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a table of settings")
    return data


def config_defaults(config: dict, command: str, known: Sequence[str]) -> dict:
    """Flag defaults for ``command``: top-level keys, then the command's table."""
    commands = set(COMMANDS)
    values = {k: v for k, v in config.items() if not isinstance(v, dict)}
    section = config.get(command, {})
    if not isinstance(section, dict):
        raise UsageError(f"config entry {command!r} must be a table")
    values.update(section)
    out = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known:
            # top-level keys may belong to other subcommands
            if key in section:
                raise UsageError(f"unknown setting {key!r} for {command}")
            continue
        out[dest] = value
    for key, value in config.items():
        if isinstance(value, dict) and key not in commands and key not in SECTION_TABLES:
            raise UsageError(f"unknown config table {key!r}")
    return out


def check_config_values(args) -> None:
    """Re-apply flag validation to values that came from a config file."""
    checks = {"subjects": _positive_int, "dims": _positive_int, "workers": _positive_int,
              "variants": _non_negative_int}
    for dest, check in checks.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise UsageError(f"{dest} must be an integer")
        try:
            setattr(args, dest, check(str(value)))
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"{dest}: {exc}") from None
    if hasattr(args, "measures") and not isinstance(args.measures, tuple):
        try:
            args.measures = _measures(args.measures)
        except argparse.ArgumentTypeError as exc:
            raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create output directory {out}: {exc}") from exc
    return out


def _read_manifest(path) -> Manifest:
    manifest = Manifest.read(path)
    manifest.check_paths()
    return manifest


def cmd_simulate(args, config: dict) -> int:
    out = _out_dir(args)
    dims = (args.dims,) * 3
    workers = resolve_workers(args.workers)
    try:
        manifest = build_simulated_dataset(
            n_subjects=args.subjects,
            variants_per_subject=args.variants,
            out_dir=out,
            seed=args.seed,
            dims=dims,
            suffix=args.suffix,
            workers=workers,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"wrote {len(manifest)} volumes and {out / 'manifest.csv'}")
    return EXIT_OK


def _harmonize_job(job):
    src, dst, template_path, dims, stages, reg_values = job
    t0 = time.perf_counter()
    template = load_volume(template_path) if template_path else template_phantom(dims)
    provenance: dict = {"input": str(src), "output": str(dst)}
    v = load_volume(src)
    if template_path is None and v.dims != tuple(dims):
        template = template_phantom(v.dims, v.spacing)
    out = harmonize_pipeline(
        v, template, stages, RegistrationConfig.from_mapping(reg_values), intensity_reference(template), provenance
    )
    save_volume(out, dst)
    provenance["seconds"]["total"] = time.perf_counter() - t0
    return provenance


def cmd_harmonize(args, config: dict) -> int:
    out = _out_dir(args)
    manifest = _read_manifest(args.manifest)
    try:
        stages = HarmonizationStages(not args.skip_register, not args.skip_intensity, not args.skip_skullstrip)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    reg_values = dict(config.get("registration", {}))
    try:
        RegistrationConfig.from_mapping(reg_values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"registration settings: {exc}") from None
    template_path = str(args.template) if args.template else None
    if template_path and not Path(template_path).exists():
        raise IoFailure(f"template not found: {template_path}")
    prov_dir = out / "provenance"
    prov_dir.mkdir(exist_ok=True)

    jobs, entries = [], []
    for e in manifest:
        dst = out / e.path
        dst.parent.mkdir(parents=True, exist_ok=True)
        jobs.append((manifest.resolve(e), dst, template_path, (args.dims,) * 3, stages, reg_values))
        entries.append(ManifestEntry(e.path, e.subject_id, e.session_id, e.variant_tag))

    workers = resolve_workers(args.workers)
    results: List[Optional[dict]] = [None] * len(jobs)
    failures = 0
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_harmonize_job, j) for j in jobs]
            for k, f in enumerate(futures):
                try:
                    results[k] = f.result()
                except (VoxlinkError, OSError, ValueError) as exc:
                    failures += 1
                    logger.error("harmonize failed for %s: %s", jobs[k][0], exc)
    else:
        for k, j in enumerate(jobs):
            try:
                results[k] = _harmonize_job(j)
            except (VoxlinkError, OSError, ValueError) as exc:
                failures += 1
                logger.error("harmonize failed for %s: %s", j[0], exc)

    totals: Dict[str, float] = {}
    for e, prov in zip(entries, results):
        if prov is None:
            continue
        for stage, sec in prov["seconds"].items():
            totals[stage] = totals.get(stage, 0.0) + sec
        name = Path(e.path).name
        atomic_write_text(prov_dir / f"{name}.json", json.dumps(prov, indent=2, sort_keys=True) + "\n")
    done = [e for e, prov in zip(entries, results) if prov is not None]
    Manifest(done).write(out / "manifest.csv")
    summary = {
        "stages": {"register": stages.do_register, "intensity": stages.do_intensity,
                   "skullstrip": stages.do_skullstrip},
        "n_volumes": len(jobs),
        "n_failed": failures,
        "seconds_total": totals,
    }
    atomic_write_text(out / "harmonize.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"harmonized {len(done)}/{len(jobs)} volumes into {out}")
    return EXIT_FAILURE if failures else EXIT_OK


def _measure_config(config: dict) -> MeasureConfig:
    try:
        return MeasureConfig.from_mapping(dict(config.get("measure_config", {})))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"measure settings: {exc}") from None


def cmd_score(args, config: dict) -> int:
    out = _out_dir(args)
    cfg = _measure_config(config)
    manifest = _read_manifest(args.manifest)
    volumes = [load_volume(manifest.resolve(e)) for e in manifest]
    ids = [e.path for e in manifest]
    mask = scoring_mask(volumes) if len({v.dims for v in volumes}) == 1 else None
    scores = score_all_pairs(volumes, ids, args.measures, cfg, mask=mask, workers=resolve_workers(args.workers))
    path = out / "scores.csv"
    atomic_write_text(path, pair_scores_to_csv(scores))
    print(f"wrote {len(scores)} pair scores to {path}")
    return EXIT_OK


def _read_scores(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read scores {path}: {exc}") from exc
    return pair_scores_from_csv(text)


def cmd_threshold(args, config: dict) -> int:
    out = _out_dir(args)
    scores = _read_scores(args.scores)
    by_measure: Dict[str, List[float]] = {}
    for s in scores:
        by_measure.setdefault(s.measure, []).append(s.score)
    models = [estimate_threshold(v, args.method, measure=m).to_dict() for m, v in by_measure.items()]
    path = out / "thresholds.json"
    atomic_write_text(path, json.dumps(models, indent=2, sort_keys=True) + "\n")
    for m in models:
        print(f"{m['measure']}: tau = {m['tau']:.6g} ({m['method']})")
    return EXIT_OK


def _fixed_taus(args):
    if args.fixed_tau is not None and args.thresholds is not None:
        raise UsageError("give at most one of --fixed-tau and --thresholds")
    if args.fixed_tau is not None:
        return float(args.fixed_tau)
    if args.thresholds is not None:
        path = Path(args.thresholds)
        try:
            models = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoFailure(f"cannot read thresholds {path}: {exc}") from exc
        return {m["measure"]: float(m["tau"]) for m in models}
    return None


def cmd_evaluate(args, config: dict) -> int:
    out = _out_dir(args)
    manifest = Manifest.read(args.manifest)
    scores = _read_scores(args.scores)
    report = evaluate(
        manifest,
        scores,
        threshold_method=args.method,
        fixed_tau=_fixed_taus(args),
        dataset_id=args.dataset_id or Path(args.manifest).parent.name,
        workers=resolve_workers(args.workers),
    )
    path = out / "report.json"
    atomic_write_text(path, report.to_json())
    for name, r in report.measures.items():
        print(f"{name}: AUC {r.auc:.3f} sens {r.sensitivity:.3f} spec {r.specificity:.3f} tau {r.tau:.6g}")
    return EXIT_OK


def cmd_report(args, config: dict) -> int:
    out = _out_dir(args)
    path = Path(args.report)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read report {path}: {exc}") from exc
    report = LinkageReport.from_json(text)
    written = write_report(report, out)
    print(Path(written["table"]).read_text(encoding="utf-8"), end="")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "harmonize": cmd_harmonize,
    "score": cmd_score,
    "threshold": cmd_threshold,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxlink", description="Record linkage of 3D brain volumes.")
    parser.add_argument("--config", type=Path, help="TOML or JSON settings file")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    parser.set_defaults(_subparsers={})

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--out", required=True, help="output directory")
        parser.get_default("_subparsers")[name] = p
        return p

    p = add("simulate", "write a synthetic cohort and its manifest")
    p.add_argument("--subjects", type=_positive_int, default=100)
    p.add_argument("--variants", type=_non_negative_int, default=4, help="variants per subject")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=_positive_int, default=64, help="cubic grid size")
    p.add_argument("--suffix", choices=(".vol", ".nii", ".nii.gz"), default=".vol")
    p.add_argument("--workers", type=_positive_int)

    p = add("harmonize", "register and intensity-harmonize every manifest volume")
    p.add_argument("--manifest", required=True)
    p.add_argument("--template", help="template volume (default: the built-in phantom template)")
    p.add_argument("--dims", type=_positive_int, default=64, help="grid of the built-in template")
    p.add_argument("--skip-register", action="store_true")
    p.add_argument("--skip-intensity", action="store_true")
    p.add_argument("--skip-skullstrip", action="store_true")
    p.add_argument("--workers", type=_positive_int)

    p = add("score", "score every pair of manifest volumes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--measures", type=_measures, default=("SSIM", "NMI", "PCC", "GRADSIM"),
                   help="comma-separated measure names")
    p.add_argument("--workers", type=_positive_int)

    p = add("threshold", "estimate a threshold per measure from pooled scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--method", choices=sorted(METHODS), default="kde")

    p = add("evaluate", "threshold, classify and score against the manifest's subjects")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--method", choices=sorted(METHODS), default="kde")
    p.add_argument("--fixed-tau", type=float, help="use this threshold for every measure")
    p.add_argument("--thresholds", help="thresholds.json to use instead of estimating")
    p.add_argument("--dataset-id", default="")
    p.add_argument("--workers", type=_positive_int)

    p = add("report", "SVG density plots and a results table from report.json")
    p.add_argument("--report", required=True)
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING - 10 * min(verbosity, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging(args.verbose)
    try:
        config = load_config(args.config) if args.config else {}
        if config:
            subparser = args._subparsers[args.command]
            known = [a.dest for a in subparser._actions]
            subparser.set_defaults(**config_defaults(config, args.command, known))
            try:
                args = parser.parse_args(argv)
            except SystemExit as exc:
                return int(exc.code or 0)
            check_config_values(args)
        return COMMANDS[args.command](args, config)
    except UsageError as exc:
        print(f"voxlink {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (VoxlinkError, OSError) as exc:
        print(f"voxlink {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
