"""Command-line front end.

Exit codes:
    0  success
    2  malformed input (manifest, CSV, arguments, id mismatch)
    3  I/O failure
    4  output exists and --force was not given
    5  no eligible target/patch pairs for the requested synthesis
    6  blend mask touches the target border after the offset
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from . import __version__
from .image import ClassId, ImageFormatError, load_binary_mask, load_image, save_image
from .manifest import (BANK_INDEX, ManifestError, load_bank, load_samples, read_manifest, relative_to,
                       save_bank, save_sample, write_manifest)
from .metrics import DEFAULT_TOLERANCE, evaluate_dataset, read_scores_csv, write_scores_csv, write_summary_csv
from .poisson import BorderError, PoissonError, naive_paste, seamless_clone
from .stats import paired_t_test
from .synthesizer import (EligibilityRule, SynthesisConfig, balance_dataset, class_counts, default_rule,
                          eligible_targets, extract_patches, resolve_targets)

log = logging.getLogger("adnexsynth")

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_IO = 3
EXIT_EXISTS = 4
EXIT_NO_TARGETS = 5
EXIT_BORDER = 6


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _class_list(text: str) -> list[ClassId]:
    return [ClassId.parse(t) for t in text.split(",") if t.strip()]


def _parse_targets(text: str) -> dict[ClassId, str]:
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        name, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"target {item!r} is not class=count or class=+N")
        try:
            cls = ClassId.parse(name)
            int(value.strip().lstrip("+"))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
        out[cls] = value.strip()
    return out


def _parse_offset(text: str) -> tuple[int, int]:
    try:
        dx, dy = (int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"offset must be dx,dy, got {text!r}") from exc
    return dx, dy


def _require_file(path: Path, what: str) -> None:
    if not path.is_file():
        raise CliError(f"{what} not found: {path}", EXIT_IO)


def _prepare_dir(out: Path, force: bool, owned: tuple[str, ...]) -> None:
    """Create ``out``; refuse a non-empty one unless forced, then clear only our own entries."""
    if out.exists() and not out.is_dir():
        raise CliError(f"{out} exists and is not a directory", EXIT_IO)
    if out.is_dir() and any(out.iterdir()):
        if not force:
            raise CliError(f"{out} is not empty; pass --force to overwrite", EXIT_EXISTS)
        for name in owned:
            p = out / name
            if p.is_dir():
                shutil.rmtree(p)
            elif p.exists():
                p.unlink()
    out.mkdir(parents=True, exist_ok=True)


def _cleanup(paths) -> None:
    for p in reversed(list(paths)):
        p = Path(p)
        if p.is_file():
            p.unlink()
        elif p.is_dir() and not any(p.iterdir()):
            p.rmdir()


def _area_histogram(areas) -> dict[str, int]:
    hist: dict[str, int] = {}
    for a in sorted(areas):
        hi = 1 << max(0, int(a - 1).bit_length())
        lo = hi // 2 + 1
        key = f"{lo}-{hi}"
        hist[key] = hist.get(key, 0) + 1
    return hist


# --- commands --------------------------------------------------------------

def cmd_extract(args) -> int:
    dataset = Path(args.dataset)
    _require_file(dataset, "dataset manifest")
    out = Path(args.out)
    if args.margin < 1:
        raise CliError("--margin must be at least 1", EXIT_BAD_INPUT)
    samples = load_samples(dataset)
    skipped: list = []
    patches = extract_patches(samples, args.cls, args.margin, args.host_class, skipped)
    if not patches:
        log.warning("no %s components found; writing an empty bank", args.cls.label)
    _prepare_dir(out, args.force, ("patches", BANK_INDEX))
    written: list[Path] = []
    try:
        written = save_bank(patches, out)
    except OSError as exc:
        _cleanup(written)
        raise CliError(f"writing bank failed: {exc}", EXIT_IO) from exc
    summary = {"class": args.cls.label, "patches": len(patches), "skipped": skipped,
               "area_histogram": _area_histogram(p.area for p in patches)}
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _real_record(rec: dict, manifest_dir: Path, out: Path) -> dict:
    rec = dict(rec)
    rec.setdefault("provenance", "real")

    def rebase(p: str) -> str:
        path = Path(p)
        return relative_to(path if path.is_absolute() else manifest_dir / path, out)

    if "image" in rec:
        rec["image"] = rebase(rec["image"])
    if isinstance(rec["masks"], str):
        rec["masks"] = rebase(rec["masks"])
    else:
        rec["masks"] = {k: rebase(v) for k, v in rec["masks"].items()}
    return rec


def cmd_generate(args) -> int:
    dataset = Path(args.dataset)
    bank_dir = Path(args.bank)
    out = Path(args.out)
    _require_file(dataset, "dataset manifest")
    _require_file(bank_dir / BANK_INDEX, "bank index")
    records = read_manifest(dataset)
    samples = load_samples(dataset)
    bank = load_bank(bank_dir)
    classes = {p.cls for p in bank}
    if len(classes) > 1:
        raise CliError(f"bank mixes classes {sorted(c.label for c in classes)}", EXIT_BAD_INPUT)
    patch_class = classes.pop() if classes else args.patch_class
    host_class = args.host_class
    rule = default_rule(patch_class, host_class)
    if args.require is not None or args.forbid is not None:
        rule = EligibilityRule(frozenset(args.require if args.require is not None else rule.required_classes),
                               frozenset(args.forbid if args.forbid is not None else rule.forbidden_classes))
    counts = class_counts(s.masks for s in samples)
    try:
        targets = resolve_targets(args.targets, counts)
        config = SynthesisConfig(args.offset_fraction, targets, args.seed, args.min_overlap, args.max_retries,
                                 patch_class, host_class, args.naive_paste)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_BAD_INPUT) from exc

    needs_synthesis = any(targets[c] > counts[c] for c in ClassId)
    if needs_synthesis and (not bank or not eligible_targets(samples, rule)):
        raise CliError("no eligible target images or empty patch bank", EXIT_NO_TARGETS)

    _prepare_dir(out, args.force, ("images", "masks", "manifest.json", "balance_report.json"))
    synth, report = balance_dataset(samples, bank, config, rule, jobs=args.jobs)
    written: list[Path] = []
    try:
        merged = [_real_record(r, dataset.parent, out) for r in records]
        for rec in synth:
            img_p, mask_p = save_sample(rec.sample, out / "images", out / "masks")
            written += [img_p, mask_p]
            merged.append({
                "id": rec.id,
                "image": relative_to(img_p, out),
                "masks": relative_to(mask_p, out),
                "provenance": "synthetic",
                "source_target_id": rec.target_id,
                "source_patch_id": rec.patch_id,
                "roi": rec.roi.as_list(),
                "seed": args.seed,
                "rng_key": list(rec.plan.seed_state[1:]),
                "dest_offset": list(rec.plan.dest_offset),
            })
        written.append(out / "manifest.json")
        write_manifest(merged, out / "manifest.json")
        written.append(out / "balance_report.json")
        (out / "balance_report.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
    except OSError as exc:
        _cleanup(written + [out / "images", out / "masks"])
        raise CliError(f"writing synthetic dataset failed: {exc}", EXIT_IO) from exc
    if report.unreachable:
        log.warning("targets not reached for: %s", ", ".join(c.label for c in report.unreachable))
    print(json.dumps(report.to_json(), indent=2))
    return EXIT_OK


def cmd_blend(args) -> int:
    for p, what in ((args.source, "source"), (args.target, "target"), (args.mask, "mask")):
        _require_file(Path(p), f"{what} image")
    out = Path(args.out)
    if out.exists() and not args.force:
        raise CliError(f"{out} exists; pass --force to overwrite", EXIT_EXISTS)
    source = load_image(args.source)
    target = load_image(args.target)
    mask = load_binary_mask(args.mask)
    if mask.shape != source.shape:
        raise CliError(f"mask {mask.shape} and source {source.shape} differ in size", EXIT_BAD_INPUT)
    try:
        if args.naive_paste:
            result = naive_paste(target, source, mask, args.offset)
        else:
            result = seamless_clone(target, source, mask, args.offset, args.tolerance)
    except BorderError as exc:
        raise CliError(str(exc), EXIT_BORDER) from exc
    except PoissonError as exc:
        raise CliError(str(exc), EXIT_BAD_INPUT) from exc
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(result, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    gt, pred = Path(args.gt), Path(args.pred)
    _require_file(gt, "ground-truth manifest")
    _require_file(pred, "prediction manifest")
    if args.tolerance < 0:
        raise CliError("--tolerance must be >= 0", EXIT_BAD_INPUT)
    try:
        report = evaluate_dataset(gt, pred, args.tolerance)
    except KeyError as exc:
        raise CliError(str(exc.args[0]), EXIT_BAD_INPUT) from exc
    out = Path(args.out)
    _prepare_dir(out, args.force, ("scores.csv", "summary.csv"))
    write_scores_csv(report, out / "scores.csv")
    write_summary_csv(report, out / "summary.csv")
    return EXIT_OK


def compare_scores(rows_a, rows_b, metrics=("dsc", "sdsc")) -> list[dict]:
    """Paired t-tests per (metric, class) on rows from two score CSVs."""
    key_a = {(r.image_id, r.cls): r.score for r in rows_a}
    key_b = {(r.image_id, r.cls): r.score for r in rows_b}
    if set(key_a) != set(key_b):
        raise KeyError("score files cover different (image, class) pairs")
    results = []
    for metric in metrics:
        for cls in ClassId:
            keys = [k for k in key_a if k[1] is cls]
            pairs = [(key_a[k].value(metric), key_b[k].value(metric)) for k in keys]
            pairs = [(a, b) for a, b in pairs if a is not None and b is not None]
            if len(pairs) < 2:
                continue
            a, b = zip(*pairs)
            results.append(paired_t_test(a, b).to_json(metric, cls.label))
    return results


def cmd_stats(args) -> int:
    for p in (args.a, args.b):
        _require_file(Path(p), "score CSV")
    try:
        rows_a, rows_b = read_scores_csv(args.a), read_scores_csv(args.b)
        results = compare_scores(rows_a, rows_b, args.metrics)
    except (KeyError, ValueError) as exc:
        raise CliError(str(exc.args[0]), EXIT_BAD_INPUT) from exc
    text = json.dumps(results, indent=2) + "\n"
    if args.out:
        out = Path(args.out)
        if out.exists() and not args.force:
            raise CliError(f"{out} exists; pass --force to overwrite", EXIT_EXISTS)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(0), help="64-bit RNG seed (default 0)")
    parser.add_argument("--jobs", type=int, default=d(1), help="parallel blending workers")
    parser.add_argument("--force", action="store_true", default=d(False), help="overwrite existing outputs")
    parser.add_argument("--verbose", "-v", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adnexsynth", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="build a patch bank from annotated images")
    p.add_argument("--dataset", required=True)
    p.add_argument("--class", dest="cls", type=ClassId.parse, default=ClassId.PAPILLATION)
    p.add_argument("--host-class", type=ClassId.parse, default=ClassId.SOLID_AREA)
    p.add_argument("--margin", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("generate", parents=[common], help="synthesize images until class targets are met")
    p.add_argument("--dataset", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--targets", type=_parse_targets, required=True, help="class=count or class=+N, comma-separated")
    p.add_argument("--out", required=True)
    p.add_argument("--naive-paste", action="store_true", help="copy patches without blending")
    p.add_argument("--offset-fraction", type=float, default=1.0 / 3.0)
    p.add_argument("--min-overlap", type=float, default=0.3)
    p.add_argument("--max-retries", type=int, default=20)
    p.add_argument("--patch-class", type=ClassId.parse, default=ClassId.PAPILLATION,
                   help="class of an empty bank (otherwise taken from the bank)")
    p.add_argument("--host-class", type=ClassId.parse, default=ClassId.SOLID_AREA)
    p.add_argument("--require", type=_class_list, default=None)
    p.add_argument("--forbid", type=_class_list, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("blend", parents=[common], help="Poisson-blend one masked source into a target")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--mask", required=True, help="binary mask on the source frame")
    p.add_argument("--offset", type=_parse_offset, default=(0, 0), help="dx,dy of the source frame in the target")
    p.add_argument("--out", required=True)
    p.add_argument("--tolerance", type=float, default=1e-6, help="CG relative residual")
    p.add_argument("--naive-paste", action="store_true")
    p.set_defaults(func=cmd_blend)

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE, help="surface DSC tolerance in px")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", parents=[common], help="paired t-tests between two score CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--metrics", type=lambda s: tuple(m for m in s.split(",") if m), default=("dsc", "sdsc"))
    p.add_argument("--out", default=None, help="JSON file (default: standard output)")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    if not 0 <= args.seed < 2 ** 64:
        log.error("--seed must be an unsigned 64-bit integer")
        return EXIT_BAD_INPUT
    if args.jobs < 1:
        log.error("--jobs must be >= 1")
        return EXIT_BAD_INPUT
    try:
        return args.func(args)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except (ManifestError, ImageFormatError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_BAD_INPUT
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_BAD_INPUT
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
