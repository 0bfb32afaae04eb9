"""Command-line entry point: ``softfx <subcommand> ...``.

Exit status is 0 on success, 1 when some items failed (or every VLM
judgement failed), 2 when the batch was aborted.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .atmosphere import PRESETS
from .batch import BatchAbort, BatchConfig, SupervisionConfig, cmd_eval_contrast, cmd_eval_vlm, cmd_occlude, cmd_supervise, cmd_synth
from .manifest import ManifestError, load_manifest, sample
from .metrics import DEFAULT_K, DEFAULT_THRESHOLD
from .vlm import ConfigurationError

log = logging.getLogger("softfx")


@contextmanager
def _output(path):
    if path is None or str(path) == "-":
        yield sys.stdout
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            yield f


def _write_jsonl(records, path):
    with _output(path) as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def _abs(p):
    return str(Path(p).resolve())


def _load_json(path) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def run_synth(args) -> int:
    base = Path(args.config).parent if args.config else Path(".")
    doc = _load_json(args.config)
    overrides = {
        "input_dir": args.input and _abs(args.input),
        "depth_dir": args.depth and _abs(args.depth),
        "output_dir": args.out and _abs(args.out),
        "preset": args.preset,
        "count_per_image": args.count,
        "global_seed": args.seed,
        "workers": args.workers,
        "density": args.density,
        "depth_suffix": args.depth_suffix,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    cfg = BatchConfig.from_dict(doc, base)
    start = time.perf_counter()
    report = cmd_synth(cfg)
    log.info("synth: %d/%d items in %.1fs", report["succeeded"], report["items"], time.perf_counter() - start)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 1 if report["failed"] else 0


def _supervision_config(args) -> SupervisionConfig:
    doc = _load_json(args.config)
    doc = doc.get("supervision", doc)
    if args.direction:
        doc["direction"] = args.direction
    return SupervisionConfig.from_dict(doc)


def run_supervise(args) -> int:
    report = cmd_supervise(Path(args.pairs_dir), Path(args.out), args.seed, _supervision_config(args), args.workers)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 1 if report["failed"] else 0


def run_occlude(args) -> int:
    report = cmd_occlude(Path(args.input_dir), Path(args.out), args.seed, args.workers)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 1 if report["failed"] else 0


def run_eval_contrast(args) -> int:
    records = cmd_eval_contrast(Path(args.pairs_dir), args.k, args.threshold,
                                Path(args.dump_maps) if args.dump_maps else None)
    _write_jsonl(records, args.out)
    return 0


def run_eval_vlm(args) -> int:
    records = cmd_eval_vlm(Path(args.pairs_dir), args.artifact, max_in_flight=args.max_in_flight,
                           max_retries=args.retries)
    _write_jsonl(records, args.out)
    agg = records[-1]["aggregate"]
    return 1 if agg["pairs"] and not agg["succeeded"] else 0


def run_sample(args) -> int:
    manifest = load_manifest(args.manifest)
    _write_jsonl((d.to_dict() for d in sample(manifest, args.seed, args.n)), args.out)
    return 0


def run_presets(args) -> int:
    if args.json:
        print(json.dumps({k: p.to_dict() for k, p in PRESETS.items()}, indent=2))
        return 0
    for name, p in PRESETS.items():
        print(f"[{name}]")
        for key, value in p.to_dict().items():
            if key != "kind":
                print(f"  {key:<20} {value}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softfx", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"softfx {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render haze/fog/smoke over a directory of images")
    p.add_argument("--config", help="batch config JSON; flags override its fields")
    p.add_argument("--input", help="directory of clean sRGB PNGs")
    p.add_argument("--depth", help="directory of depth maps matched by stem")
    p.add_argument("--out")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--count", type=int, help="renders per input image")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--density", choices=["homogeneous", "procedural"])
    p.add_argument("--depth-suffix")
    p.set_defaults(func=run_synth)

    p = sub.add_parser("supervise", help="compose mask/strength targets from input/ and gt/ pairs")
    p.add_argument("pairs_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON with mask spec, direction and p_full_strength")
    p.add_argument("--direction", choices=["remove", "add"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=run_supervise)

    p = sub.add_parser("occlude", help="overlay random semi-transparent occlusions on clean images")
    p.add_argument("input_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=run_occlude)

    p = sub.add_parser("eval-contrast", help="residual contrast gain over input/ and output/ pairs")
    p.add_argument("pairs_dir")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--out", help="JSON Lines report (default stdout)")
    p.add_argument("--dump-maps", help="directory for contrast-map PNGs")
    p.set_defaults(func=run_eval_contrast)

    p = sub.add_parser("eval-vlm", help="VLM judge scores over input/ and output/ pairs")
    p.add_argument("pairs_dir")
    p.add_argument("--artifact", required=True, help="effect name used in the prompt, e.g. haze")
    p.add_argument("--out", help="JSON Lines report (default stdout)")
    p.add_argument("--max-in-flight", type=int, default=4)
    p.add_argument("--retries", type=int, default=3)
    p.set_defaults(func=run_eval_vlm)

    p = sub.add_parser("sample", help="draw records from a multi-task manifest")
    p.add_argument("manifest")
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSON Lines output (default stdout)")
    p.set_defaults(func=run_sample)

    p = sub.add_parser("presets", help="print the built-in preset tables")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=run_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except BatchAbort as e:
        log.error("aborted: %s", e)
        return 2
    except (ConfigurationError, ManifestError, ValueError, OSError) as e:
        log.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
