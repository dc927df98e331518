"""Command-line front end.

Subcommands: synth (render a tap video with ground truth), recognize (run
the pipeline on a frame directory), eval (score a batch against ground
truth), pek (randomized-keyboard layouts).  Exit codes: 0 success, 2 usage
error, 3 I/O failure, 4 pipeline failure (the failing stage is printed).

Flag values resolve in precedence order: explicit flag, then --config JSON
file, then the SHOULDERSCOPE_SEED environment variable (seed only), then
the built-in default.  --echo-config prints the effective settings as one
sorted JSON object before the command runs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.stats import chi2

from .errors import (
    ContactOutsideKeys,
    MalformedHeader,
    PipelineAbort,
    ShoulderScopeError,
    TruncatedData,
    UnknownPreset,
)
from .imgproc import GrayImage, load_frame_dir, save_frame_dir, save_pgm_file
from .keyrec import RecognizeConfig, recognize_sequence
from .layout import KeyboardLayout, builtin_layout, layout_from_json, layout_to_json
from .pek import (
    chi_squared_statistic,
    shuffle_layout,
    shuffle_position_counts,
    simulate_session,
)
from .synthcam import (
    GroundTruth,
    TapScript,
    reference_raster,
    scene_preset,
    synth_tap_video,
)

_EPILOG = "exit codes: 0 ok, 2 usage error, 3 I/O failure, 4 pipeline failure"


def _build_parser(suppress: bool = False) -> argparse.ArgumentParser:
    """The CLI grammar; with suppress=True absent flags stay absent, which
    is how explicit flags are told apart from defaults for --config."""

    def dflt(v):
        return argparse.SUPPRESS if suppress else v

    parser = argparse.ArgumentParser(
        prog="shoulderscope",
        description="Touched-key recognition pipeline, synthetic oracle and countermeasures.",
        epilog=_EPILOG,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument(
            "--seed",
            type=int,
            default=dflt(None),
            help="RNG seed (default: $SHOULDERSCOPE_SEED, else 0)",
        )
        p.add_argument(
            "--config",
            default=dflt(None),
            help="JSON file of flag values; explicitly given flags win",
        )
        p.add_argument(
            "--echo-config",
            action="store_true",
            default=dflt(False),
            help="print the effective settings as JSON before running",
        )
        p.add_argument(
            "--layout",
            default=dflt("ipad-digits"),
            help="layout JSON file, or preset like ipad-digits / iphone5-digits / ipad-qwerty",
        )

    p = sub.add_parser("synth", help="render a synthetic tap video plus ground truth", epilog=_EPILOG)
    p.add_argument("--out", required=True, help="output directory (frames + ground_truth.json)")
    p.add_argument("--pin", default=dflt("2580"), help="key labels to tap, one per character")
    p.add_argument(
        "--scene",
        default=dflt("canonical"),
        help="scene preset: canonical, front, left-front, right-front, or d<mm> like d2000",
    )
    p.add_argument("--noise", type=float, default=dflt(None), help="override scene noise sigma")
    p.add_argument("--approach", type=int, default=dflt(4), help="approach frames per tap")
    p.add_argument("--dwell", type=int, default=dflt(2), help="dwell frames per tap")
    p.add_argument("--retreat", type=int, default=dflt(4), help="retreat frames per tap")
    common(p)

    p = sub.add_parser("recognize", help="recover the tapped code from a frame directory", epilog=_EPILOG)
    p.add_argument("--frames", required=True, help="directory of PGM frames")
    p.add_argument("--out", default=dflt(None), help="write result JSON here instead of stdout")
    p.add_argument(
        "--annotate",
        default=dflt(None),
        help="write a reference-raster PGM with the key grid and mapped points burned in",
    )
    p.add_argument(
        "--expected-taps",
        type=int,
        default=dflt(None),
        help="keep only the N best-supported touching frames",
    )
    p.add_argument("--upscale", type=int, default=dflt(4), help="pre-pipeline upscale factor")
    p.add_argument(
        "--majority",
        type=float,
        default=dflt(2.0 / 3.0),
        help="fraction of tracks that must agree on a touching frame",
    )
    p.add_argument(
        "--zero-eps",
        type=float,
        default=dflt(1.0),
        help="velocity magnitude treated as rest (px/frame, in upscaled coords)",
    )
    common(p)

    p = sub.add_parser("eval", help="score recognition against ground truth for a batch", epilog=_EPILOG)
    p.add_argument(
        "--manifest",
        required=True,
        help='JSON list of {"frames": dir, "truth": ground_truth.json} entries',
    )
    p.add_argument("--csv", default=dflt(None), help="write per-video rows to this CSV file")
    p.add_argument(
        "--frame-tol",
        type=int,
        default=dflt(1),
        help="touching-frame match tolerance in frames",
    )
    p.add_argument(
        "--expected-taps",
        default=dflt("auto"),
        help='"auto" (use the ground-truth tap count), "none", or an integer',
    )
    common(p)

    p = sub.add_parser("pek", help="emit randomized keyboard layouts", epilog=_EPILOG)
    p.add_argument(
        "--mode",
        choices=("shuffled", "brownian"),
        default=dflt("shuffled"),
        help="randomization scheme",
    )
    p.add_argument("--steps", type=int, default=dflt(1), help="brownian steps to emit")
    p.add_argument("--sigma", type=float, default=dflt(2.0), help="brownian step std dev in px")
    p.add_argument("--out", default=dflt(None), help="write layout JSON here instead of stdout")
    p.add_argument(
        "--check-uniformity",
        type=int,
        default=dflt(None),
        metavar="N",
        help="run N shuffles and print the position-label chi-squared statistic",
    )
    common(p)

    return parser


def _effective_args(argv: list[str]) -> argparse.Namespace:
    parser = _build_parser()
    args = parser.parse_args(argv)
    given = vars(_build_parser(suppress=True).parse_args(argv))

    if args.config:
        doc = json.loads(Path(args.config).read_text())
        if not isinstance(doc, dict):
            parser.error("config file must hold a JSON object")
        for key, value in doc.items():
            dest = key.replace("-", "_")
            if dest in ("command", "config") or dest not in vars(args):
                parser.error(f"unknown config key {key!r} for {args.command}")
            if dest not in given:
                setattr(args, dest, value)

    if getattr(args, "seed", None) is None:
        env = os.environ.get("SHOULDERSCOPE_SEED")
        if env is not None:
            try:
                args.seed = int(env)
            except ValueError:
                parser.error(f"SHOULDERSCOPE_SEED={env!r} is not an integer")
        else:
            args.seed = 0

    if args.echo_config:
        doc = {k: v for k, v in vars(args).items() if k != "echo_config"}
        print(json.dumps(doc, sort_keys=True))
    return args


def _load_layout(spec: str) -> KeyboardLayout:
    path = Path(spec)
    if spec.endswith(".json") or path.exists():
        return layout_from_json(path.read_text())
    device, _, style_word = spec.rpartition("-")
    if not device:
        device, style_word = spec, "digits"
    style = {"digits": "digit-pad", "qwerty": "qwerty-row"}.get(style_word)
    if style is None:
        raise UnknownPreset(
            f"{spec!r} is neither a layout JSON file nor a <device>-digits/-qwerty preset"
        )
    return builtin_layout(device, style)


def cmd_synth(args) -> int:
    layout = _load_layout(args.layout)
    scene = scene_preset(args.scene, layout)
    if args.noise is not None:
        scene = replace(scene, noise_sigma=float(args.noise))
    script = TapScript.from_code(args.pin, args.approach, args.dwell, args.retreat)
    frames, truth = synth_tap_video(layout, scene, script, seed=args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_frame_dir(frames, out)
    (out / "ground_truth.json").write_text(truth.to_json())
    print(f"{len(frames)} frames")
    return 0


def _annotate_reference(layout: KeyboardLayout, mapped_points) -> GrayImage:
    """Reference raster with key borders and mapped touch points burned in."""
    plane = reference_raster(layout).plane()
    h, w = plane.shape
    for k in layout.keys:
        x0 = int(round(k.x))
        y0 = int(round(k.y))
        x1 = min(int(round(k.x + k.w)), w) - 1
        y1 = min(int(round(k.y + k.h)), h) - 1
        plane[y0, x0 : x1 + 1] = 0
        plane[y1, x0 : x1 + 1] = 0
        plane[y0 : y1 + 1, x0] = 0
        plane[y0 : y1 + 1, x1] = 0
    for pts in mapped_points:
        for x, y in np.asarray(pts, dtype=float).reshape(-1, 2):
            xi, yi = int(round(x)), int(round(y))
            for dx, dy in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)):
                if 0 <= yi + dy < h and 0 <= xi + dx < w:
                    plane[yi + dy, xi + dx] = 255
    return GrayImage.from_array(plane)


def cmd_recognize(args) -> int:
    layout = _load_layout(args.layout)
    try:
        frames = load_frame_dir(args.frames)
    except (MalformedHeader, TruncatedData) as exc:
        raise PipelineAbort("load", str(exc)) from exc

    cfg = RecognizeConfig(
        upscale_factor=args.upscale,
        majority=args.majority,
        zero_eps=args.zero_eps,
        expected_taps=args.expected_taps,
        seed=args.seed,
    )
    result = recognize_sequence(frames, layout, cfg)

    text = result.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    if args.annotate:
        save_pgm_file(_annotate_reference(layout, result.mapped_points), args.annotate)
    return 0


def _match_touch_frames(reported, truth_frames, tol: int) -> int:
    """Greedy one-to-one matching of reported to true frames within tol."""
    free = list(reported)
    hits = 0
    for tf in truth_frames:
        best = None
        for r in free:
            if abs(r - tf) <= tol and (best is None or abs(r - tf) < abs(best - tf)):
                best = r
        if best is not None:
            free.remove(best)
            hits += 1
    return hits


def cmd_eval(args) -> int:
    entries = json.loads(Path(args.manifest).read_text())
    if not isinstance(entries, list) or not entries:
        raise ShoulderScopeError("manifest must be a non-empty JSON list")
    layout = _load_layout(args.layout)

    rows = []
    n_first = n_second = tp = fp = truth_total = frame_total = 0
    for entry in entries:
        fdir = Path(entry["frames"])
        tpath = Path(entry["truth"])
        if not fdir.is_dir():
            raise FileNotFoundError(f"frames directory {fdir} does not exist")
        if not tpath.is_file():
            raise FileNotFoundError(f"ground truth {tpath} does not exist")
        truth = GroundTruth.from_json(tpath.read_text())
        frames = load_frame_dir(fdir)

        if args.expected_taps == "auto":
            expected = len(truth.taps)
        elif args.expected_taps in ("none", None):
            expected = None
        else:
            expected = int(args.expected_taps)
        cfg = RecognizeConfig(seed=args.seed, expected_taps=expected)
        try:
            result = recognize_sequence(frames, layout, cfg)
            code, alternates = result.code, result.alternates
            reported = result.touching_frames
        except PipelineAbort:
            code, alternates, reported = (), (), ()

        want = [t.label for t in truth.taps]
        first = list(code) == want
        second = len(code) == len(want) and all(
            w == c or (a is not None and w == a)
            for w, c, a in zip(want, code, alternates)
        )
        hits = _match_touch_frames(reported, [t.frame for t in truth.taps], args.frame_tol)
        n_first += first
        n_second += second
        tp += hits
        fp += len(reported) - hits
        truth_total += len(truth.taps)
        frame_total += truth.frame_count
        rows.append(
            {
                "video": str(fdir),
                "first_try": int(first),
                "second_try": int(second),
                "tp": hits,
                "taps": len(truth.taps),
                "fp": len(reported) - hits,
                "frames": truth.frame_count,
            }
        )

    n = len(rows)
    print(f"videos {n}")
    print(f"first_try {n_first}/{n} {100.0 * n_first / n:.1f}%")
    print(f"second_try {n_second}/{n} {100.0 * n_second / n:.1f}%")
    print(f"touch_tp {tp}/{truth_total} {100.0 * tp / max(truth_total, 1):.1f}%")
    print(f"touch_fp {fp}/{frame_total} {100.0 * fp / max(frame_total, 1):.2f}%")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return 0


def cmd_pek(args) -> int:
    layout = _load_layout(args.layout)
    if args.check_uniformity:
        counts = shuffle_position_counts(layout, args.seed, args.check_uniformity)
        stat, dof = chi_squared_statistic(counts)
        threshold = float(chi2.ppf(0.999, dof))
        verdict = "uniform" if stat < threshold else "non-uniform"
        print(f"chi2 {stat:.2f} dof {dof} threshold(p=0.001) {threshold:.2f} {verdict}")
        return 0

    if args.mode == "shuffled":
        text = layout_to_json(shuffle_layout(layout, args.seed))
    elif args.mode == "brownian":
        seq = simulate_session(layout, "brownian", args.seed, args.steps, args.sigma)
        text = json.dumps([json.loads(layout_to_json(l)) for l in seq], indent=2)
    else:
        raise ShoulderScopeError(f"unknown mode {args.mode!r}")

    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


_DISPATCH = {
    "synth": cmd_synth,
    "recognize": cmd_recognize,
    "eval": cmd_eval,
    "pek": cmd_pek,
}


def console_main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        args = _effective_args(argv)
        return _DISPATCH[args.command](args)
    except PipelineAbort as exc:
        print(f"pipeline failed at stage {exc.stage}: {exc}", file=sys.stderr)
        return 4
    except (MalformedHeader, TruncatedData, OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    except (ShoulderScopeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(console_main())
