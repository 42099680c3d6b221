"""Command line: ``mfgviz render --manifest PATH --out PATH [options]``."""

import argparse
import sys

from ._version import __version__
from .render import DEFAULT_THRESHOLD, DEFAULT_TIMES, RenderSpec, render_animation, render_panels


def _times_list(text):
    parts = [part.strip() for part in text.split(",") if part.strip()]
    if not parts:
        raise argparse.ArgumentTypeError("expected a comma-separated list of times")
    try:
        return tuple(float(part) for part in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mfgviz",
        description="Render saved solver runs into panel figures or animations.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    render = sub.add_parser(
        "render", help="draw the panel composite (or a GIF with --animate)"
    )
    render.add_argument("--manifest", required=True, help="path to manifest.json")
    render.add_argument("--out", required=True, help="output image path")
    render.add_argument(
        "--threshold",
        type=float,
        default=DEFAULT_THRESHOLD,
        help="support cutoff as a fraction of each frame's maximum",
    )
    render.add_argument(
        "--times",
        type=_times_list,
        default=None,
        help="comma-separated instants to plot (snapped to saved slices)",
    )
    render.add_argument(
        "--animate",
        action="store_true",
        help="write a GIF with one frame per saved time slice",
    )
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        spec = RenderSpec(
            manifest_path=args.manifest,
            out_path=args.out,
            times=args.times if args.times is not None else DEFAULT_TIMES,
            threshold=args.threshold,
        )
        if args.animate:
            report = render_animation(spec)
        else:
            report = render_panels(spec)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {report.out_path} ({report.n_panels} frames)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
