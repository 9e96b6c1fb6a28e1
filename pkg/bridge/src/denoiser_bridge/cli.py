"""Command-line entry point: pick a denoiser kind, then serve stdio."""

import argparse
import pickle
import sys

from . import BridgeConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="denoiser-bridge",
        description="volume-denoiser sidecar speaking a framed protocol on stdio",
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    sub.add_parser("identity", help="echo volumes back unchanged")
    gauss = sub.add_parser("gaussian", help="gaussian smoothing")
    gauss.add_argument(
        "--width", type=float, default=1.0, help="smoothing sigma in voxels (0 = identity)"
    )
    model = sub.add_parser("model", help="pickled volume -> volume callable")
    model.add_argument("--path", required=True, help="pickle file holding the callable")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = BridgeConfig(
            kind=args.kind,
            width=getattr(args, "width", 1.0),
            model_path=getattr(args, "path", ""),
        )
        return serve(config)
    except (ValueError, OSError, pickle.UnpicklingError) as e:
        print(f"denoiser-bridge: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
