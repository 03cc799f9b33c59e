"""Command line entry point: skelfield-server."""

import argparse
import logging
import sys

from .app import ServerConfig, ServerError, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelfield-server",
        description="Denoiser service for the SDS wire protocol",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8022,
                        help="listen port; 0 picks a free one")
    parser.add_argument("--mode", choices=("fake", "model"), default="fake")
    parser.add_argument("--model", default="",
                        help="model identifier (model mode)")
    parser.add_argument("--device", default="cpu",
                        help="torch device (model mode)")
    parser.add_argument("--guidance-scale", type=float, default=7.5)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = ServerConfig(host=args.host, port=args.port, mode=args.mode,
                              model_id=args.model, device=args.device,
                              guidance_scale=args.guidance_scale)
        serve(config)
    except ServerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
