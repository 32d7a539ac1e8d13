"""Run the service: python -m clipservice --port 8421 --model random-tiny."""

import argparse

import uvicorn

from .app import create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="clip-loss-service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8421)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--model", default="openai/clip-vit-base-patch32",
                        help="checkpoint id, or 'random-tiny' for the "
                             "offline deterministic backbone")
    parser.add_argument("--eager", action="store_true",
                        help="load the backbone at startup, not first use")
    args = parser.parse_args(argv)

    app = create_app(model_spec=args.model, device=args.device,
                     eager=args.eager)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
