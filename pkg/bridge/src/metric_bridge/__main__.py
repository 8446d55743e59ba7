import argparse
import sys

from .server import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="uapg-bridge",
        description="Serve a no-reference quality metric over line-delimited "
                    "JSON (ops: info, score, gradient).",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("serve", help="start the request/response loop")
    p.add_argument("--metric", required=True,
                   help="mean | toyconv | paq2piq | linearity | vsfa | "
                        "mdtvsfa | koncept512 | nima | spaq | "
                        "module:<pkg.mod:factory>")
    p.add_argument("--device", default="cpu", help="torch device selector")
    args = parser.parse_args(argv)
    return serve(args.metric, args.device)


if __name__ == "__main__":
    sys.exit(main())
