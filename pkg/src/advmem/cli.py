"""Command-line client for the experiment service.

The CLI only marshals arguments into service requests and renders responses;
all behavior lives behind the HTTP API. By default requests are dispatched
to an in-process instance of the app (no server needed, files are written
locally); pass ``--server URL`` to talk to a running instance instead.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numeric failure,
1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx

EXIT_CODES = {"config": 2, "io": 3, "numeric": 4, "internal": 1}


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # In-process transport: same request/response semantics as a live server.
    from fastapi.testclient import TestClient
    from .service.app import app

    return TestClient(app, raise_server_exceptions=False)


def _fail(kind: str, detail: str) -> int:
    print(f"error ({kind}): {detail}", file=sys.stderr)
    return EXIT_CODES.get(kind, 1)


def _post(args, path: str, payload: dict):
    with _client(args.server) as client:
        try:
            resp = client.post(path, json=payload)
        except httpx.HTTPError as exc:
            return None, _fail("io", f"cannot reach server: {exc}")
    if resp.status_code == 200:
        return resp.json(), 0
    try:
        err = resp.json()["error"]
        return None, _fail(err["kind"], err["detail"])
    except (KeyError, ValueError):
        return None, _fail("internal", f"HTTP {resp.status_code}: {resp.text[:500]}")


def _load_raw_config(path: str, seed: int | None) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    raw = json.loads(p.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError(f"{p}: config root must be a JSON object")
    if seed is not None:
        raw["seed"] = seed
    return raw


def _resolve_out(args, raw: dict, default: str) -> str:
    if args.out:
        return args.out
    if isinstance(raw.get("out_dir"), str) and raw["out_dir"]:
        return raw["out_dir"]
    return default


def _print_accuracies(accs: dict) -> None:
    for name, val in accs.items():
        print(f"  {name:>12}: {val:.4f}")


def cmd_train(args) -> int:
    try:
        raw = _load_raw_config(args.config, args.seed)
    except FileNotFoundError as exc:
        return _fail("io", str(exc))
    except (json.JSONDecodeError, ValueError) as exc:
        return _fail("config", str(exc))
    out_dir = _resolve_out(args, raw, "runs/train")
    body, code = _post(args, "/train", {"config": raw, "out_dir": out_dir})
    if code:
        return code
    summary = body["summary"]
    print(f"run complete: {body['out_dir']}")
    print(f"  seed={summary['seed']} ablation={summary['ablation']} "
          f"bank_size={summary['bank_size']}")
    print(f"  train_acc: {summary['train_acc']:.4f}")
    _print_accuracies(summary["test_acc"])
    if summary["test_acc_mean"] is not None:
        print(f"  test mean: {summary['test_acc_mean']:.4f}")
    return 0


def cmd_eval(args) -> int:
    payload = {
        "checkpoint_path": args.checkpoint,
        "use_memory": not args.no_memory,
    }
    if args.data:
        if args.data.endswith(".csv"):
            payload["csv_path"] = args.data
        else:
            try:
                payload["data_spec"] = json.loads(Path(args.data).read_text(encoding="utf-8"))
            except FileNotFoundError:
                return _fail("io", f"data file not found: {args.data}")
            except json.JSONDecodeError as exc:
                return _fail("config", f"{args.data}: {exc}")
    if args.out:
        payload["out_path"] = str(Path(args.out) / "eval.csv")
    body, code = _post(args, "/eval", payload)
    if code:
        return code
    print(f"accuracy (memory={'on' if body['use_memory'] else 'off'}):")
    for row in body["domains"]:
        print(f"  {row['domain']:>12}: {row['accuracy']:.4f}  (n={row['n']})")
    return 0


def cmd_sweep(args) -> int:
    try:
        raw = _load_raw_config(args.config, args.seed)
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except FileNotFoundError as exc:
        return _fail("io", str(exc))
    except (json.JSONDecodeError, ValueError) as exc:
        return _fail("config", str(exc))
    out_dir = _resolve_out(args, raw, f"runs/sweep_{args.param}")
    body, code = _post(args, "/sweep", {
        "config": raw, "parameter": args.param, "values": values, "out_dir": out_dir,
    })
    if code:
        return code
    print(f"sweep written: {body['csv_path']}")
    for row in body["rows"]:
        status = row["status"]
        mean = f"{row['mean']:.4f}" if status == "ok" else status
        print(f"  {args.param}={row['value']}: {mean}")
    return 0


def cmd_ablate(args) -> int:
    try:
        raw = _load_raw_config(args.config, args.seed)
    except FileNotFoundError as exc:
        return _fail("io", str(exc))
    except (json.JSONDecodeError, ValueError) as exc:
        return _fail("config", str(exc))
    out_dir = _resolve_out(args, raw, "runs/ablate")
    body, code = _post(args, "/ablate", {"config": raw, "out_dir": out_dir})
    if code:
        return code
    print(f"ablation grid written: {body['csv_path']}")
    for row in body["rows"]:
        print(f"  {row['variant']:>16}: {row['mean']:.4f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advmem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--server", default=None, help="URL of a running service")

    p_train = sub.add_parser("train", help="run one training experiment")
    p_train.add_argument("--config", required=True)
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint per domain")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", default=None,
                        help="csv file or JSON data-spec file (default: checkpoint's benchmark)")
    p_eval.add_argument("--no-memory", action="store_true",
                        help="predict with duplicated features, bypassing the bank")
    common(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="train once per hyperparameter value")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--param", required=True,
                         choices=["lambda_aug", "gamma", "beta", "r_m"])
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_ablate = sub.add_parser("ablate", help="train the full model and all ablations")
    p_ablate.add_argument("--config", required=True)
    common(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
