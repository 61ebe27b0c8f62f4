"""Command-line front end: generate, resume, validate, inspect.

Exit codes: 0 success; 1 validation findings or other domain errors; 2 usage
or configuration problems; 3 the model never satisfied a response schema;
4 call budget exhausted; 5 transport failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .errors import (
    BudgetExceeded,
    ConfigError,
    EmptyPlot,
    ForktaleError,
    InvalidPath,
    SchemaViolation,
    TransportError,
)
from .exporter import export_game_json, export_ink, save_game_json, save_ink
from .fakemodel import FakeStoryModel
from .gateway import BackendConfig, Gateway, Mode
from .narrator import Narrator, save_narrations
from .pipeline import Pipeline, PipelineConfig, read_checkpoint
from .tree import load, path_for_choices, save, storyline_events, validate

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2
EXIT_SCHEMA = 3
EXIT_BUDGET = 4
EXIT_TRANSPORT = 5

_ENV_PREFIX = "FORKTALE_"


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


def _setting(name: str, flag_value, config_doc: dict, default=None, cast=None):
    """Flags beat the config file; the config file beats the environment."""
    if flag_value is not None:
        value = flag_value
    elif name in config_doc:
        value = config_doc[name]
    else:
        env = os.environ.get(_ENV_PREFIX + name.upper())
        value = env if env is not None else default
    if cast is None or value is None:
        return value
    # config files and the environment are untyped; fail as usage, not a traceback
    try:
        if cast is str and not isinstance(value, str):
            raise TypeError(f"expected text, got {type(value).__name__}")
        return cast(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from exc


class _RunLog:
    """Mirrors machine-readable progress lines to a file and stdout."""

    def __init__(self, path: Path):
        self._handle = path.open("w", encoding="utf-8")

    def emit(self, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False, sort_keys=True)
        self._handle.write(line + "\n")
        self._handle.flush()
        print(line)

    def close(self) -> None:
        self._handle.close()


def _build_gateway(args, config_doc: dict) -> Gateway:
    mode_name = _setting("mode", args.mode, config_doc, "mock")
    try:
        mode = Mode(mode_name)
    except ValueError:
        raise ConfigError(f"unknown mode {mode_name!r}") from None
    backend_config = BackendConfig(
        mode=mode,
        endpoint=_setting("endpoint", args.endpoint, config_doc, "", cast=str) or "",
        api_key_env=_setting("api_key_env", args.api_key_env, config_doc, "OPENAI_API_KEY", cast=str),
        cassette_path=_setting("cassette", args.cassette, config_doc, "", cast=str) or "",
        retry_limit=_setting("retry_limit", args.retry_limit, config_doc, 3, cast=int),
        request_timeout=_setting("timeout", args.timeout, config_doc, 60.0, cast=float),
        model_id=_setting("model", args.model, config_doc, "gpt-4", cast=str),
    )
    mock_model = FakeStoryModel() if mode is Mode.MOCK else None
    return Gateway.from_config(backend_config, mock_model)


def _pipeline_config(args, config_doc: dict) -> PipelineConfig:
    return PipelineConfig(model_id=_setting("model", args.model, config_doc, "gpt-4", cast=str))


def _artifacts(tree, narrations, out_dir: Path) -> None:
    save(tree, out_dir / "tree.json")
    save_narrations(narrations, out_dir / "narrations.json")
    save_ink(export_ink(tree, narrations), out_dir / "story.ink")
    save_game_json(export_game_json(tree, narrations), out_dir / "game.json")


def _finish_run(pipeline: Pipeline, gateway: Gateway, tree, args, config_doc, out_dir: Path, run_log: _RunLog) -> None:
    narrator = Narrator(gateway, pipeline.config)
    parallel = _setting("parallel", args.parallel, config_doc, 1, cast=int)
    narrations = narrator.narrate_tree(
        tree, checkpoint_path=out_dir / "narrations.partial.json", parallel=parallel
    )
    _artifacts(tree, narrations, out_dir)
    for stale in ("checkpoint.json", "narrations.partial.json"):
        try:
            (out_dir / stale).unlink()
        except FileNotFoundError:
            pass
    run_log.emit(
        {
            "event": "done",
            "nodes": len(tree.nodes),
            "endings": 2**tree.n,
            "gateway_calls": gateway.calls,
            "out_dir": str(out_dir),
        }
    )


def cmd_generate(args) -> int:
    config_doc = _load_config_file(args.config)
    if args.plot_file:
        plot = Path(args.plot_file).read_text(encoding="utf-8")
    elif args.plot:
        plot = args.plot
    else:
        raise ConfigError("provide a plot file or --plot")
    out_dir = Path(_setting("out_dir", args.out_dir, config_doc, "out", cast=str))
    out_dir.mkdir(parents=True, exist_ok=True)
    gateway = _build_gateway(args, config_doc)
    pipeline = Pipeline(gateway, _pipeline_config(args, config_doc))

    run_log = _RunLog(out_dir / "run.log")
    try:
        nodes = _setting("nodes", args.nodes, config_doc, cast=int)
        tree = pipeline.initialize_tree(plot, args.char, nodes, args.title or "")
        run_log.emit({"event": "initialized", "nodes": tree.n})
        budget = _setting("budget", args.budget, config_doc, cast=int)
        tree = pipeline.expand_tree(
            tree,
            budget=budget,
            progress=lambda record: run_log.emit({"event": "branch", **record}),
            checkpoint_path=out_dir / "checkpoint.json",
        )
        _finish_run(pipeline, gateway, tree, args, config_doc, out_dir, run_log)
    finally:
        run_log.close()
    return EXIT_OK


def cmd_resume(args) -> int:
    config_doc = _load_config_file(args.config)
    state = read_checkpoint(args.checkpoint)
    out_dir = Path(_setting("out_dir", args.out_dir, config_doc, "out", cast=str))
    out_dir.mkdir(parents=True, exist_ok=True)
    gateway = _build_gateway(args, config_doc)
    pipeline = Pipeline(gateway, _pipeline_config(args, config_doc))

    run_log = _RunLog(out_dir / "run.log")
    try:
        run_log.emit({"event": "resumed", "completed": state.completed, "pending": len(state.frontier)})
        budget = _setting("budget", args.budget, config_doc, cast=int)
        tree = pipeline.expand_tree(
            state.tree,
            budget=budget,
            progress=lambda record: run_log.emit({"event": "branch", **record}),
            checkpoint_path=Path(args.checkpoint),
            resume_state=state,
        )
        _finish_run(pipeline, gateway, tree, args, config_doc, out_dir, run_log)
    finally:
        run_log.close()
    return EXIT_OK


def cmd_validate(args) -> int:
    tree = load(args.tree)
    violations = validate(tree, expect_complete=args.complete)
    for violation in violations:
        subject = f" [{violation.subject}]" if violation.subject else ""
        print(f"{violation.severity}: {violation.code}: {violation.message}{subject}")
    if violations:
        return EXIT_DOMAIN
    print(f"ok: {len(tree.nodes)} nodes, no violations")
    return EXIT_OK


def cmd_inspect(args) -> int:
    tree = load(args.tree)
    try:
        path = path_for_choices(tree, args.path)
    except InvalidPath as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    events = storyline_events(tree, path)
    for i, event in enumerate(events, start=1):
        print(f"{i}. {event}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forktale",
        description="Turn a linear plot into a fully branching interactive story.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_backend_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--mode", choices=["live", "record", "replay", "mock"], default=None)
        p.add_argument("--cassette", help="cassette file for record/replay modes")
        p.add_argument("--endpoint", help="chat-completions URL for live/record modes")
        p.add_argument("--api-key-env", help="environment variable holding the API key")
        p.add_argument("--model", help="model identifier sent to the backend")
        p.add_argument("--retry-limit", type=int, help="total attempts per request")
        p.add_argument("--timeout", type=float, help="request timeout in seconds")
        p.add_argument("--budget", type=int, help="cap on gateway calls for expansion")
        p.add_argument("--parallel", type=int, help="concurrent narration requests")
        p.add_argument("--out-dir", help="artifact directory (default: out)")
        p.add_argument("--config", help="JSON config file; flags override it")

    generate = sub.add_parser("generate", help="run the full pipeline on a plot")
    generate.add_argument("plot_file", nargs="?", help="text file holding the plot summary")
    generate.add_argument("--plot", help="plot summary given inline")
    generate.add_argument("--char", required=True, help="main character name")
    generate.add_argument("--title", help="story title for the exports")
    generate.add_argument("--nodes", type=int, help="node count (default: model picks up to 6)")
    add_backend_flags(generate)
    generate.set_defaults(func=cmd_generate)

    resume = sub.add_parser("resume", help="continue an interrupted expansion")
    resume.add_argument("--checkpoint", required=True, help="checkpoint file to resume")
    add_backend_flags(resume)
    resume.set_defaults(func=cmd_resume)

    validate_cmd = sub.add_parser("validate", help="check a tree file")
    validate_cmd.add_argument("tree", help="tree.json to validate")
    validate_cmd.add_argument(
        "--complete", action="store_true", help="also require full binary expansion"
    )
    validate_cmd.set_defaults(func=cmd_validate)

    inspect = sub.add_parser("inspect", help="print one storyline of a tree")
    inspect.add_argument("tree", help="tree.json to read")
    inspect.add_argument(
        "--path", required=True, help='choice vector like "OAO" (O=original, A=alternate)'
    )
    inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, EmptyPlot) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SchemaViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ForktaleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
