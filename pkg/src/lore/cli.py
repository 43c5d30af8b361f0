"""Command-line entry point: ``lore <subcommand> ...``.

Option values resolve as: command-line flag, then ``--config`` JSON file,
then ``LORE_<OPTION>`` environment variable, then the built-in default.  The
resolved values, input file digests and tool version are written to
``manifest.json`` in the command's output directory.

Exit codes: 0 success, 1 usage, 2 validation, 3 I/O, 4 numeric failure,
5 external service.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import __version__
from .embed import (
    EMBED_DIM,
    FEATURE_DIM,
    HASH_NAME,
    HASH_SEED,
    EncoderParams,
    embed_documents,
    init_params,
    load_document_embeddings,
    save_document_embeddings,
)
from .errors import (
    ConfigMismatch,
    DegenerateEmbedding,
    DimensionMismatch,
    EmptyTier,
    LlmFormatError,
    LlmTransportError,
    MissingEmbedding,
    NoPositives,
    NonFiniteLoss,
    NotAPositive,
    ParseError,
    RelationParseError,
    ValidationError,
)
from .evaluation import (
    DEFAULT_KS,
    EvalConfig,
    compare_report,
    evaluate,
    format_report,
    read_report,
    write_report,
)
from .llm import ENV_MODEL, FixtureReplayClient, HttpChatClient, LlmEndpoint, RecordingClient
from .loss import LossConfig
from .optim import OptimizerConfig
from .rewrite import RewriteConfig, build_dataset, load_raw_corpus
from .tiers import load_dataset, save_dataset
from .train import (
    DEFAULT_SEEDS,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    summarize,
    train_seeds,
    write_metrics,
)

logger = logging.getLogger("lore")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC, EXIT_EXTERNAL = range(6)

_EXIT_FOR = (
    ((ParseError, ValidationError, NoPositives, MissingEmbedding, DimensionMismatch,
      ConfigMismatch, NotAPositive, EmptyTier), EXIT_VALIDATION),
    ((DegenerateEmbedding, NonFiniteLoss), EXIT_NUMERIC),
    ((LlmTransportError, LlmFormatError, RelationParseError), EXIT_EXTERNAL),
    ((OSError,), EXIT_IO),
)


class UsageError(Exception):
    pass


# -- option table and resolution ---------------------------------------------


def _int_list(value: Any) -> list[int]:
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return [int(v) for v in str(value).split(",") if v.strip()]


def _bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {value!r}")


@dataclass(frozen=True)
class Opt:
    name: str
    convert: Callable[[Any], Any]
    default: Any = None
    help: str = ""
    required: bool = False
    choices: tuple | None = None
    is_input: bool = False  # digest goes into the manifest
    positional: bool = False

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


_ENCODER_OPTS = (
    Opt("seed", int, 0, "seed of the frozen (pretrained) encoder initialization"),
    Opt("embed_dim", int, EMBED_DIM, "embedding dimension"),
    Opt("feature_dim", int, FEATURE_DIM, "hashed feature dimension"),
)

COMMANDS: dict[str, tuple[Opt, ...]] = {
    "build-dataset": (
        Opt("in", str, None, "raw labeled corpus (JSON lines)", required=True, is_input=True),
        Opt("out", str, None, "output tiered dataset path", required=True),
        Opt("rewrite_fraction", float, 1.0, "share of records to rewrite"),
        Opt("max_distractors", int, 2, "distractors sampled per rewritten query"),
        Opt("seed", int, 0, "sampling seed"),
        Opt("llm", _bool, False, "use the LLM endpoint from LORE_LLM_* (default: offline)"),
        Opt("fixtures", str, None, "replay LLM responses from this directory"),
        Opt("record_fixtures", str, None, "store live LLM responses in this directory"),
        Opt("max_in_flight", int, 4, "concurrent LLM requests"),
        Opt("timeout", float, 60.0, "LLM request timeout in seconds"),
    ),
    "export-doc-embeddings": (
        Opt("dataset", str, None, "tiered dataset", required=True, is_input=True),
        Opt("out", str, None, "output embedding file", required=True),
        Opt("params", str, None, "checkpoint to use as document encoder", is_input=True),
        *_ENCODER_OPTS,
    ),
    "train": (
        Opt("dataset", str, None, "training dataset", required=True, is_input=True),
        Opt("val", str, None, "validation dataset", is_input=True),
        Opt("doc_embeddings", str, None, "precomputed frozen document embeddings", is_input=True),
        Opt("out_dir", str, None, "output directory", required=True),
        Opt("seeds", _int_list, list(DEFAULT_SEEDS), "training seeds (one run each)"),
        *_ENCODER_OPTS,
        Opt("init", str, "identical", "query encoder init relative to the document encoder",
            choices=("identical", "independent")),
        Opt("loss", str, "lore", "lore: tier-weighted; infonce: alpha = beta = 1",
            choices=("lore", "infonce")),
        Opt("tau", float, 0.05, "temperature"),
        Opt("alpha", float, 1.0, "N2 weight"),
        Opt("beta", float, 3.0, "N1 weight"),
        Opt("lr", float, 1e-3, "learning rate"),
        Opt("optimizer", str, "adam", "optimizer", choices=("adam", "sgd")),
        Opt("adam_beta1", float, 0.9, "Adam beta1"),
        Opt("adam_beta2", float, 0.999, "Adam beta2"),
        Opt("adam_eps", float, 1e-8, "Adam epsilon"),
        Opt("epochs", int, 1, "epochs"),
        Opt("batch_size", int, 32, "batch size"),
        Opt("log_every", int, 1, "steps between diagnostics"),
    ),
    "eval": (
        Opt("dataset", str, None, "tiered dataset", required=True, is_input=True),
        Opt("checkpoint", str, None, "trained query encoder (omit for the raw model)", is_input=True),
        Opt("doc_embeddings", str, None, "precomputed frozen document embeddings", is_input=True),
        Opt("out_dir", str, None, "output directory", required=True),
        Opt("topk", _int_list, list(DEFAULT_KS), "cutoffs"),
        Opt("mode", str, "raw", "query variant", choices=("raw", "disturbed")),
        Opt("pool", str, "per-query", "retrieval pool", choices=("per-query", "global")),
        *_ENCODER_OPTS,
    ),
    "compare": (
        Opt("a", str, None, "baseline report.json", required=True, is_input=True, positional=True),
        Opt("b", str, None, "candidate report.json", required=True, is_input=True, positional=True),
        Opt("out_dir", str, None, "write comparison.json/txt and a manifest here"),
    ),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lore", description="Tier-weighted contrastive retrieval toolkit.")
    parser.add_argument("--version", action="version", version=f"lore {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("-v", "--verbose", action="store_true")
        for opt in opts:
            if opt.positional:
                p.add_argument(opt.name, nargs="?", default=None, help=opt.help)
            elif opt.convert is _bool:
                p.add_argument(opt.flag, dest=opt.name, action="store_const", const=True,
                               default=None, help=opt.help)
            else:
                p.add_argument(opt.flag, dest=opt.name, type=opt.convert, default=None,
                               choices=opt.choices, help=f"{opt.help} (default: {opt.default})")
        if name == "build-dataset":
            p.add_argument("--offline", dest="llm", action="store_const", const=False,
                           help="deterministic template rewriting (default)")
    return parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def resolve(
    command: str,
    ns: argparse.Namespace,
    env: Mapping[str, str] | None = None,
) -> dict[str, Any]:
    """Apply flag > config file > environment > default precedence."""
    env = os.environ if env is None else env
    file_cfg: dict = {}
    if getattr(ns, "config", None):
        try:
            raw = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {ns.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        file_cfg = {k: v for k, v in raw.items() if not isinstance(v, dict)}
        file_cfg.update(raw.get(command, {}))
    out = {}
    for opt in COMMANDS[command]:
        value = getattr(ns, opt.name, None)
        try:
            if value is None and opt.name in file_cfg:
                value = file_cfg[opt.name]
                value = None if value is None else opt.convert(value)
            env_key = "LORE_" + opt.name.upper()
            if value is None and env.get(env_key):
                value = opt.convert(env[env_key])
        except ValueError as exc:
            raise UsageError(f"bad value for {opt.name}: {exc}") from None
        if value is None:
            value = opt.default
        if value is None and opt.required:
            raise UsageError(f"{command}: {opt.flag} is required")
        if opt.choices and value is not None and value not in opt.choices:
            raise UsageError(f"{command}: {opt.flag} must be one of {opt.choices}")
        out[opt.name] = value
    return out


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return "sha256:" + h.hexdigest()


def write_manifest(out_dir: Path, command: str, config: Mapping[str, Any], inputs: Sequence[str]) -> Path:
    manifest = {
        "command": command,
        "config": dict(config),
        "input_digests": {p: file_digest(p) for p in inputs},
        "tool_version": __version__,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def _inputs(command: str, cfg: Mapping[str, Any]) -> list[str]:
    return [cfg[o.name] for o in COMMANDS[command] if o.is_input and cfg.get(o.name)]


def _encoder_meta(cfg: Mapping[str, Any]) -> dict:
    return {
        "seed": cfg["seed"],
        "embed_dim": cfg["embed_dim"],
        "feature_dim": cfg["feature_dim"],
        "hash": {"name": HASH_NAME, "seed": HASH_SEED},
    }


# -- commands ----------------------------------------------------------------


def cmd_build_dataset(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    raw = load_raw_corpus(cfg["in"])
    client = None
    endpoint = None
    if cfg["fixtures"]:
        client = FixtureReplayClient(cfg["fixtures"], os.environ.get(ENV_MODEL, "fixture"))
    elif cfg["llm"]:
        try:
            endpoint = LlmEndpoint.from_env(timeout=cfg["timeout"])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        client = HttpChatClient(endpoint, max_in_flight=cfg["max_in_flight"])
        if cfg["record_fixtures"]:
            client = RecordingClient(client, cfg["record_fixtures"])
    config = RewriteConfig(
        max_distractors=cfg["max_distractors"],
        rewrite_fraction=cfg["rewrite_fraction"],
        seed=cfg["seed"],
        llm=endpoint,
        max_in_flight=cfg["max_in_flight"],
    )
    result = build_dataset(raw, config, client=client, name=out.stem)
    save_dataset(result.dataset, out)
    report_path = out.with_name(out.stem + ".build_report.json")
    report_path.write_text(json.dumps(result.report.to_dict(), sort_keys=True, indent=2) + "\n",
                           encoding="utf-8")
    write_manifest(out.parent, "build-dataset", cfg, _inputs("build-dataset", cfg))
    logger.info("wrote %s (%d records, %d rewritten, %d failures)", out,
                result.report.total, result.report.rewritten, result.report.failures)
    return EXIT_OK


def _frozen_encoder(cfg: Mapping[str, Any]) -> EncoderParams:
    return init_params(cfg["embed_dim"], cfg["feature_dim"], cfg["seed"])


def cmd_export_doc_embeddings(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(cfg["dataset"])
    if cfg["params"]:
        params, _ = load_checkpoint(cfg["params"])
    else:
        params = _frozen_encoder(cfg)
    save_document_embeddings(embed_documents(dataset, params), out)
    write_manifest(out.parent, "export-doc-embeddings", cfg, _inputs("export-doc-embeddings", cfg))
    return EXIT_OK


def _doc_embeddings(cfg: Mapping[str, Any], datasets, frozen: EncoderParams | None) -> dict:
    if cfg.get("doc_embeddings"):
        return load_document_embeddings(cfg["doc_embeddings"])
    docs: dict = {}
    for ds in datasets:
        docs.update(embed_documents(ds, frozen))
    return docs


def cmd_train(cfg: dict) -> int:
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg["loss"] == "infonce":
        cfg["alpha"] = cfg["beta"] = 1.0
        loss = LossConfig.unchecked(cfg["tau"], 1.0, 1.0)
    else:
        try:
            loss = LossConfig(cfg["tau"], cfg["alpha"], cfg["beta"])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    dataset = load_dataset(cfg["dataset"])
    val = load_dataset(cfg["val"]) if cfg["val"] else None
    frozen = _frozen_encoder(cfg)
    docs = _doc_embeddings(cfg, [d for d in (dataset, val) if d is not None], frozen)
    if cfg["init"] == "identical":
        init = frozen
    else:
        init = init_params(cfg["embed_dim"], cfg["feature_dim"], seed=[cfg["seed"], 1])
    del frozen
    optimizer = OptimizerConfig(cfg["optimizer"], cfg["adam_beta1"], cfg["adam_beta2"], cfg["adam_eps"])
    try:
        config = TrainConfig(
            learning_rate=cfg["lr"],
            epochs=cfg["epochs"],
            batch_size=cfg["batch_size"],
            seed=cfg["seeds"][0] if cfg["seeds"] else 0,
            loss=loss,
            optimizer=optimizer,
            log_every=cfg["log_every"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not cfg["seeds"]:
        raise UsageError("train: --seeds must name at least one seed")
    reports = {}
    for seed in cfg["seeds"]:
        report = train_seeds(dataset, val, docs, init, config, seeds=[seed])[seed]
        meta = {"encoder": _encoder_meta(cfg), "init": cfg["init"], "train": report.config.as_dict(),
                "doc_embeddings": cfg["doc_embeddings"], "tool_version": __version__}
        save_checkpoint(out_dir / f"checkpoint_seed{seed}.npz", report.final_params, meta)
        write_metrics(report, out_dir / f"metrics_seed{seed}.jsonl")
        report.final_params = None  # release the matrix before the next seed
        reports[seed] = report
    (out_dir / "summary.json").write_text(
        json.dumps(summarize(reports), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    write_manifest(out_dir, "train", cfg, _inputs("train", cfg))
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(cfg["dataset"])
    if cfg["checkpoint"]:
        params, meta = load_checkpoint(cfg["checkpoint"])
        enc = meta.get("encoder", {})
        for key in ("seed", "embed_dim", "feature_dim"):
            if key in enc:
                cfg[key] = enc[key]
    else:
        params = _frozen_encoder(cfg)
    frozen = None if cfg["doc_embeddings"] else _frozen_encoder(cfg)
    docs = _doc_embeddings(cfg, [dataset], frozen)
    config = EvalConfig(tuple(cfg["topk"]), cfg["mode"], cfg["pool"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = evaluate(dataset, params, docs, config)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    write_report(report, out_dir / "report.json", out_dir / "report.txt")
    write_manifest(out_dir, "eval", cfg, _inputs("eval", cfg))
    print(format_report(report), end="")
    return EXIT_OK


def cmd_compare(cfg: dict) -> int:
    a, b = read_report(cfg["a"]), read_report(cfg["b"])
    rows = compare_report(a, b)
    lines = [f"{'k':>4}{'dP(up)':>10}{'dN1(down)':>11}"]
    for r in rows:
        dp = "-" if r["delta_P"] is None else f"{100 * r['delta_P']:+.2f}"
        dn = "-" if r["delta_N1"] is None else f"{100 * r['delta_N1']:+.2f}"
        lines.append(f"{r['k']:>4}{dp:>10}{dn:>11}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if cfg["out_dir"]:
        out_dir = Path(cfg["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "comparison.json").write_text(json.dumps(rows, sort_keys=True, indent=2) + "\n",
                                                 encoding="utf-8")
        (out_dir / "comparison.txt").write_text(text, encoding="utf-8")
        write_manifest(out_dir, "compare", cfg, _inputs("compare", cfg))
    return EXIT_OK


HANDLERS = {
    "build-dataset": cmd_build_dataset,
    "export-doc-embeddings": cmd_export_doc_embeddings,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def _fail(code: int, exc: BaseException) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve(ns.command, ns)
        return HANDLERS[ns.command](cfg)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except Exception as exc:
        for types, code in _EXIT_FOR:
            if isinstance(exc, types):
                return _fail(code, exc)
        if isinstance(exc, ValueError):
            # config objects reject out-of-range option values this way
            return _fail(EXIT_USAGE, exc)
        raise


if __name__ == "__main__":
    sys.exit(main())
