"""Command-line interface.

Subcommands: run, replay, validate, init-config, sweep, report.

Exit codes:
    0  success
    1  unexpected internal error
    2  configuration or usage error
    3  generation backend error (network, transcript, bank)
    4  strategy error (no usable generation after retries)
    5  relevance scoring error
    6  unreadable run log / report input
    7  invalid input or pool state
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import re
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from genrec import experiment
from genrec.click_model import ClickModelParams, theoretical_ctr
from genrec.config import PRESETS, config_from_dict, dump_toml, load_config, preset_config, read_config_data
from genrec.errors import (
    BackendError,
    ConfigError,
    GenRecError,
    InvalidInputError,
    InvalidStateError,
    LogParseError,
    ScoringError,
    StrategyError,
)
from genrec.llm_gateway import TranscriptEntry, write_transcript
from genrec.rng import stream

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_STRATEGY = 4
EXIT_SCORING = 5
EXIT_LOG = 6
EXIT_INVALID = 7

_EXIT_FOR = (
    (ConfigError, EXIT_CONFIG, "config"),
    (BackendError, EXIT_BACKEND, "llm_gateway"),
    (StrategyError, EXIT_STRATEGY, "strategies"),
    (ScoringError, EXIT_SCORING, "relevance"),
    (LogParseError, EXIT_LOG, "report"),
    (InvalidInputError, EXIT_INVALID, "input"),
    (InvalidStateError, EXIT_INVALID, "pool"),
)

RUN_LOG = "run.jsonl"
TRANSCRIPT = "transcript.jsonl"
SUMMARY = "summary.json"
ITERATIONS_CSV = "iterations.csv"
QUESTIONS_CSV = "questions.csv"

log = logging.getLogger("genrec")


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-") or "topic"


def parse_range(spec: str, as_int: bool = False) -> list:
    """``"1,2,5"`` or inclusive ``"start:stop[:step]"``."""
    spec = spec.strip()
    if not spec:
        raise InvalidInputError("empty range")
    try:
        if ":" in spec:
            parts = [float(x) for x in spec.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) == 3 else 1.0
            if step <= 0 or stop < start:
                raise ValueError
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            values = [start + i * step for i in range(count)]
            values = [round(v, 10) for v in values]
        else:
            values = [float(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise InvalidInputError(f"invalid range {spec!r}; use 'a,b,c' or 'start:stop[:step]'") from None
    if not values:
        raise InvalidInputError(f"range {spec!r} is empty")
    if as_int:
        if any(v != int(v) for v in values):
            raise InvalidInputError(f"range {spec!r} must contain integers")
        return [int(v) for v in values]
    return values


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
        print(f"wrote {out}", file=sys.stderr)
    else:
        sys.stdout.write(text)


# -- run / replay / validate ---------------------------------------------------


def _write_artifacts(out_dir: Path, result: experiment.RunResult) -> None:
    records = experiment.load_run_log(out_dir / RUN_LOG)
    write_transcript(
        out_dir / TRANSCRIPT,
        (TranscriptEntry(r["prompt_digest"], r["response"], r.get("metadata") or {}) for r in records if r["type"] == "call"),
    )
    (out_dir / SUMMARY).write_text(json.dumps(result.summary(), indent=2, sort_keys=True), encoding="utf-8")
    (out_dir / ITERATIONS_CSV).write_text(
        _csv_text(
            ["iteration", "overall_ctr", "mean_score", "pool_size"],
            [[r.iteration, r.overall_ctr, r.mean_score, len(r.question_ids)] for r in result.records],
        ),
        encoding="utf-8",
    )
    texts = {q["id"]: q["text"] for q in result.questions}
    rows = []
    for r in result.records:
        for qid in r.question_ids:
            rows.append([r.iteration, qid, texts[qid], r.impressions[qid], r.clicks[qid], r.ctr[qid]])
    (out_dir / QUESTIONS_CSV).write_text(
        _csv_text(["iteration", "question_id", "text", "impressions", "clicks", "ctr"], rows), encoding="utf-8"
    )


def _default_out_dir(config) -> Path:
    return Path("runs") / f"{_slug(config.topic)}-{config.strategy.kind}-s{config.seed}"


def _execute(config, out_dir: str | None) -> int:
    out = Path(out_dir) if out_dir else _default_out_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    result = experiment.run(config, log_path=out / RUN_LOG)
    _write_artifacts(out, result)
    print(f"{'iteration':>9}  {'ctr':>7}  {'mean score':>10}", file=sys.stderr)
    for r in result.records:
        score = "" if r.mean_score is None else f"{r.mean_score:10.3f}"
        print(f"{r.iteration:9d}  {r.overall_ctr:7.2%}  {score}", file=sys.stderr)
    print(f"avg CTR {result.avg_ctr:.2%}  last CTR {result.last_ctr:.2%}  -> {out}", file=sys.stderr)
    if not sys.stdout.isatty():
        print(json.dumps({"avg_ctr": result.avg_ctr, "last_ctr": result.last_ctr, "output_dir": str(out)}))
    return EXIT_OK


def cmd_run(args) -> int:
    config = load_config(args.config, args.set)
    return _execute(config, args.output)


def _resolve_transcript(path: str) -> Path:
    p = Path(path)
    if p.is_dir():
        for name in (TRANSCRIPT, RUN_LOG):
            if (p / name).is_file():
                return p / name
        raise ConfigError(f"no {TRANSCRIPT} or {RUN_LOG} in {p}")
    if not p.is_file():
        raise ConfigError(f"transcript not found: {p}")
    return p


def cmd_replay(args) -> int:
    transcript = _resolve_transcript(args.transcript)
    if args.config:
        config = load_config(args.config, args.set)
    else:
        # the run log carries its own config echo
        log_path = transcript if transcript.name == RUN_LOG else transcript.with_name(RUN_LOG)
        records = experiment.load_run_log(log_path)
        config = config_from_dict(records[0]["config"])
    config = experiment.replay_config(config, transcript)
    out = args.output or str(_default_out_dir(config)) + "-replay"
    return _execute(config, out)


def cmd_validate(args) -> int:
    config = load_config(args.config, args.set)
    from genrec.relevance import resolve_personas

    resolve_personas(config.personas, config.persona_file)
    print(dump_toml(config), end="")
    print(f"{args.config}: ok", file=sys.stderr)
    return EXIT_OK


def cmd_init_config(args) -> int:
    _emit(dump_toml(preset_config(args.preset)), args.output)
    return EXIT_OK


# -- sweep ---------------------------------------------------------------------


def cmd_sweep(args) -> int:
    header = ["score", "k", "temperature", "rejection_score", "theoretical_ctr"]
    if args.kind in ("rs", "temperature"):
        scores = parse_range(args.scores)
        if args.kind == "rs":
            grid = [(args.temperature, rs) for rs in parse_range(args.rs_values)]
        else:
            grid = [(t, args.rs) for t in parse_range(args.t_values)]
        rows = []
        for t, rs in grid:
            params = ClickModelParams(t, rs)
            for s in scores:
                rows.append([s, args.k, t, rs, theoretical_ctr(s, args.k, params)])
        _emit(_csv_text(header, rows), args.output)
        return EXIT_OK

    s_values = parse_range(args.s_values, as_int=True)
    if any(s < 1 for s in s_values):
        raise InvalidInputError("s-count values must be >= 1")
    m = experiment.random_pool_scores(args.pool_size, args.personas, stream(args.seed, "variance-pool"))
    table = experiment.variance_study(
        m, s_values, args.replications, args.k, ClickModelParams(args.temperature, args.rs), args.seed
    )
    rows = [
        [r.interactions, r.replications, r.question_ctr_variance, r.overall_ctr_variance,
         r.overall_ctr_mean, r.theoretical_ctr]
        for r in table
    ]
    _emit(
        _csv_text(
            ["s", "replications", "question_ctr_variance", "overall_ctr_variance", "overall_ctr_mean",
             "theoretical_ctr"],
            rows,
        ),
        args.output,
    )
    return EXIT_OK


# -- report --------------------------------------------------------------------

STRATEGY_ORDER = ("no-drop", "random-ctr", "partial-ctr", "full-ctr", "explore-exploit")


def load_run_summary(path: str | Path) -> dict:
    """Normalised view of a run from its run log, summary JSON, or output directory."""
    p = Path(path)
    if p.is_dir():
        if (p / RUN_LOG).is_file():
            p = p / RUN_LOG
        elif (p / SUMMARY).is_file():
            p = p / SUMMARY
        else:
            raise LogParseError(p, None, f"no {RUN_LOG} or {SUMMARY} in directory")
    if p.suffix == ".json":
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
            config = data["config"]
            iterations = data["iterations"]
            avg, last = data["avg_ctr"], data["last_ctr"]
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as err:
            raise LogParseError(p, None, f"not a run summary ({err})") from None
    else:
        records = experiment.load_run_log(p)
        config = records[0].get("config")
        iterations = [r["record"] for r in records if r["type"] == "iteration"]
        summary = [r for r in records if r["type"] == "summary"]
        if not isinstance(config, dict) or not iterations:
            raise LogParseError(p, None, "run log has no config or no iteration records")
        if summary:
            avg, last = summary[-1]["avg_ctr"], summary[-1]["last_ctr"]
        else:
            ctrs = [it["overall_ctr"] for it in iterations]
            avg, last = float(np.mean(ctrs)), ctrs[-1]
    try:
        return {
            "path": str(p),
            "topic": config["topic"],
            "strategy": config["strategy"]["kind"],
            "personas": "+".join(config["personas"]),
            "seed": config.get("seed", 0),
            "avg_ctr": float(avg),
            "last_ctr": float(last),
            "series": [(it["iteration"], it["overall_ctr"], it.get("mean_score")) for it in iterations],
        }
    except (KeyError, TypeError) as err:
        raise LogParseError(p, None, f"missing field {err}") from None


def report_table(runs: Sequence[dict]) -> list[dict]:
    """One row per (topic, persona mix, strategy), CTRs averaged over runs."""
    groups: dict[tuple, list[dict]] = {}
    for r in runs:
        groups.setdefault((r["topic"], r["personas"], r["strategy"]), []).append(r)

    def order(key):
        topic, personas, strategy = key
        rank = STRATEGY_ORDER.index(strategy) if strategy in STRATEGY_ORDER else len(STRATEGY_ORDER)
        return topic, personas, rank, strategy

    rows = []
    for key in sorted(groups, key=order):
        members = groups[key]
        rows.append({
            "topic": key[0],
            "personas": key[1],
            "strategy": key[2],
            "runs": len(members),
            "avg_ctr": float(np.mean([m["avg_ctr"] for m in members])),
            "last_ctr": float(np.mean([m["last_ctr"] for m in members])),
        })
    return rows


def _format_table(rows: list[dict]) -> str:
    lines = []
    topic = None
    for r in rows:
        if r["topic"] != topic:
            topic = r["topic"]
            if lines:
                lines.append("")
            lines.append(f"topic: {topic}")
            lines.append(f"  {'personas':<28} {'strategy':<16} {'runs':>4} {'Avg.':>7} {'Last':>7}")
        lines.append(
            f"  {r['personas']:<28} {r['strategy']:<16} {r['runs']:>4} {r['avg_ctr']:>7.1%} {r['last_ctr']:>7.1%}"
        )
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    runs = [load_run_summary(p) for p in args.logs]
    rows = report_table(runs)
    fmt = args.format or ("table" if sys.stdout.isatty() else "csv")
    if fmt == "table":
        text = _format_table(rows)
    elif fmt == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        cols = ["topic", "personas", "strategy", "runs", "avg_ctr", "last_ctr"]
        text = _csv_text(cols, [[r[c] for c in cols] for r in rows])
    _emit(text, args.output)
    if args.series:
        series = [
            [r["path"], r["topic"], r["personas"], r["strategy"], r["seed"], it, ctr, score]
            for r in runs
            for it, ctr, score in r["series"]
        ]
        _emit(
            _csv_text(["run", "topic", "personas", "strategy", "seed", "iteration", "overall_ctr", "mean_score"], series),
            args.series,
        )
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genrec", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p, required=True):
        p.add_argument("-c", "--config", required=required, help="experiment config (TOML or JSON)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. --set strategy.kind=full-ctr (repeatable)")

    p = sub.add_parser("run", help="run one experiment and write its artifacts")
    config_args(p)
    p.add_argument("-o", "--output", help="output directory (default runs/<topic>-<strategy>-s<seed>)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="re-run an experiment answering generation from a transcript")
    config_args(p, required=False)
    p.add_argument("-t", "--transcript", required=True, help="transcript.jsonl, run.jsonl or a run directory")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    config_args(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("init-config", help="print a config with default hyperparameters")
    p.add_argument("--preset", choices=PRESETS, default="remote")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_init_config)

    p = sub.add_parser("sweep", help="theoretical CTR curves or CTR variance vs. interaction count (CSV)")
    p.add_argument("kind", choices=("rs", "temperature", "s-count"))
    p.add_argument("--scores", default="1:10", help="shared relevance scores (default 1:10)")
    p.add_argument("--rs-values", default="8:14:0.5", help="rejection scores for the rs sweep")
    p.add_argument("--t-values", default="0.5:3:0.25", help="temperatures for the temperature sweep")
    p.add_argument("-k", type=int, default=3, help="questions shown per interaction")
    p.add_argument("--temperature", type=float, default=1.5)
    p.add_argument("--rs", type=float, default=11.0)
    p.add_argument("--s-values", default="100,1000,5000,50000")
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--pool-size", type=int, default=5)
    p.add_argument("--personas", type=int, default=1, help="persona columns in the random pool")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="Avg./Last CTR table over run logs")
    p.add_argument("logs", nargs="+", help="run.jsonl, summary.json or run directories")
    p.add_argument("--format", choices=("table", "csv", "json"))
    p.add_argument("--series", help="also write per-iteration CTR/score series CSV here")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except GenRecError as err:
        for cls, code, module in _EXIT_FOR:
            if isinstance(err, cls):
                print(f"error [{module}]: {err}", file=sys.stderr)
                return code
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
