"""Operator entry point: preprocess, synth, run, eval, serve.

Configuration comes from an optional YAML/JSON file, overridden by
environment variables (WARDROUND_*), overridden by flags.  Exit codes:
0 success, 1 validation or input error, 2 batch finished but the failure
rate exceeded the threshold.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

import yaml

from .icd10 import ChapterTable, CodeTable, default_chapter_table
from .llm import BackendConfig, OllamaBackend, OpenAiCompatBackend, ScriptedBackend
from .orchestrator import DialogueConfig, RunCase
from .records import corpus_stats, ingest, load_store, sample_test_set, save_store
from .reporting import aggregate_run_dirs, report_to_csv, write_report_files
from .runner import RunSpec, run_batch
from .synth import (DEFAULT_MEAN_CODES, generate_raw_corpus, generate_synthetic,
                    write_raw_files)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PARTIAL_FAILURE = 2


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"config {path} must hold a mapping")
    return data


def _env(name: str, default=None):
    return os.environ.get(f"WARDROUND_{name}", default)


class Playbook:
    """record_id -> scripted replies, with a default script fallback."""

    def __init__(self, data: dict):
        self.model = data.get("model", "scripted-mock")
        self.default = data.get("default")
        self.records = data.get("records", {})

    @classmethod
    def load(cls, path: str) -> "Playbook":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def script_for(self, record_id: str) -> list[str]:
        script = self.records.get(record_id, self.default)
        if not script:
            raise ValueError(f"playbook has no script for record {record_id}")
        return list(script)


def _backend_factory(role: str, conf: dict):
    """(factory, model_id) for one side of the dialogue."""
    kind = conf.get("kind", "openai")
    if kind == "scripted":
        if conf.get("playbook"):
            playbook = Playbook.load(conf["playbook"])
        elif conf.get("script"):
            playbook = Playbook({"default": conf["script"], "model": conf.get("model", "scripted-mock")})
        else:
            raise ValueError(f"{role}: scripted backend needs a playbook or script")
        model = conf.get("model", playbook.model)
        return (lambda record_id: ScriptedBackend(playbook.script_for(record_id), model=model)), model

    prefix = role.upper()
    config = BackendConfig(
        base_url=conf.get("base_url") or _env(f"{prefix}_BASE_URL") or _env("BASE_URL")
        or ("http://127.0.0.1:11434/v1" if kind == "openai" else "http://127.0.0.1:11434"),
        model=conf.get("model") or _env(f"{prefix}_MODEL") or _env("MODEL") or "llama3:8b",
        api_key=conf.get("api_key") or _env(f"{prefix}_API_KEY") or _env("API_KEY"),
        temperature=float(conf.get("temperature", 0.0)),
        seed=conf.get("seed"),
        max_tokens=int(conf.get("max_tokens", 1024)),
        request_timeout=float(conf.get("request_timeout", 120.0)),
        max_retries=int(conf.get("max_retries", 3)),
        backoff_base=float(conf.get("backoff_base", 0.5)),
    )
    backend = OllamaBackend(config) if kind == "ollama" else OpenAiCompatBackend(config)
    return (lambda record_id: backend), config.model


def cmd_preprocess(args) -> int:
    try:
        records, stats = ingest(args.notes, args.diagnoses)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if not records:
        print("error: no records survived filtering", file=sys.stderr)
        return EXIT_VALIDATION
    save_store(records, args.out)
    cs = corpus_stats(records)
    print(f"notes read: {stats.notes_read}")
    print(f"diagnosis rows read: {stats.diagnosis_rows_read} "
          f"(non-ICD-10 dropped: {stats.non_icd10_rows})")
    for reason, count in sorted(stats.dropped.items()):
        print(f"dropped ({reason}): {count}")
    print(f"records kept: {cs.record_count}")
    print(f"unique diagnoses: {cs.unique_diagnosis_count} (of {cs.total_code_mentions} total)")
    print(f"mean codes per sample: {float(cs.mean_codes_per_sample):.2f}")
    print(f"most common code: {cs.most_common_code}")
    print(f"rarest codes: {len(cs.rarest_codes)}")
    print(f"wrote {cs.record_count} records to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    code_table = CodeTable.from_csv(args.code_table) if args.code_table else None
    if args.raw_notes or args.raw_diagnoses:
        if not (args.raw_notes and args.raw_diagnoses):
            print("error: raw mode needs both --raw-notes and --raw-diagnoses", file=sys.stderr)
            return EXIT_VALIDATION
        notes, diags = generate_raw_corpus(
            args.seed, args.n, n_deceased=args.deceased,
            n_missing_section=args.malformed, code_table=code_table,
            mean_codes=args.mean_codes)
        write_raw_files(notes, diags, args.raw_notes, args.raw_diagnoses)
        print(f"wrote {len(notes)} raw notes to {args.raw_notes} "
              f"({args.deceased} deceased, {args.malformed} malformed)")
        return EXIT_OK
    if not args.out:
        print("error: --out is required unless writing a raw corpus", file=sys.stderr)
        return EXIT_VALIDATION
    records = generate_synthetic(args.seed, args.n, code_table=code_table,
                                 mean_codes=args.mean_codes)
    save_store(records, args.out)
    print(f"wrote {len(records)} synthetic records to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    conf = _load_config(args.config)
    case_name = args.case or conf.get("case")
    if not case_name:
        print("error: no case given (flag --case or config key 'case')", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        case = RunCase(case_name)
    except ValueError:
        print(f"error: unknown case {case_name!r}", file=sys.stderr)
        return EXIT_VALIDATION
    if case is RunCase.HUMAN_IN_LOOP:
        print("error: human sessions run under 'serve', not 'run'", file=sys.stderr)
        return EXIT_VALIDATION

    records_path = args.records or conf.get("records")
    out_dir = args.out_dir or conf.get("out_dir")
    if not records_path or not out_dir:
        print("error: both a record store and an output directory are required",
              file=sys.stderr)
        return EXIT_VALIDATION

    phys_conf = dict(conf.get("physician", {}))
    asst_conf = dict(conf.get("assistant", {})) if conf.get("assistant") else {}
    for side, flags in (("physician", phys_conf), ("assistant", asst_conf)):
        for key in ("kind", "model", "base_url", "playbook"):
            value = getattr(args, f"{side}_{key}", None)
            if value is not None:
                flags[key] = value

    if case is RunCase.TWO_AGENT and not asst_conf:
        print("error: two-agent case needs an assistant backend", file=sys.stderr)
        return EXIT_VALIDATION
    if case is not RunCase.TWO_AGENT and asst_conf:
        print(f"error: {case.value} takes no assistant backend", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        records = load_store(records_path)
        sample = conf.get("sample", {})
        n = args.n if args.n is not None else sample.get("n")
        seed = args.seed if args.seed is not None else sample.get("seed", 13)
        if n is not None:
            records = sample_test_set(records, int(n), int(seed))

        physician_factory, phys_model = _backend_factory("physician", phys_conf)
        assistant_factory = None
        asst_model = None
        if asst_conf:
            assistant_factory, asst_model = _backend_factory("assistant", asst_conf)

        chapter_table = (ChapterTable.from_csv(conf["chapter_table"])
                         if conf.get("chapter_table") else default_chapter_table())
        code_table = (CodeTable.from_csv(conf["code_table"])
                      if conf.get("code_table") else None)

        spec = RunSpec(
            case=case,
            records=records,
            out_dir=Path(out_dir),
            physician_factory=physician_factory,
            assistant_factory=assistant_factory,
            physician_model=phys_model,
            assistant_model=asst_model,
            dialogue=DialogueConfig(
                max_turns=int(args.max_turns if args.max_turns is not None
                              else conf.get("max_turns", 40)),
                max_nudges=int(args.max_nudges if args.max_nudges is not None
                               else conf.get("max_nudges", 2)),
            ),
            chapter_table=chapter_table,
            code_table=code_table,
            concurrency=int(args.concurrency if args.concurrency is not None
                            else conf.get("concurrency", 1)),
            config_snapshot={"config_file": args.config, "case": case.value,
                             "records": str(records_path), "n": n, "seed": seed},
        )
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    def progress(record_id: str, session) -> None:
        mark = "ok " if session.discharged else "FAIL"
        print(f"[{mark}] {record_id}: {session.turn_count} turns "
              f"({session.outcome}{':' + session.failure_reason.value if session.failure_reason else ''})")

    summary = run_batch(spec, progress=progress if args.verbose else None)
    print(f"run complete: {summary.executed} executed, {summary.skipped} resumed/skipped, "
          f"{summary.discharged} discharged, {summary.failed} failed")
    threshold = (args.failure_threshold if args.failure_threshold is not None
                 else float(conf.get("failure_threshold", 0.5)))
    if summary.executed and summary.failure_rate > threshold:
        print(f"failure rate {summary.failure_rate:.2f} exceeds threshold {threshold:.2f}",
              file=sys.stderr)
        return EXIT_PARTIAL_FAILURE
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        reports = aggregate_run_dirs(args.run_dirs)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    csv_text = report_to_csv(reports)
    print(csv_text, end="")
    if args.out_dir:
        paths = write_report_files(reports, args.out_dir)
        print(f"wrote {paths['csv']}, {paths['json']}, {paths['histogram']}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import ServiceSettings, create_app

    conf = _load_config(args.config)
    records_path = args.records or conf.get("records") or _env("RECORDS")
    if not records_path or not Path(records_path).exists():
        print(f"error: record store not found: {records_path}", file=sys.stderr)
        return EXIT_VALIDATION

    asst_conf = dict(conf.get("assistant", {}))
    if args.assistant_kind:
        asst_conf["kind"] = args.assistant_kind
    if args.assistant_model:
        asst_conf["model"] = args.assistant_model
    if args.assistant_base_url:
        asst_conf["base_url"] = args.assistant_base_url
    if args.assistant_playbook:
        asst_conf["kind"] = "scripted"
        asst_conf["playbook"] = args.assistant_playbook
    assistant = None
    if asst_conf:
        factory, _ = _backend_factory("assistant", asst_conf)
        assistant = factory("*")

    physician = None
    phys_conf = dict(conf.get("physician", {}))
    if phys_conf:
        factory, _ = _backend_factory("physician", phys_conf)
        physician = factory("*")

    settings = ServiceSettings(
        records_path=str(records_path),
        sessions_dir=args.sessions_dir or conf.get("sessions_dir", "sessions"),
        runs_root=args.runs_root or conf.get("runs_root", "runs"),
        chapter_table_path=args.chapter_table or conf.get("chapter_table"),
        code_table_path=args.code_table or conf.get("code_table"),
        static_dir=args.static_dir or conf.get("static_dir"),
        max_turns=int(conf.get("max_turns", 40)),
        max_nudges=int(conf.get("max_nudges", 2)),
    )
    try:
        app = create_app(settings, assistant_backend=assistant, physician_backend=physician)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    import uvicorn
    host = args.host or _env("HOST", "127.0.0.1")
    port = int(args.port or _env("PORT", "8037"))
    uvicorn.run(app, host=host, port=port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wardround",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="parse, filter, and merge raw notes + diagnoses")
    p.add_argument("--notes", required=True)
    p.add_argument("--diagnoses", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="generate synthetic records (store or raw corpus)")
    p.add_argument("--seed", type=int, default=13)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--out")
    p.add_argument("--mean-codes", type=float, default=DEFAULT_MEAN_CODES)
    p.add_argument("--code-table")
    p.add_argument("--raw-notes")
    p.add_argument("--raw-diagnoses")
    p.add_argument("--deceased", type=int, default=0)
    p.add_argument("--malformed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run a batch of dialogue sessions")
    p.add_argument("--config")
    p.add_argument("--case", choices=[c.value for c in RunCase])
    p.add_argument("--records")
    p.add_argument("--out-dir")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-turns", type=int)
    p.add_argument("--max-nudges", type=int)
    p.add_argument("--concurrency", type=int)
    p.add_argument("--failure-threshold", type=float)
    p.add_argument("--verbose", action="store_true")
    for side in ("physician", "assistant"):
        p.add_argument(f"--{side}-kind", choices=["openai", "ollama", "scripted"])
        p.add_argument(f"--{side}-model")
        p.add_argument(f"--{side}-base-url", dest=f"{side}_base_url")
        p.add_argument(f"--{side}-playbook")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="aggregate run directories into a report")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="start the human-in-the-loop session service")
    p.add_argument("--config")
    p.add_argument("--records")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--sessions-dir")
    p.add_argument("--runs-root")
    p.add_argument("--static-dir")
    p.add_argument("--chapter-table")
    p.add_argument("--code-table")
    p.add_argument("--assistant-kind", choices=["openai", "ollama", "scripted"])
    p.add_argument("--assistant-model")
    p.add_argument("--assistant-base-url")
    p.add_argument("--assistant-playbook")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
