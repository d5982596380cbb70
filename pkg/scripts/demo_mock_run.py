#!/usr/bin/env python3
"""End-to-end demo on synthetic data with scripted backends.

Generates a record store, runs the three batch cases (complaint-only
baseline, two-agent, full-note baseline) with deterministic mock agents, and
writes the aggregate report.  Everything lands under --workdir.

    python scripts/demo_mock_run.py --workdir demo
"""

import argparse
import json
import sys
from pathlib import Path

from wardround.cli import main as cli
from wardround.orchestrator import TOOL_BASELINE, TOOL_DIALOGUE, render_tool_call
from wardround.records import load_store


def build_playbooks(store_path: Path, workdir: Path) -> dict:
    """Per-record scripts: the mock physician predicts part of the gold set."""
    records = load_store(store_path)
    paths = {}
    for case, tool, dialog in (
        ("baseline_complaint", TOOL_BASELINE, False),
        ("two_agent", TOOL_DIALOGUE, True),
        ("baseline_full_note", TOOL_BASELINE, False),
    ):
        entries = {}
        for i, rec in enumerate(records):
            # complaint-only guesses one code, note-informed runs guess three
            depth = 1 if case == "baseline_complaint" else 3
            codes = ", ".join(c.raw for c in rec.gold_codes[:depth])
            call = render_tool_call(tool, "working diagnosis", codes)
            if dialog:
                script = ["Dr. Lee, your initial evaluation please.",
                          "Anything on imaging or labs that changes the picture?",
                          call]
            else:
                script = [call]
            entries[rec.record_id] = script
        path = workdir / f"playbook_{case}.json"
        path.write_text(json.dumps({"model": "mock-physician", "records": entries}, indent=2))
        paths[case] = path
    assistant = workdir / "playbook_assistant.json"
    assistant.write_text(json.dumps({
        "model": "mock-assistant",
        "default": ["Structured summary: key symptoms noted, preliminary diagnosis follows.",
                    "No additional red flags on review.",
                    "Acknowledged."],
    }, indent=2))
    paths["assistant"] = assistant
    return paths


def run(workdir: Path, n: int, seed: int) -> int:
    workdir.mkdir(parents=True, exist_ok=True)
    store = workdir / "store.jsonl"
    if cli(["synth", "--seed", str(seed), "--n", str(n), "--out", str(store)]) != 0:
        return 1
    playbooks = build_playbooks(store, workdir)

    run_dirs = []
    for case in ("baseline_complaint", "two_agent", "baseline_full_note"):
        out_dir = workdir / f"run_{case}"
        argv = ["run", "--case", case, "--records", str(store),
                "--out-dir", str(out_dir), "--verbose",
                "--physician-kind", "scripted",
                "--physician-playbook", str(playbooks[case])]
        if case == "two_agent":
            argv += ["--assistant-kind", "scripted",
                     "--assistant-playbook", str(playbooks["assistant"])]
        code = cli(argv)
        if code != 0:
            return code
        run_dirs.append(str(out_dir))

    return cli(["eval", *run_dirs, "--out-dir", str(workdir / "reports")])


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", default="demo")
    parser.add_argument("--n", type=int, default=20)
    parser.add_argument("--seed", type=int, default=13)
    args = parser.parse_args()
    sys.exit(run(Path(args.workdir), args.n, args.seed))
