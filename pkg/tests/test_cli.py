from __future__ import annotations

import json
from pathlib import Path

import pytest

from declsearch.cli import main

FIXTURES = Path(__file__).parent.parent / "fixtures"


@pytest.fixture(scope="module")
def informal_corpus(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("cli") / "corpus_informal.jsonl"
    assert main(["informalize", "--corpus", str(FIXTURES / "corpus_raw.jsonl"), "--out", str(out)]) == 0
    return out


class TestIngest:
    def test_valid_corpus(self, capsys):
        assert main(["ingest", "--corpus", str(FIXTURES / "corpus_raw.jsonl")]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["records"] == 50 and doc["acyclic"] is True

    def test_missing_file_is_diagnostic_exit(self, capsys):
        assert main(["ingest", "--corpus", "/nonexistent.jsonl"]) == 1
        assert "error:" in capsys.readouterr().err


class TestInformalizeAndIndex:
    def test_informalize_fills_descriptions(self, informal_corpus):
        rows = [json.loads(l) for l in informal_corpus.read_text().splitlines()]
        assert all(row["informal"] for row in rows)

    def test_index_then_search_uses_saved_index(self, informal_corpus, tmp_path, capsys):
        index_path = tmp_path / "corpus.idx"
        assert main(["index", "--corpus", str(informal_corpus), "--out", str(index_path)]) == 0
        capsys.readouterr()
        code = main(
            [
                "search", "--corpus", str(informal_corpus), "--index", str(index_path),
                "--query", "result about compact", "--k", "5",
            ]
        )
        assert code == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
        assert len(lines) == 5

    def test_search_no_rerank(self, informal_corpus, capsys):
        code = main(
            ["search", "--corpus", str(informal_corpus), "--query", "anything", "--k", "3", "--no-rerank"]
        )
        assert code == 0
        assert len(capsys.readouterr().out.splitlines()) == 3


class TestReason:
    def test_reason_single_budget_deterministic(self, informal_corpus, tmp_path):
        outs = []
        for i in range(2):
            out = tmp_path / f"reason_{i}.json"
            code = main(
                [
                    "reason", "--corpus", str(informal_corpus),
                    "--formal", "theorem t : compact open",
                    "--informal", "compact and open interact",
                    "--budget", "1", "--out", str(out),
                ]
            )
            assert code == 0
            outs.append(out.read_text())
        assert outs[0] == outs[1]
        doc = json.loads(outs[0])
        assert doc["status"] in ("good", "fail")
        assert doc["ranking"]


class TestEval:
    def test_eval_qr_prints_tables(self, capsys):
        code = main(
            [
                "eval", "qr",
                "--runs", str(FIXTURES / "runs" / "system_one.jsonl"),
                "--bench", str(FIXTURES / "bench_qr.jsonl"),
                "--k", "1,5,10",
            ]
        )
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["overall"]["ndcg"]["10"] == 1.0  # system_one always ranks gt first

    def test_eval_qr_fair_subset(self, tmp_path, capsys):
        names = [json.loads(l)["decl_name"] for l in (FIXTURES / "bench_qr.jsonl").read_text().splitlines()]
        snapshot_file = tmp_path / "snap.txt"
        snapshot_file.write_text("\n".join(names[:2]) + "\n")
        code = main(
            [
                "eval", "qr",
                "--runs", str(FIXTURES / "runs" / "system_one.jsonl"),
                "--bench", str(FIXTURES / "bench_qr.jsonl"),
                "--snapshots", str(snapshot_file),
                "--subset-mode", "fair",
            ]
        )
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["overall"]["n"] < 18

    def test_eval_mpr(self, capsys):
        code = main(
            [
                "eval", "mpr",
                "--runs", str(FIXTURES / "runs" / "mpr_system.jsonl"),
                "--bench", str(FIXTURES / "bench_mpr.jsonl"),
            ]
        )
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert set(doc) >= {"group_recall", "covered_main_only", "covered_main_or_alt"}

    def test_bad_k_is_diagnostic(self, capsys):
        code = main(
            [
                "eval", "qr",
                "--runs", str(FIXTURES / "runs" / "system_one.jsonl"),
                "--bench", str(FIXTURES / "bench_qr.jsonl"),
                "--k", "1,zap",
            ]
        )
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestJudge:
    RUNS = [str(FIXTURES / "runs" / f"{s}.jsonl") for s in ("system_one", "system_two", "system_three", "system_four")]

    def test_seed_reproducible_byte_identical(self, informal_corpus, tmp_path):
        outs = []
        for i in range(2):
            out = tmp_path / f"judge_{i}.json"
            code = main(
                [
                    "judge", "--runs", *self.RUNS,
                    "--bench", str(FIXTURES / "bench_qr.jsonl"),
                    "--corpus", str(informal_corpus),
                    "--rounds", "3", "--seed", "7", "--out", str(out),
                ]
            )
            assert code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        doc = json.loads(outs[0])
        assert doc["judgment_count"] == 18 * 3
        assert len(doc["assignments"]) == 18 * 3

    def test_different_seed_changes_assignments(self, informal_corpus, tmp_path):
        docs = []
        for seed in ("7", "8"):
            out = tmp_path / f"judge_s{seed}.json"
            main(
                [
                    "judge", "--runs", *self.RUNS,
                    "--bench", str(FIXTURES / "bench_qr.jsonl"),
                    "--corpus", str(informal_corpus),
                    "--seed", seed, "--out", str(out),
                ]
            )
            docs.append(json.loads(out.read_text())["assignments"])
        assert docs[0] != docs[1]

    def test_single_run_file_is_usage_error(self, informal_corpus):
        code = main(
            [
                "judge", "--runs", self.RUNS[0],
                "--bench", str(FIXTURES / "bench_qr.jsonl"),
                "--corpus", str(informal_corpus),
            ]
        )
        assert code == 2


class TestProve:
    def test_prove_writes_outcomes(self, informal_corpus, tmp_path, capsys):
        out = tmp_path / "outcomes.jsonl"
        code = main(
            [
                "prove", "--corpus", str(informal_corpus),
                "--problems", str(FIXTURES / "problems.jsonl"),
                "--out", str(out), "--mode", "none",
            ]
        )
        assert code == 0
        docs = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(docs) == 3 and all(d["solved"] for d in docs)

    def test_prove_always_sorry_budget(self, informal_corpus, tmp_path):
        out = tmp_path / "outcomes.jsonl"
        code = main(
            [
                "prove", "--corpus", str(informal_corpus),
                "--problems", str(FIXTURES / "problems.jsonl"),
                "--out", str(out), "--mode", "none", "--always-sorry", "--rounds", "8",
            ]
        )
        assert code == 0
        docs = [json.loads(l) for l in out.read_text().splitlines()]
        assert all(len(d["attempts"]) == 9 for d in docs)


class TestUsage:
    def test_unknown_subcommand_exit_2(self):
        assert main(["frobnicate"]) == 2

    def test_unknown_flag_exit_2(self):
        assert main(["ingest", "--corpus", "x", "--bogus"]) == 2

    def test_no_args_exit_2(self):
        assert main([]) == 2
