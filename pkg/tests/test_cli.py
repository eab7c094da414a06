import json
from pathlib import Path
from typing import Dict, List

import pytest

from factrec.cli import main
from factrec.datasets import read_benchmark, read_metric_records, write_benchmark, write_generated
from factrec.models import GeneratedExplanation, MetricRecord
from tests.samples import SWEATER_EXPLANATION, make_records

FIXTURES = Path(__file__).parent / "fixtures"
RUN = str(FIXTURES / "run_stub.json")


def run(*argv: str) -> int:
    return main(["--config", RUN, "--backend-stub", "-q", *argv])


def by_metric(records: List[MetricRecord], model: str) -> Dict[str, List[MetricRecord]]:
    out: Dict[str, List[MetricRecord]] = {}
    for r in records:
        if r.model_name == model:
            out.setdefault(r.metric_name, []).append(r)
    return out


@pytest.fixture
def benchmark(tmp_path: Path) -> Path:
    out = tmp_path / "benchmark.jsonl"
    assert run("extract", "--reviews", str(FIXTURES / "reviews.jsonl"), "--out", str(out)) == 0
    return out


def test_extract_small_corpus(tmp_path: Path) -> None:
    out = tmp_path / "bench.jsonl"
    assert run("extract", "--reviews", str(FIXTURES / "reviews_3.jsonl"), "--out", str(out)) == 0
    records = read_benchmark(out)
    assert len(records) <= 3
    assert [r.interaction.user_id for r in records] == ["A1", "A2"]
    assert records[0].ground_truth_explanation == SWEATER_EXPLANATION
    assert records[1].triplets[1].topic == "size"


def test_extract_summary(benchmark: Path) -> None:
    records = read_benchmark(benchmark)
    assert len(records) == 8
    assert {r.extraction_meta.prompt_template_id for r in records} == {"extract-v1"}
    summary = json.loads(benchmark.with_name("benchmark.summary.json").read_text(encoding="utf-8"))
    assert summary == {
        "interactions": 10,
        "records": 8,
        "excluded_failed": 1,
        "excluded_empty": 1,
        "dropped_items": 1,
        "coerced_topics": 0,
        "malformed_lines": 1,
        "reviews_without_text": 1,
        "reviews_too_short": 0,
    }


def test_extract_is_deterministic(tmp_path: Path, benchmark: Path) -> None:
    outputs = []
    for parallelism in ("1", "8"):
        out = tmp_path / f"p{parallelism}" / "benchmark.jsonl"
        argv = ["--parallelism", parallelism, "extract", "--reviews", str(FIXTURES / "reviews.jsonl")]
        assert run(*argv, "--out", str(out)) == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1] == benchmark.read_bytes()


def test_topics(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    reviews = tmp_path / "reviews.jsonl"
    reviews.write_text(
        "".join(
            json.dumps({"reviewerID": f"u{i}", "asin": "x", "overall": 4, "reviewText": text}) + "\n"
            for i, text in enumerate(["Runs small.", "Love the color.", "Too thin."])
        )
    )
    out = tmp_path / "domain.json"
    code = run("topics", "--reviews", str(reviews), "--domain-name", "clothing", "--out", str(out))
    assert code == 0
    printed = capsys.readouterr().out.split()
    assert printed[:3] == ["fit", "size", "material"]
    assert len(printed) == 10
    assert json.loads(out.read_text(encoding="utf-8"))["topics"] == printed


def test_topics_incomplete(tmp_path: Path) -> None:
    reviews = tmp_path / "reviews.jsonl"
    reviews.write_text(json.dumps({"reviewerID": "u", "asin": "x", "overall": 4, "reviewText": "Ok."}) + "\n")
    code = run("topics", "--reviews", str(reviews), "--domain-name", "clothing", "-k", "12")
    assert code == 3


def test_compose(tmp_path: Path, benchmark: Path) -> None:
    config = tmp_path / "run.json"
    config.write_text(
        json.dumps(
            {
                "domain_config": "clothes",
                "composer": {
                    "positive_prefix": "Pros: ",
                    "negative_prefix": "Cons: ",
                    "degraded_negative_prefix": "Only cons: ",
                    "neutral_prefix": "Neutral: ",
                },
            }
        )
    )
    out = tmp_path / "recomposed.jsonl"
    assert main(["--config", str(config), "-q", "compose", "--benchmark", str(benchmark), "--out", str(out)]) == 0
    before, after = read_benchmark(benchmark), read_benchmark(out)
    assert [r.triplets for r in before] == [r.triplets for r in after]
    assert after[0].ground_truth_explanation.startswith("Pros: the design is really cute.")


def test_split_and_stats(tmp_path: Path, benchmark: Path, capsys: pytest.CaptureFixture[str]) -> None:
    split_dir = tmp_path / "splits"
    assert run("split", "--benchmark", str(benchmark), "--out-dir", str(split_dir)) == 0
    sizes = json.loads(capsys.readouterr().out)
    assert sizes == {"train": 6, "valid": 1, "test": 1}
    ids = sorted(r.interaction_id for r in read_benchmark(benchmark))
    parts = [r.interaction_id for name in ("train", "valid", "test") for r in read_benchmark(split_dir / f"{name}.jsonl")]
    assert sorted(parts) == ids

    assert run("stats", "--benchmark", str(benchmark), "--split-dir", str(split_dir)) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["interactions"] == 8
    assert stats["total_statements"] == 15
    assert stats["unique_statements"] == 15
    assert (stats["train"], stats["valid"], stats["test"]) == (6, 1, 1)
    assert stats["excluded"] == 2


def test_split_seed_override(tmp_path: Path, benchmark: Path) -> None:
    for seed in ("1", "2"):
        assert run("--seed", seed, "split", "--benchmark", str(benchmark), "--out-dir", str(tmp_path / seed)) == 0
    again = tmp_path / "again"
    assert run("--seed", "1", "split", "--benchmark", str(benchmark), "--out-dir", str(again)) == 0
    assert (tmp_path / "1" / "test.jsonl").read_bytes() == (again / "test.jsonl").read_bytes()


def test_evaluate_and_report(tmp_path: Path, benchmark: Path, capsys: pytest.CaptureFixture[str]) -> None:
    records = read_benchmark(benchmark)
    oracle = tmp_path / "oracle.jsonl"
    write_generated(
        oracle,
        [GeneratedExplanation(interaction_id=r.interaction_id, model_name="oracle", text=r.ground_truth_explanation) for r in records],
    )
    silent = tmp_path / "silent.jsonl"
    write_generated(
        silent,
        [GeneratedExplanation(interaction_id=r.interaction_id, model_name="silent", text="") for r in records],
    )
    metrics = tmp_path / "metrics.jsonl"
    argv = ["evaluate", "--benchmark", str(benchmark), "--generated", str(oracle), str(silent), "--out", str(metrics)]
    assert run(*argv) == 0

    rows = read_metric_records(metrics)
    assert {r.dataset for r in rows} == {"clothes"}
    oracle_rows = by_metric(rows, "oracle")
    assert len(oracle_rows["st2exp_p"]) == 8
    assert all(r.value == 1.0 for name in ("st2exp_p", "st2exp_r", "st2exp_f1") for r in oracle_rows[name])
    assert all(r.value == pytest.approx(0.98) for r in oracle_rows["stent_p"])
    assert all(r.value == pytest.approx(1.0) for r in oracle_rows["bleu4"])
    silent_rows = by_metric(rows, "silent")
    assert all(r.degenerate and r.value is None for r in silent_rows["stent_p"])
    assert all(not r.degenerate and r.value == 0.0 for r in silent_rows["bleu4"])

    out_dir = tmp_path / "report"
    assert run("report", "--metrics", str(metrics), "--out-dir", str(out_dir)) == 0
    assert sorted(p.name for p in out_dir.iterdir()) == [
        "correlation_points.csv",
        "report.csv",
        "report.jsonl",
        "report.md",
    ]
    markdown = (out_dir / "report.md").read_text(encoding="utf-8")
    assert "## clothes" in markdown
    assert "| st2exp_p | **1.0000<sub>0.0000</sub>** | n/a |" in markdown

    assert run("report", "--metrics", str(metrics)) == 0
    assert "| metric | oracle | silent |" in capsys.readouterr().out


def test_self_evaluation_of_fifty_records(tmp_path: Path) -> None:
    path = tmp_path / "benchmark.jsonl"
    records = make_records(50)
    write_benchmark(path, records)
    gen = tmp_path / "truth.jsonl"
    write_generated(
        gen,
        [GeneratedExplanation(interaction_id=r.interaction_id, model_name="truth", text=r.ground_truth_explanation) for r in records],
    )
    out = tmp_path / "metrics.jsonl"
    assert run("evaluate", "--benchmark", str(path), "--generated", str(gen), "--out", str(out)) == 0
    rows = by_metric(read_metric_records(out), "truth")
    for name in ("st2exp_p", "st2exp_r", "st2exp_f1", "stent_p", "stent_r"):
        assert len(rows[name]) == 50
    assert all(r.value == 1.0 for name in ("st2exp_p", "st2exp_r", "st2exp_f1") for r in rows[name])
    assert all(r.value == pytest.approx(0.98, abs=1e-9) for name in ("stent_p", "stent_r") for r in rows[name])


def test_evaluate_falls_back_on_blank_composed_statement(tmp_path: Path) -> None:
    path = tmp_path / "benchmark.jsonl"
    records = make_records(2)
    write_benchmark(path, records)
    gen = tmp_path / "model.jsonl"
    write_generated(
        gen,
        [
            GeneratedExplanation(
                interaction_id=r.interaction_id,
                model_name="model",
                text="The user would appreciate this product because it is warm, , soft and cute.",
            )
            for r in records
        ],
    )
    out = tmp_path / "metrics.jsonl"
    assert run("evaluate", "--benchmark", str(path), "--generated", str(gen), "--out", str(out)) == 0
    assert len(by_metric(read_metric_records(out), "model")["st2exp_p"]) == 2


def test_evaluate_is_deterministic(tmp_path: Path, benchmark: Path) -> None:
    records = read_benchmark(benchmark)
    gen = tmp_path / "model.jsonl"
    write_generated(
        gen,
        [GeneratedExplanation(interaction_id=r.interaction_id, model_name="model", text=r.interaction.review_text) for r in records],
    )
    outputs = []
    for parallelism in ("1", "8"):
        out = tmp_path / f"metrics{parallelism}.jsonl"
        argv = ["--parallelism", parallelism, "evaluate", "--benchmark", str(benchmark), "--generated", str(gen)]
        assert run(*argv, "--out", str(out)) == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


def test_missing_config(tmp_path: Path) -> None:
    assert main(["--config", str(tmp_path / "absent.json"), "stats", "--benchmark", "x"]) == 1


def test_missing_input(tmp_path: Path) -> None:
    assert run("stats", "--benchmark", str(tmp_path / "absent.jsonl")) == 1


def test_incompatible_benchmark(tmp_path: Path) -> None:
    path = tmp_path / "benchmark.jsonl"
    write_benchmark(path, make_records(3))
    text = path.read_text(encoding="utf-8").replace('"schema_version":1', '"schema_version":2')
    path.write_text(text, encoding="utf-8")
    assert run("stats", "--benchmark", str(path)) == 2


def test_id_join_failure(tmp_path: Path) -> None:
    path = tmp_path / "benchmark.jsonl"
    write_benchmark(path, make_records(3))
    gen = tmp_path / "model.jsonl"
    write_generated(gen, [GeneratedExplanation(interaction_id="nope", model_name="model", text="Warm.")])
    argv = ["evaluate", "--benchmark", str(path), "--generated", str(gen), "--out", str(tmp_path / "m.jsonl")]
    assert run(*argv) == 2


def test_unreachable_backend(tmp_path: Path) -> None:
    config = tmp_path / "run.json"
    config.write_text(
        json.dumps(
            {
                "domain_config": "clothes",
                "extractor_backend": {"base_url": "http://127.0.0.1:9", "max_retries": 0, "timeout": 2},
            }
        )
    )
    argv = ["--config", str(config), "-q", "extract", "--reviews", str(FIXTURES / "reviews_3.jsonl")]
    assert main([*argv, "--out", str(tmp_path / "b.jsonl")]) == 3


def test_evaluate_optional_metrics(tmp_path: Path, benchmark: Path) -> None:
    config = tmp_path / "run.json"
    config.write_text(
        json.dumps(
            {
                "domain_config": "clothes",
                "dataset": "clothes-extra",
                "stub_fixtures": str(FIXTURES / "stub_replies.json"),
                "review_reference": True,
                "emit_stcoh_f1": True,
            }
        )
    )
    records = read_benchmark(benchmark)
    gen = tmp_path / "oracle.jsonl"
    write_generated(
        gen,
        [GeneratedExplanation(interaction_id=r.interaction_id, model_name="oracle", text=r.ground_truth_explanation) for r in records],
    )
    out = tmp_path / "metrics.jsonl"
    argv = ["--config", str(config), "--backend-stub", "-q", "evaluate", "--benchmark", str(benchmark)]
    assert main([*argv, "--generated", str(gen), "--out", str(out)]) == 0
    rows = by_metric(read_metric_records(out), "oracle")
    assert len(rows["stcoh_f1"]) == 8
    assert all(r.value == pytest.approx(0.97) for r in rows["stcoh_f1"])
    assert {"review_bleu4", "review_rouge1", "review_rouge2", "review_rougeL"} <= set(rows)
    assert all(r.dataset == "clothes-extra" for r in rows["review_bleu4"])
