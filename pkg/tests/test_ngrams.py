import json
from pathlib import Path
from typing import Any, Dict, List

import pytest

from factrec.metrics import NGRAM_METRICS, bleu4, ngram_baselines, ngram_tokens

GOLDEN: List[Dict[str, Any]] = json.loads(
    (Path(__file__).parent / "fixtures" / "ngram_golden.json").read_text(encoding="utf-8")
)


@pytest.mark.parametrize("case", GOLDEN, ids=[c["candidate"] for c in GOLDEN])
def test_golden(case: Dict[str, Any]) -> None:
    scores = ngram_baselines(case["candidate"], case["reference"])
    assert set(scores) == set(NGRAM_METRICS)
    for name in NGRAM_METRICS:
        assert scores[name] == pytest.approx(case[name], abs=1e-6), name


def test_identity_is_exact() -> None:
    text = "The zipper broke after a week, but the fabric is warm."
    assert ngram_baselines(text, text) == {name: 1.0 for name in NGRAM_METRICS}


def test_tokens() -> None:
    assert ngram_tokens("Great value, works WELL!") == ("great", "value", "works", "well")
    assert ngram_tokens("4.5 stars") == ("4", "5", "stars")
    assert ngram_tokens(" ... ") == ()


def test_empty_inputs() -> None:
    assert ngram_baselines("", "the reference") == {name: 0.0 for name in NGRAM_METRICS}
    assert ngram_baselines("the candidate", "!!") == {name: 0.0 for name in NGRAM_METRICS}
    assert bleu4((), ("a",)) == 0.0


def test_bleu_smoothing_only_when_needed() -> None:
    # all higher-order precisions non-zero: unsmoothed geometric mean
    assert bleu4(("a", "b", "c", "d"), ("a", "b", "c", "d")) == 1.0
    # a zero 4-gram count would zero the score without smoothing
    assert bleu4(("a", "b", "c", "x"), ("a", "b", "c", "d")) > 0.0
