from typing import Dict, List, Tuple

from factrec import compose_explanation
from factrec.backends import BackendConfig, LlmJudge, create_backend
from factrec.config import load_domain_config
from factrec.metrics import AlignmentScores, St2ExpScores, nli_alignment, st2exp, stent_stcoh
from factrec.models import NliVerdict, StatementTriplet
from factrec.report import Marker, aggregate, rank_markers


def judge(statement: str, context: str) -> float:
    return 1.0 if statement in context else 0.0


def run() -> None:
    backend = create_backend(BackendConfig(kind="stub"))
    triplets: Tuple[StatementTriplet, ...] = (
        StatementTriplet(statement="it is warm", topic="comfort", sentiment="positive"),
    )
    text: str = compose_explanation(triplets)
    verdict: NliVerdict = backend.classify("it is warm", "it is cold")
    llm: St2ExpScores = st2exp(["it is warm"], ["it is warm"], text, text, judge)
    graded: St2ExpScores = st2exp(["a"], ["b"], "a", "b", LlmJudge(backend, "graded"))
    scores: AlignmentScores = stent_stcoh(nli_alignment(["a"], ["b"], backend.classify))
    markers: Dict[str, Marker] = rank_markers({"a": 0.5})
    topics: Tuple[str, ...] = load_domain_config("toys").topics
    cells: List[str] = [c.model_name for c in aggregate([]).cells]
