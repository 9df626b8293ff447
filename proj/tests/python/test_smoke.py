import json
import math
import os
from pathlib import Path

import pytest

import mergectx

DATA = Path(os.environ.get("MERGECTX_TEST_DATA", Path(__file__).resolve().parents[1] / "data"))

TEXTS = [json.loads(line)["text"] for line in (DATA / "chunks10.jsonl").read_text().splitlines() if line]
QUERY = "When did military instruction begin at the university?"


def tokens(chunks):
    return sum(len(c["text"].split()) for c in chunks)


def test_budget():
    assert mergectx.budget(TEXTS, 5.0) == 65


@pytest.mark.parametrize("strategy", ["symmetric", "asymmetric"])
@pytest.mark.parametrize("schedule", ["sequential", "hierarchical"])
def test_merge_fits_budget(strategy, schedule):
    out = mergectx.merge(TEXTS, QUERY, strategy=strategy, schedule=schedule, multiplier=5.0)
    assert tokens(out["context"]) <= out["budget"] == 65
    sources = sorted(s for c in out["context"] for s in c["sources"])
    assert sources == list(range(10))
    assert out["fusions"] == 10 - len(out["context"])
    assert out["dot"].startswith("digraph merge_trace {")


def test_merge_within_budget_is_identity():
    out = mergectx.merge(TEXTS, QUERY, multiplier=20.0)
    assert sorted(c["text"] for c in out["context"]) == sorted(TEXTS)
    assert out["fusions"] == 0


def test_topk_with_scores():
    top = mergectx.topk(TEXTS, QUERY, scores=[float(i) for i in range(10)], k=3)
    assert [c["id"] for c in top] == [9, 8, 7]
    with pytest.raises(mergectx.ConfigError):
        mergectx.topk(TEXTS, QUERY, scores=[1.0], k=3)


def test_scores_and_nll():
    scores = mergectx.lexical_scores(TEXTS, QUERY)
    assert len(scores) == 10 and scores[0] == max(scores)
    near = mergectx.conditional_nll("military instruction began", "records say military instruction began early")
    far = mergectx.conditional_nll("military instruction began", "the harbor froze that winter")
    assert 0 <= near < far


def test_extractive_fuse():
    fused = mergectx.extractive_fuse("Cadets drilled. Rain fell.", "Cadets drilled. Officers taught cadets.", "cadets")
    assert fused == "Cadets drilled. Officers taught cadets."


def test_metrics():
    assert mergectx.normalize_answer("The  University!") == "university"
    assert mergectx.exact_match("1912", ["1912"]) == 1
    assert math.isclose(mergectx.token_f1("in 1912", ["1912"]), 2 / 3)
    assert mergectx.substring_accuracy("in 1912", ["1912"]) == 1


def test_run_cli():
    code, out, err = mergectx.run_cli(["topk", "--chunks", str(DATA / "chunks10.jsonl"), "--query", QUERY, "--k", "2"])
    assert code == 0, err
    assert len(out.splitlines()) == 2
    code, _, _ = mergectx.run_cli(["nope"])
    assert code == 2
