import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dagsearch.databuild import (
    ClusterParams,
    Document,
    QABundle,
    QAPair,
    build_dataset,
    bundle,
    cluster_indices,
    curriculum_sort,
    dedup,
    filter_qa,
    generate_qa,
    kmeans_split,
    load_corpus,
    read_dataset,
    reduce_dimensions,
    write_dataset,
)
from dagsearch.errors import (
    CheckerUnavailable,
    EmbeddingDimMismatch,
    GeneratorUnavailable,
    UnparsableGeneration,
)
from dagsearch.llm import EndpointError
from dagsearch.reward import GoldAnswer, StubJudge as StubModel


def doc(i, body=None, emb=(1.0, 0.0), kind="news"):
    return Document(f"d{i}", kind, f"title {i}", body or f"body {i}", "2025-04-01", tuple(emb))


def cosine_distance(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return 1 - a @ b / (np.linalg.norm(a) * np.linalg.norm(b))


TRIPLES = [
    (1.0, 0.05, 0.0), (1.0, -0.05, 0.02), (0.98, 0.0, -0.04),
    (0.0, 1.0, 0.05), (0.03, 0.97, 0.0), (-0.04, 1.0, -0.02),
]
NINE_TIGHT = [(1.0, 0.01 * i, 0.005 * (i % 3)) for i in range(9)]


class TestDedup:
    def test_exact(self):
        assert [d.id for d in dedup([doc(1, "same"), doc(2, "same")])] == ["d1"]

    def test_case_and_whitespace(self):
        assert len(dedup([doc(1, "Hello  World\n"), doc(2, "hello world")])) == 1

    def test_disjoint(self):
        assert len(dedup([doc(i) for i in range(5)])) == 5

    @given(st.lists(st.sampled_from(["a", "A", "a ", "b", "B  b", "b b"]), max_size=10))
    def test_idempotent(self, bodies):
        docs = [doc(i, b) for i, b in enumerate(bodies)]
        once = dedup(docs)
        assert dedup(once) == once


class TestBundle:
    def test_two_triples(self):
        # oracle: the triples are separated under cosine distance
        intra = max(cosine_distance(a, b) for g in (TRIPLES[:3], TRIPLES[3:])
                    for a, b in itertools.combinations(g, 2))
        inter = min(cosine_distance(a, b) for a in TRIPLES[:3] for b in TRIPLES[3:])
        assert intra < 0.35 < inter
        bundles = bundle([doc(i, emb=e) for i, e in enumerate(TRIPLES)])
        assert sorted(sorted(d.id for d in b.documents) for b in bundles) == [
            ["d0", "d1", "d2"], ["d3", "d4", "d5"]]

    def test_oversized_cluster_split(self):
        bundles = bundle([doc(i, emb=e) for i, e in enumerate(NINE_TIGHT)])
        assert len(bundles) >= 3
        assert all(2 <= len(b.documents) <= 4 for b in bundles)
        ids = [d.id for b in bundles for d in b.documents]
        assert sorted(ids) == sorted(f"d{i}" for i in range(9))

    def test_identical_points_still_split(self):
        bundles = bundle([doc(i, emb=(1.0, 1.0)) for i in range(7)])
        assert sorted(len(b.documents) for b in bundles) == [3, 4]

    def test_isolated_point(self):
        assert bundle([doc(0)]) == []
        assert cluster_indices(np.array([[1.0, 0.0], [0.0, 1.0]])) == []

    def test_dimension_mismatch(self):
        with pytest.raises(EmbeddingDimMismatch):
            bundle([doc(0, emb=(1.0, 0.0)), doc(1, emb=(1.0, 0.0, 0.0))])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 1)),
                    min_size=2, max_size=30))
    def test_bundles_partition_a_subset(self, points):
        docs = [doc(i, emb=p) for i, p in enumerate(points)]
        bundles = bundle(docs, ClusterParams(distance_threshold=0.5))
        ids = [d.id for b in bundles for d in b.documents]
        assert len(ids) == len(set(ids))
        assert all(2 <= len(b.documents) <= 4 for b in bundles)

    def test_reduction(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(60, 80))
        assert reduce_dimensions(x, 50).shape == (60, 50)
        docs = [doc(i, emb=v) for i, v in enumerate(x)]
        bundles = bundle(docs, ClusterParams(distance_threshold=1.2, reduce_to=50))
        assert all(2 <= len(b.documents) <= 4 for b in bundles)


def _wcss(values, labels):
    return sum(((values[labels == c] - values[labels == c].mean()) ** 2).sum()
               for c in set(labels))


def best_two_partition_cost(values):
    n, best = len(values), np.inf
    for mask in range(1, 2 ** (n - 1)):
        labels = np.array([(mask >> i) & 1 for i in range(n)])
        best = min(best, _wcss(values, labels))
    return best


@pytest.mark.parametrize("seed", range(30))
def test_kmeans_matches_exhaustive_optimum(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    values = rng.normal(size=n) * rng.uniform(0.5, 5)
    if len(set(values)) < 2:
        pytest.skip("degenerate draw")
    parts = kmeans_split(values.reshape(-1, 1), 2, ClusterParams())
    labels = np.zeros(n, dtype=int)
    for c, idx in enumerate(parts):
        labels[idx] = c
    assert _wcss(values, labels) == pytest.approx(best_two_partition_cost(values), rel=1e-9, abs=1e-12)


BUNDLE = QABundle("b0001", tuple(doc(i, emb=e) for i, e in enumerate(TRIPLES[:3])))
GENERATED = json.dumps([
    {"question": "Which two events coincide?", "kind": "factual", "answer": "X and Y",
     "source_count": 3},
])


class TestGenerate:
    def test_one_pair(self):
        pairs = generate_qa(BUNDLE, StubModel("Here you go:\n" + GENERATED))
        assert len(pairs) == 1
        assert pairs[0].source_count == 3 and pairs[0].bundle_id == "b0001"
        assert pairs[0].gold == GoldAnswer.free_text("X and Y")

    def test_multiple_choice(self):
        reply = json.dumps([{"question": "Pick (A) x (B) y", "kind": "multiple_choice",
                             "options": ["b"], "source_count": 2}])
        assert generate_qa(BUNDLE, StubModel(reply))[0].gold == GoldAnswer.choices({"B"})

    def test_malformed_twice(self):
        model = StubModel("not json", "still not json")
        with pytest.raises(UnparsableGeneration):
            generate_qa(BUNDLE, model)
        assert len(model.prompts) == 2

    def test_prompt_contains_documents(self):
        model = StubModel(GENERATED)
        generate_qa(BUNDLE, model)
        assert all(d.body in model.prompts[0] for d in BUNDLE.documents)

    def test_unavailable(self):
        class Down:
            def complete(self, prompt):
                raise EndpointError("down")

        with pytest.raises(GeneratorUnavailable):
            generate_qa(BUNDLE, Down())


def pair(source_count=2, gold=None, question="q?"):
    return QAPair(question, gold or GoldAnswer.free_text("11.1%"), "factual", "b0001", source_count)


class TestFilter:
    def test_single_source(self):
        checker = StubModel("unused")
        assert filter_qa(pair(1), checker).reason == "single-source"
        assert checker.prompts == []

    def test_parametric_knowledge(self):
        checker = StubModel('{"answer": "It rose 11.1%", "confidence": 0.95}')
        assert filter_qa(pair(), checker).reason == "parametric-knowledge"

    def test_low_confidence_guess_accepted(self):
        checker = StubModel('{"answer": "11.1%", "confidence": 0.3}', "NO")
        assert filter_qa(pair(), checker, BUNDLE.documents).accepted

    def test_accept(self):
        checker = StubModel('{"answer": "I do not know", "confidence": 0.1}', "NO")
        decision = filter_qa(pair(), checker, BUNDLE.documents)
        assert decision.accepted and len(checker.prompts) == 2

    def test_single_document_suffices(self):
        checker = StubModel('{"answer": "?", "confidence": 0.0}', "YES")
        assert filter_qa(pair(), checker, BUNDLE.documents).reason == "single-source"

    def test_mcq_closed_book(self):
        gold = GoldAnswer.choices({"C"})
        checker = StubModel('{"answer": "The answer is C", "confidence": 0.9}')
        assert filter_qa(pair(gold=gold), checker).reason == "parametric-knowledge"

    def test_checker_unavailable(self):
        class Down:
            def complete(self, prompt):
                raise EndpointError("down")

        with pytest.raises(CheckerUnavailable):
            filter_qa(pair(), Down())


class TestCurriculum:
    def test_order(self):
        pairs = [pair(2, question="a"), pair(4, question="b"), pair(3, question="c")]
        assert [p.source_count for p in curriculum_sort(pairs)] == [2, 3, 4]

    def test_stable(self):
        pairs = [pair(2, question=q) for q in ("xx", "yy", "zz")]
        assert curriculum_sort(pairs) == pairs

    def test_empty(self):
        assert curriculum_sort([]) == []

    @given(st.lists(st.tuples(st.integers(2, 4), st.text(max_size=5)), max_size=15))
    def test_non_decreasing(self, rows):
        ordered = curriculum_sort([pair(c, question=q) for c, q in rows])
        counts = [p.source_count for p in ordered]
        assert counts == sorted(counts)


def test_corpus_io_and_pipeline(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    lines = []
    for i, e in enumerate(TRIPLES + [TRIPLES[0]]):
        body = "duplicate body" if i in (0, 6) else f"Body of document {i}."
        kind = "academic" if i % 2 else "news"
        (corpus / f"doc{i}.txt").write_text(
            f"id: d{i}\nsource_kind: {kind}\ntitle: T{i}\npublished: 2025-04-0{i + 1}\n\n{body}\n")
        lines.append(json.dumps({"id": f"d{i}", "embedding": list(e)}))
    (tmp_path / "emb.jsonl").write_text("\n".join(lines))

    docs = load_corpus(corpus, tmp_path / "emb.jsonl")
    assert len(docs) == 7 and docs[1].source_kind == "academic" and docs[1].embedding == TRIPLES[1]

    generator = StubModel(GENERATED)
    checker = StubModel('{"answer": "no idea", "confidence": 0.0}', "NO")
    pairs, stats = build_dataset(docs, generator, checker)
    assert (stats.documents, stats.unique, stats.bundles) == (7, 6, 2)
    assert stats.accepted == len(pairs) == 2
    assert all(p.source_count >= 2 for p in pairs)

    out = tmp_path / "dataset.jsonl"
    write_dataset(pairs, out)
    assert read_dataset(out) == pairs
