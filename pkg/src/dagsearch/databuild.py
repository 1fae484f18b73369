"""Training-set construction from a document corpus.

Pipeline: dedup -> cluster into 2-4 document bundles -> generate multi-hop
QA candidates per bundle -> filter -> curriculum order. Embeddings are read
from a sidecar file; no embedding model runs here.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from .errors import (
    CheckerUnavailable,
    DagSearchError,
    EmbeddingDimMismatch,
    GeneratorUnavailable,
    UnparsableGeneration,
)
from .reward import GoldAnswer, extract_options, score_answer_mcq

log = logging.getLogger(__name__)

MIN_BUNDLE, MAX_BUNDLE = 2, 4
QA_KINDS = ("factual", "causal", "multiple_choice")
GENERATION_ATTEMPTS = 2

GENERATION_PROMPT = """\
Below are {n} documents. Write multi-hop questions that can only be answered
by combining evidence from at least two of them. Cover factual, causal and
multiple_choice questions.

Return a JSON array. Each element must have the keys:
  "question": the question text (for multiple_choice, list the options A-F),
  "kind": one of "factual", "causal", "multiple_choice",
  "answer": the reference answer text (factual and causal),
  "options": the list of correct option letters (multiple_choice),
  "source_count": how many of the documents the question needs.

{documents}

JSON:"""

CLOSED_BOOK_PROMPT = """\
Answer the question from your own knowledge only; you have no documents.
Reply as JSON: {{"answer": "...", "confidence": <number between 0 and 1>}}

Question: {question}"""

SINGLE_SOURCE_PROMPT = """\
Can the question below be answered completely from ONE of these documents
alone? Reply YES or NO.

{documents}

Question: {question}"""

CONFIDENCE_THRESHOLD = 0.8


@dataclass(frozen=True)
class Document:
    id: str
    source_kind: str  # "news" | "academic"
    title: str
    body: str
    published: str = ""
    embedding: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source_kind": self.source_kind,
            "title": self.title,
            "published": self.published,
        }


@dataclass(frozen=True)
class QABundle:
    id: str
    documents: tuple[Document, ...]
    theme: str = ""

    def __post_init__(self):
        if not MIN_BUNDLE <= len(self.documents) <= MAX_BUNDLE:
            raise ValueError(f"bundle of {len(self.documents)} documents")


@dataclass(frozen=True)
class QAPair:
    question: str
    gold: GoldAnswer
    kind: str
    bundle_id: str
    source_count: int

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "gold": self.gold.to_dict(),
            "kind": self.kind,
            "bundle_id": self.bundle_id,
            "source_count": self.source_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> QAPair:
        return cls(d["question"], GoldAnswer.from_dict(d["gold"]), d["kind"],
                   d["bundle_id"], d["source_count"])


@dataclass(frozen=True)
class FilterDecision:
    accepted: bool
    reason: str = ""


@dataclass(frozen=True)
class ClusterParams:
    distance_threshold: float = 0.35
    seed: int = 0
    max_iter: int = 50
    n_init: int = 10
    reduce_to: int | None = None  # optional PCA reduction before clustering


class TextModel(Protocol):
    def complete(self, prompt: str) -> str: ...


# corpus io


def _normalize(body: str) -> str:
    return " ".join(body.lower().split())


def load_corpus(directory: str | Path, embeddings_path: str | Path | None = None) -> list[Document]:
    """Read ``key: value`` header lines, a blank line, then the body, per file.

    Embeddings sidecar: JSON lines ``{"id": ..., "embedding": [...]}``.
    """
    vectors: dict[str, tuple[float, ...]] = {}
    if embeddings_path is not None:
        for line in Path(embeddings_path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                vectors[rec["id"]] = tuple(float(x) for x in rec["embedding"])

    docs = []
    for path in sorted(Path(directory).iterdir()):
        if not path.is_file() or path.name.startswith("."):
            continue
        header, _, body = path.read_text(encoding="utf-8").partition("\n\n")
        meta = {}
        for line in header.splitlines():
            key, _, value = line.partition(":")
            meta[key.strip().lower()] = value.strip()
        doc_id = meta.get("id", path.stem)
        docs.append(
            Document(
                id=doc_id,
                source_kind=meta.get("source_kind", "news"),
                title=meta.get("title", ""),
                body=body.strip(),
                published=meta.get("published", ""),
                embedding=vectors.get(doc_id, ()),
            )
        )
    return docs


def write_dataset(pairs: Iterable[QAPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_dict(), ensure_ascii=False) + "\n")


def read_dataset(path: str | Path) -> list[QAPair]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [QAPair.from_dict(json.loads(line)) for line in lines if line.strip()]


# dedup and clustering


def dedup(docs: Sequence[Document]) -> list[Document]:
    seen: set[str] = set()
    kept = []
    for doc in docs:
        digest = hashlib.sha256(_normalize(doc.body).encode()).hexdigest()
        if digest not in seen:
            seen.add(digest)
            kept.append(doc)
    return kept


def reduce_dimensions(matrix: np.ndarray, dims: int = 50) -> np.ndarray:
    """PCA projection to at most ``dims`` components."""
    centered = matrix - matrix.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[: min(dims, vt.shape[0])].T


def _embedding_matrix(docs: Sequence[Document]) -> np.ndarray:
    dims = {len(d.embedding) for d in docs}
    if len(dims) != 1 or 0 in dims:
        raise EmbeddingDimMismatch(f"embedding dimensions {sorted(dims)} are not uniform")
    return np.asarray([d.embedding for d in docs], dtype=float)


def kmeans_split(points: np.ndarray, k: int, params: ClusterParams) -> list[np.ndarray]:
    """Index arrays of the ``k`` K-means parts (empty parts dropped)."""
    model = KMeans(n_clusters=k, n_init=params.n_init, max_iter=params.max_iter,
                   random_state=params.seed)
    with warnings.catch_warnings():
        # duplicate points collapse clusters; the caller's fallback handles that
        warnings.simplefilter("ignore", ConvergenceWarning)
        labels = model.fit_predict(points)
    return [np.flatnonzero(labels == c) for c in range(k) if np.any(labels == c)]


def _chunk_along_axis(points: np.ndarray, k: int) -> list[np.ndarray]:
    """Order points along their main axis and cut into ``k`` near-equal runs."""
    centered = points - points.mean(axis=0)
    if np.allclose(centered, 0):
        order = np.arange(len(points))
    else:
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        order = np.argsort(centered @ vt[0], kind="stable")
    return [np.sort(part) for part in np.array_split(order, k)]


def _split_oversized(points: np.ndarray, idx: np.ndarray, params: ClusterParams) -> list[np.ndarray]:
    if len(idx) <= MAX_BUNDLE:
        return [idx]
    k = math.ceil(len(idx) / MAX_BUNDLE)
    parts = kmeans_split(points[idx], k, params)
    # a singleton or non-splitting partition would lose documents or loop
    if len(parts) < 2 or any(len(p) < MIN_BUNDLE for p in parts):
        parts = _chunk_along_axis(points[idx], k)
    out = []
    for part in parts:
        out.extend(_split_oversized(points, idx[part], params))
    return out


def cluster_indices(points: np.ndarray, params: ClusterParams = ClusterParams()) -> list[list[int]]:
    """Bundle index groups: average-linkage cosine clustering, then K-means splits."""
    n = len(points)
    if n < MIN_BUNDLE:
        return []
    if params.reduce_to is not None and points.shape[1] > params.reduce_to:
        points = reduce_dimensions(points, params.reduce_to)
    tree = linkage(points, method="average", metric="cosine")
    labels = fcluster(tree, t=params.distance_threshold, criterion="distance")

    groups = []
    for label in sorted(set(labels), key=lambda lab: int(np.flatnonzero(labels == lab)[0])):
        idx = np.flatnonzero(labels == label)
        if len(idx) < MIN_BUNDLE:
            continue
        for part in _split_oversized(points, idx, params):
            if len(part) >= MIN_BUNDLE:
                groups.append(sorted(int(i) for i in part))
    return groups


def bundle(docs: Sequence[Document], params: ClusterParams = ClusterParams()) -> list[QABundle]:
    if not docs:
        return []
    points = _embedding_matrix(docs)
    return [
        QABundle(id=f"b{n:04d}", documents=tuple(docs[i] for i in group),
                 theme=docs[group[0]].title)
        for n, group in enumerate(cluster_indices(points, params))
    ]


# generation and filtering


def _render_documents(documents: Sequence[Document]) -> str:
    return "\n\n".join(
        f"Document {i} ({d.source_kind}, {d.published or 'undated'}): {d.title}\n{d.body}"
        for i, d in enumerate(documents, start=1)
    )


def _parse_candidates(reply: str, bundle_id: str) -> list[QAPair]:
    m = re.search(r"\[.*\]", reply, flags=re.DOTALL)
    if m is None:
        raise ValueError("no JSON array")
    items = json.loads(m.group())
    pairs = []
    for item in items:
        kind = item["kind"]
        if kind not in QA_KINDS:
            raise ValueError(f"unknown kind {kind!r}")
        if kind == "multiple_choice":
            gold = GoldAnswer.choices(item["options"])
        else:
            gold = GoldAnswer.free_text(str(item["answer"]))
        pairs.append(QAPair(str(item["question"]).strip(), gold, kind, bundle_id,
                            int(item["source_count"])))
    return pairs


def generate_qa(qa_bundle: QABundle, generator: TextModel) -> list[QAPair]:
    prompt = GENERATION_PROMPT.format(n=len(qa_bundle.documents),
                                      documents=_render_documents(qa_bundle.documents))
    for attempt in range(GENERATION_ATTEMPTS):
        try:
            reply = generator.complete(prompt)
        except DagSearchError as exc:
            raise GeneratorUnavailable(str(exc)) from exc
        try:
            return _parse_candidates(reply, qa_bundle.id)
        except (ValueError, KeyError, TypeError) as exc:
            log.info("unparsable generation (attempt %d): %s", attempt + 1, exc)
    raise UnparsableGeneration(f"bundle {qa_bundle.id}: no parsable reply")


def _closed_book_correct(pair: QAPair, reply: str) -> bool:
    m = re.search(r"\{.*\}", reply, flags=re.DOTALL)
    try:
        data = json.loads(m.group()) if m else {}
    except ValueError:
        data = {}
    answer = str(data.get("answer", reply))
    try:
        confidence = float(data.get("confidence", 0.0))
    except (TypeError, ValueError):
        confidence = 0.0
    if confidence < CONFIDENCE_THRESHOLD:
        return False
    if pair.gold.kind == "choice_set":
        return score_answer_mcq(extract_options(answer), pair.gold.options) == 1.0
    gold = _normalize(pair.gold.text)
    return bool(gold) and gold in _normalize(answer)


def filter_qa(pair: QAPair, checker: TextModel,
              documents: Sequence[Document] = ()) -> FilterDecision:
    """Reject single-source questions and ones answerable without evidence."""
    if pair.source_count < MIN_BUNDLE:
        return FilterDecision(False, "single-source")
    try:
        reply = checker.complete(CLOSED_BOOK_PROMPT.format(question=pair.question))
        if _closed_book_correct(pair, reply):
            return FilterDecision(False, "parametric-knowledge")
        if documents:
            verdict = checker.complete(SINGLE_SOURCE_PROMPT.format(
                documents=_render_documents(documents), question=pair.question))
            if verdict.strip().upper().startswith("YES"):
                return FilterDecision(False, "single-source")
    except DagSearchError as exc:
        raise CheckerUnavailable(str(exc)) from exc
    return FilterDecision(True)


def curriculum_sort(pairs: Sequence[QAPair]) -> list[QAPair]:
    return sorted(pairs, key=lambda p: (p.source_count, len(p.question)))


@dataclass
class BuildStats:
    documents: int = 0
    unique: int = 0
    bundles: int = 0
    candidates: int = 0
    accepted: int = 0
    rejected: dict = field(default_factory=dict)


def build_dataset(
    docs: Sequence[Document],
    generator: TextModel,
    checker: TextModel,
    params: ClusterParams = ClusterParams(),
    concurrency: int = 4,
) -> tuple[list[QAPair], BuildStats]:
    stats = BuildStats(documents=len(docs))
    unique = dedup(docs)
    stats.unique = len(unique)
    bundles = bundle(unique, params)
    stats.bundles = len(bundles)
    by_id = {b.id: b for b in bundles}

    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        candidates = [p for ps in pool.map(lambda b: generate_qa(b, generator), bundles)
                      for p in ps]
        stats.candidates = len(candidates)
        decisions = list(pool.map(
            lambda p: filter_qa(p, checker, by_id[p.bundle_id].documents), candidates))

    accepted = []
    for pair, decision in zip(candidates, decisions):
        if decision.accepted:
            accepted.append(pair)
        else:
            stats.rejected[decision.reason] = stats.rejected.get(decision.reason, 0) + 1
    stats.accepted = len(accepted)
    return curriculum_sort(accepted), stats
