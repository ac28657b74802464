"""Per-app attribute encoding.

Four blocks per app: TF-IDF text (v_t), standardized numerics (v_n), one-hot
categoricals (v_c), and a row-normalized Markov matrix over abstracted API
call families (v_a). The concatenation, in that fixed order, is the app
attribute vector v_app. Encoders are fitted on training apps only and are
immutable afterwards.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from . import stemming
from .records import AppRecordBundle, MarketRecord

API_FAMILIES = ("network", "ui", "storage", "telephony", "crypto",
                "reflection", "process", "location", "media", "ads",
                "accounts", "misc")

_TOKEN_RE = re.compile(r"[a-z]+")

SIGNATURE_OTHER = "<other>"


def _load_stopwords() -> frozenset[str]:
    text = resources.files("promograph").joinpath("data/stopwords.txt").read_text()
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


STOPWORDS = _load_stopwords()


def tokenize(text: str, stopwords: frozenset[str] = STOPWORDS) -> list[str]:
    """Lowercase word tokens, stopwords removed, Porter-stemmed."""
    return [stemming.stem(t) for t in _TOKEN_RE.findall(text.lower())
            if t not in stopwords]


@dataclass
class TfidfModel:
    vocabulary: list[str]
    doc_frequencies: dict[str, int]
    corpus_size: int
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.vocabulary)}

    def encode(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        vec = np.zeros(len(self.vocabulary))
        if not tokens:
            return vec
        n = len(tokens)
        counts: dict[str, int] = {}
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
        for term, count in counts.items():
            i = self._index.get(term)
            if i is None:
                continue
            tf = count / n
            idf = math.log(self.corpus_size / self.doc_frequencies[term])
            vec[i] = tf * idf
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


def fit_text(corpus: list[str], max_vocab: int = 2000) -> TfidfModel:
    if not corpus:
        raise ValueError("empty corpus")
    df: dict[str, int] = {}
    for doc in corpus:
        for term in set(tokenize(doc)):
            df[term] = df.get(term, 0) + 1
    # top terms by document frequency, ties alphabetical, then sorted vocab
    ranked = sorted(df, key=lambda t: (-df[t], t))[:max_vocab]
    vocab = sorted(ranked)
    return TfidfModel(vocabulary=vocab,
                      doc_frequencies={t: df[t] for t in vocab},
                      corpus_size=len(corpus))


NUMERIC_FIELDS = ("reviews", "downloads", "star")


def _numeric_values(market: MarketRecord) -> list[float]:
    # downloads is heavy-tailed; log-compress before standardization
    return [float(market.reviews), math.log10(1.0 + market.downloads),
            float(market.star)]


@dataclass
class NumericScaler:
    means: list[float]
    stds: list[float]  # 0.0 marks a constant field

    def encode(self, market: Optional[MarketRecord]) -> np.ndarray:
        if market is None:
            return np.zeros(len(NUMERIC_FIELDS))
        vals = _numeric_values(market)
        out = np.zeros(len(vals))
        for i, v in enumerate(vals):
            if self.stds[i] > 0:
                out[i] = (v - self.means[i]) / self.stds[i]
        return out


def fit_numeric(markets: list[MarketRecord]) -> NumericScaler:
    if not markets:
        return NumericScaler(means=[0.0] * len(NUMERIC_FIELDS),
                             stds=[0.0] * len(NUMERIC_FIELDS))
    cols = np.array([_numeric_values(m) for m in markets], dtype=float)
    means = cols.mean(axis=0)
    stds = cols.std(axis=0)
    stds[stds < 1e-12] = 0.0
    return NumericScaler(means=means.tolist(), stds=stds.tolist())


@dataclass
class CategoricalSpace:
    manifest_components: list[str]
    ratings: list[str]
    signatures: list[str]  # includes the shared singleton bucket
    signature_map: dict[str, str]

    def dim(self) -> int:
        return len(self.manifest_components) + len(self.ratings) + len(self.signatures)

    def encode(self, bundle: Optional[AppRecordBundle]) -> np.ndarray:
        vec = np.zeros(self.dim())
        if bundle is None:
            return vec
        comp_index = {c: i for i, c in enumerate(self.manifest_components)}
        off = len(self.manifest_components)
        if bundle.code is not None:
            for kind, name in bundle.code.manifest_components:
                i = comp_index.get(f"{kind}/{name}")
                if i is not None:
                    vec[i] = 1.0
        if bundle.market is not None and bundle.market.rating in self.ratings:
            vec[off + self.ratings.index(bundle.market.rating)] = 1.0
        off += len(self.ratings)
        if bundle.code is not None and bundle.code.signature:
            slot = self.signature_map.get(bundle.code.signature)
            if slot is not None:
                vec[off + self.signatures.index(slot)] = 1.0
        return vec


def fit_categorical(bundles: list[AppRecordBundle]) -> CategoricalSpace:
    components: set[str] = set()
    ratings: set[str] = set()
    sig_counts: dict[str, int] = {}
    for b in bundles:
        if b.code is not None:
            for kind, name in b.code.manifest_components:
                components.add(f"{kind}/{name}")
            if b.code.signature:
                sig_counts[b.code.signature] = sig_counts.get(b.code.signature, 0) + 1
        if b.market is not None and b.market.rating:
            ratings.add(b.market.rating)
    # signatures seen >=2 times get their own slot; singletons share one bucket
    frequent = sorted(s for s, c in sig_counts.items() if c >= 2)
    sig_slots = frequent + ([SIGNATURE_OTHER] if len(frequent) < len(sig_counts) else [])
    sig_map = {s: (s if s in frequent else SIGNATURE_OTHER) for s in sig_counts}
    return CategoricalSpace(manifest_components=sorted(components),
                            ratings=sorted(ratings), signatures=sig_slots,
                            signature_map=sig_map)


def encode_api(sequence: tuple[str, ...] | list[str],
               families: tuple[str, ...] = API_FAMILIES) -> np.ndarray:
    """Row-normalized Markov transition matrix over consecutive API family
    calls, flattened. Rows without transitions stay zero."""
    index = {f: i for i, f in enumerate(families)}
    n = len(families)
    counts = np.zeros((n, n))
    for a, b in zip(sequence, sequence[1:]):
        if a not in index or b not in index:
            raise ValueError(f"API family outside vocabulary: {a!r}/{b!r}")
        counts[index[a], index[b]] += 1.0
    sums = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        mat = np.where(sums > 0, counts / sums, 0.0)
    return mat.reshape(-1)


@dataclass
class AppFeatureBundle:
    v_t: np.ndarray
    v_n: np.ndarray
    v_c: np.ndarray
    v_a: np.ndarray

    @property
    def v_app(self) -> np.ndarray:
        return np.concatenate([self.v_t, self.v_n, self.v_c, self.v_a])


def _text_of(bundle: AppRecordBundle) -> str:
    if bundle.market is None:
        return ""
    m = bundle.market
    return f"{m.app_name} {m.developer_name} {m.description}"


@dataclass
class FeatureEncoder:
    """Fitted encoder bundle; encoding is pure and never mutates the models."""

    text: TfidfModel
    numeric: NumericScaler
    categorical: CategoricalSpace
    api_families: tuple[str, ...] = API_FAMILIES

    def encode(self, bundle: Optional[AppRecordBundle]) -> AppFeatureBundle:
        if bundle is None:
            return AppFeatureBundle(
                v_t=np.zeros(len(self.text.vocabulary)),
                v_n=np.zeros(len(NUMERIC_FIELDS)),
                v_c=np.zeros(self.categorical.dim()),
                v_a=np.zeros(len(self.api_families) ** 2))
        v_t = (self.text.encode(_text_of(bundle)) if bundle.market is not None
               else np.zeros(len(self.text.vocabulary)))
        v_n = self.numeric.encode(bundle.market)
        v_c = self.categorical.encode(bundle)
        v_a = (encode_api(bundle.code.api_call_sequence, self.api_families)
               if bundle.code is not None
               else np.zeros(len(self.api_families) ** 2))
        assert np.all(np.isfinite(v_t)) and np.all(np.isfinite(v_n)) \
            and np.all(np.isfinite(v_c)) and np.all(np.isfinite(v_a))
        return AppFeatureBundle(v_t=v_t, v_n=v_n, v_c=v_c, v_a=v_a)

    @property
    def dim(self) -> int:
        return (len(self.text.vocabulary) + len(NUMERIC_FIELDS)
                + self.categorical.dim() + len(self.api_families) ** 2)

    def to_json(self) -> str:
        return json.dumps({
            "version": 1,
            "text": {"vocabulary": self.text.vocabulary,
                     "docFrequencies": self.text.doc_frequencies,
                     "corpusSize": self.text.corpus_size},
            "numeric": {"means": self.numeric.means, "stds": self.numeric.stds},
            "categorical": {"manifestComponents": self.categorical.manifest_components,
                            "ratings": self.categorical.ratings,
                            "signatures": self.categorical.signatures,
                            "signatureMap": self.categorical.signature_map},
            "apiFamilies": list(self.api_families),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FeatureEncoder":
        obj = json.loads(text)
        return cls(
            text=TfidfModel(vocabulary=obj["text"]["vocabulary"],
                            doc_frequencies=obj["text"]["docFrequencies"],
                            corpus_size=obj["text"]["corpusSize"]),
            numeric=NumericScaler(means=obj["numeric"]["means"],
                                  stds=obj["numeric"]["stds"]),
            categorical=CategoricalSpace(
                manifest_components=obj["categorical"]["manifestComponents"],
                ratings=obj["categorical"]["ratings"],
                signatures=obj["categorical"]["signatures"],
                signature_map=obj["categorical"]["signatureMap"]),
            api_families=tuple(obj["apiFamilies"]))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def fit_encoder(bundles: list[AppRecordBundle], max_vocab: int = 2000) -> FeatureEncoder:
    corpus = [_text_of(b) for b in bundles if b.market is not None]
    if not corpus:
        corpus = [""]
    return FeatureEncoder(
        text=fit_text(corpus, max_vocab=max_vocab),
        numeric=fit_numeric([b.market for b in bundles if b.market is not None]),
        categorical=fit_categorical(bundles))


def encode_all(encoder: FeatureEncoder, app_ids: list[str],
               records: dict[str, AppRecordBundle]) -> dict[str, np.ndarray]:
    """v_app per app; apps without records get all-zero vectors."""
    out: dict[str, np.ndarray] = {}
    for app_id in app_ids:
        out[app_id] = encoder.encode(records.get(app_id)).v_app
    return out
