import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promograph import stemming
from promograph.features import (API_FAMILIES, SIGNATURE_OTHER,
                                 AppFeatureBundle, FeatureEncoder,
                                 encode_all, encode_api, fit_categorical,
                                 fit_encoder, fit_numeric, fit_text, tokenize)
from promograph.records import AppRecordBundle, CodeRecord, MarketRecord


class TestStemming:
    # classic reference pairs for this stemming algorithm
    @pytest.mark.parametrize("word,stem", [
        ("caresses", "caress"), ("ponies", "poni"), ("ties", "ti"),
        ("caress", "caress"), ("cats", "cat"), ("feed", "feed"),
        ("agreed", "agre"), ("plastered", "plaster"), ("motoring", "motor"),
        ("sing", "sing"), ("conflated", "conflat"), ("troubled", "troubl"),
        ("sized", "size"), ("hopping", "hop"), ("falling", "fall"),
        ("happy", "happi"), ("relational", "relat"),
        ("conditional", "condit"), ("rational", "ration"),
        ("generalization", "gener"), ("oscillators", "oscil"),
        ("triplicate", "triplic"), ("formative", "form"),
        ("effective", "effect"), ("probate", "probat"), ("rate", "rate"),
        ("controll", "control"), ("roll", "roll")])
    def test_reference_vectors(self, word, stem):
        assert stemming.stem(word) == stem


class TestTokenize:
    def test_lowercase_stopwords_stemming(self):
        assert tokenize("The Running DOGS") == ["run", "dog"]

    def test_non_alpha_dropped(self):
        assert tokenize("app2 v1.3!") == ["app", "v"]


class TestTfidf:
    def test_hand_computed_example(self):
        # 3 docs; "apple" in 2, "banana" in 1
        model = fit_text(["apple banana", "apple", "cherry"])
        vec = model.encode("apple banana")
        i_a = model.vocabulary.index(stemming.stem("apple"))
        i_b = model.vocabulary.index(stemming.stem("banana"))
        tf = 0.5
        raw_a = tf * math.log(3 / 2)
        raw_b = tf * math.log(3 / 1)
        norm = math.hypot(raw_a, raw_b)
        assert vec[i_a] == pytest.approx(raw_a / norm)
        assert vec[i_b] == pytest.approx(raw_b / norm)

    def test_l2_normalized(self):
        model = fit_text(["alpha beta gamma", "alpha delta"])
        v = model.encode("alpha beta")
        assert np.linalg.norm(v) == pytest.approx(1.0)

    def test_unknown_terms_zero(self):
        model = fit_text(["alpha beta"])
        assert np.linalg.norm(model.encode("zulu xray")) == 0.0

    def test_vocab_cap_by_df_then_alpha(self):
        docs = ["common apple", "common mango", "common zebra"]
        model = fit_text(docs, max_vocab=2)
        assert stemming.stem("common") in model.vocabulary
        assert len(model.vocabulary) == 2
        # tie among the singletons broken alphabetically
        assert model.vocabulary == sorted(model.vocabulary)
        assert stemming.stem("apple") in model.vocabulary

    def test_empty_corpus_raises(self):
        with pytest.raises(ValueError):
            fit_text([])


def market(reviews=0, downloads=0, star=0.0, rating="Everyone",
           category="Tools", name="x", dev="d"):
    return MarketRecord(app_name=name, developer_name=dev, description="",
                        reviews=reviews, downloads=downloads, star=star,
                        rating=rating, category=category)


class TestNumeric:
    def test_standardization(self):
        ms = [market(reviews=10, downloads=999, star=1.0),
              market(reviews=30, downloads=999, star=3.0)]
        scaler = fit_numeric(ms)
        v = scaler.encode(ms[0])
        assert v[0] == pytest.approx(-1.0)   # (10-20)/10
        assert v[1] == 0.0                   # constant downloads column
        assert v[2] == pytest.approx(-1.0)

    def test_downloads_log_compressed(self):
        ms = [market(downloads=0), market(downloads=10 ** 6)]
        scaler = fit_numeric(ms)
        mean = (math.log10(1) + math.log10(1 + 10 ** 6)) / 2
        assert scaler.means[1] == pytest.approx(mean)

    def test_missing_market_zero(self):
        scaler = fit_numeric([market(reviews=5), market(reviews=9)])
        assert not scaler.encode(None).any()


def bundle(app_id, sig="s1", rating="Everyone",
           components=(("activity", "Main"),), seq=("ui",)):
    return AppRecordBundle(
        app_id=app_id, market=market(rating=rating),
        code=CodeRecord(manifest_components=tuple(components),
                        api_call_sequence=tuple(seq), signature=sig))


class TestCategorical:
    def test_one_and_multi_hot(self):
        bundles = [bundle("a.a", components=(("activity", "Main"),
                                             ("service", "Sync"))),
                   bundle("b.b", components=(("activity", "Main"),))]
        space = fit_categorical(bundles)
        v = space.encode(bundles[0])
        manifest_block = v[:len(space.manifest_components)]
        assert manifest_block.sum() == 2  # two known components
        rating_block = v[len(space.manifest_components):
                         len(space.manifest_components) + len(space.ratings)]
        assert rating_block.sum() == 1

    def test_rare_signatures_bucketed(self):
        bundles = [bundle("a.a", sig="shared"), bundle("b.b", sig="shared"),
                   bundle("c.c", sig="solo")]
        space = fit_categorical(bundles)
        assert "shared" in space.signatures
        assert "solo" not in space.signatures
        assert SIGNATURE_OTHER in space.signatures
        v_solo = space.encode(bundles[2])
        sig_block = v_solo[-len(space.signatures):]
        assert sig_block[space.signatures.index(SIGNATURE_OTHER)] == 1

    def test_unseen_values_zero_block(self):
        space = fit_categorical([bundle("a.a", rating="Everyone")])
        v = space.encode(bundle("z.z", rating="Mature",
                                components=(("receiver", "New"),)))
        rating_block = v[len(space.manifest_components):
                         len(space.manifest_components) + len(space.ratings)]
        assert not rating_block.any()

    def test_none_bundle_zeros(self):
        space = fit_categorical([bundle("a.a")])
        assert not space.encode(None).any()


def count_matrix_oracle(seq):
    """Independent counting construction of the transition matrix."""
    n = len(API_FAMILIES)
    idx = {f: i for i, f in enumerate(API_FAMILIES)}
    m = np.zeros((n, n))
    for a, b in zip(seq, seq[1:]):
        m[idx[a], idx[b]] += 1
    sums = m.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        out = np.where(sums > 0, m / sums, 0.0)
    return out.flatten()


class TestApiEncoding:
    def test_counting_oracle(self):
        seq = ("ui", "network", "ui", "ui", "storage", "network")
        assert np.allclose(encode_api(seq), count_matrix_oracle(seq))

    def test_unknown_family_raises(self):
        with pytest.raises(ValueError):
            encode_api(("ui", "quantum"))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.sampled_from(API_FAMILIES), min_size=0, max_size=30))
    def test_rows_sum_to_one_or_zero(self, seq):
        mat = encode_api(tuple(seq)).reshape(len(API_FAMILIES),
                                             len(API_FAMILIES))
        for row in mat.sum(axis=1):
            assert abs(row - 1.0) < 1e-12 or abs(row) < 1e-12

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.sampled_from(API_FAMILIES), min_size=0, max_size=30))
    def test_matches_oracle_on_random_sequences(self, seq):
        assert np.allclose(encode_api(tuple(seq)), count_matrix_oracle(seq))


class TestEncoder:
    def bundles(self):
        return [AppRecordBundle(
                    app_id=f"app{i}.pkg",
                    market=market(reviews=i * 10, downloads=10 ** i,
                                  star=float(i), name=f"word{i} shared"),
                    code=CodeRecord(
                        manifest_components=(("activity", "Main"),),
                        api_call_sequence=("ui", "network", "ui"),
                        signature="sig" if i < 2 else f"solo{i}"))
                for i in range(4)]

    def test_block_order_and_dim(self):
        enc = fit_encoder(self.bundles())
        fb = enc.encode(self.bundles()[0])
        assert isinstance(fb, AppFeatureBundle)
        v = fb.v_app
        expected = np.concatenate([fb.v_t, fb.v_n, fb.v_c, fb.v_a])
        assert np.array_equal(v, expected)
        assert enc.dim == len(v)
        assert len(fb.v_a) == len(API_FAMILIES) ** 2

    def test_none_bundle_all_zero(self):
        enc = fit_encoder(self.bundles())
        assert not enc.encode(None).v_app.any()

    def test_json_round_trip_and_fingerprint(self):
        enc = fit_encoder(self.bundles())
        enc2 = FeatureEncoder.from_json(enc.to_json())
        assert enc2.fingerprint() == enc.fingerprint()
        b = self.bundles()[1]
        assert np.allclose(enc2.encode(b).v_app, enc.encode(b).v_app)

    def test_encode_all_missing_records_zero(self):
        enc = fit_encoder(self.bundles())
        out = encode_all(enc, ["app0.pkg", "ghost.pkg"],
                         {b.app_id: b for b in self.bundles()})
        assert out["app0.pkg"].any()
        assert not out["ghost.pkg"].any()

    def test_all_vectors_finite(self):
        enc = fit_encoder(self.bundles())
        for b in self.bundles():
            assert np.all(np.isfinite(enc.encode(b).v_app))
