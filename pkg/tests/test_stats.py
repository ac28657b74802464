import filecmp
import math

import pytest
import scipy.special
import scipy.stats

from promograph.errors import ChiSquareError
from promograph.graph import (AdKind, AppClass, PromotionEdge, PromotionGraph,
                              add_promotion)
from promograph.stats import (_gamma_p, chi2_sf, chi_square, emit_report,
                              probabilities_from_counts,
                              promotion_probabilities, stats_table_rows,
                              temporal_diff)

B, P, M = "benign", "pua", "malware"

# independently frozen hop-1 survey counts and the percentage shares they
# must reproduce (column = source class, share over destinations)
HOP1_COUNTS = {
    (B, B): 8206, (B, P): 2997, (B, M): 111,
    (P, B): 3052, (P, P): 1320, (P, M): 355,
    (M, B): 1796, (M, P): 736, (M, M): 54,
}
HOP1_EXPECTED = {
    (B, B): 72.53, (B, P): 26.49, (B, M): 0.98,
    (P, B): 64.57, (P, P): 27.92, (P, M): 7.51,
    (M, B): 69.45, (M, P): 28.46, (M, M): 2.09,
}


class TestProbabilities:
    def test_reference_survey_cells_within_hundredth_point(self):
        probs = probabilities_from_counts(HOP1_COUNTS)
        for pair, expected in HOP1_EXPECTED.items():
            assert probs[pair] == pytest.approx(expected, abs=0.005), pair

    def test_rows_sum_to_100_per_source(self):
        probs = probabilities_from_counts(HOP1_COUNTS)
        for src in (B, P, M):
            total = sum(v for (s, _), v in probs.items() if s == src)
            assert total == pytest.approx(100.0, abs=1e-9)

    def test_zero_total_source_yields_zero(self):
        assert probabilities_from_counts({(B, B): 0}) == {(B, B): 0.0}


def chain_graph():
    g = PromotionGraph()
    g.add_node("a.one", AppClass.BENIGN)
    g.add_node("b.two", AppClass.PUA)
    g.add_node("c.three", AppClass.MALWARE)
    g.add_node("d.four", AppClass.UNKNOWN)
    add_promotion(g, PromotionEdge("a.one", "b.two", AdKind.INHERENT, epoch=0))
    add_promotion(g, PromotionEdge("a.one", "b.two", AdKind.INHERENT, epoch=1))
    add_promotion(g, PromotionEdge("b.two", "c.three", AdKind.POPUP, epoch=0))
    add_promotion(g, PromotionEdge("c.three", "d.four", AdKind.POPUP, epoch=0))
    return g


class TestPromotionProbabilities:
    def test_hop1_counts_are_observation_level(self):
        table = promotion_probabilities(chain_graph(), max_hop=1)
        # the repeated epoch counts twice; the Unknown destination is dropped
        assert table.counts[1] == {(B, P): 2, (P, M): 1}
        assert table.probabilities[1][(B, P)] == pytest.approx(100.0)

    def test_hop2_adds_transitive_pair_once(self):
        table = promotion_probabilities(chain_graph(), max_hop=2)
        # hop-2 pairs are distinct ordered pairs within min-hop <= 2
        assert table.counts[2] == {(B, P): 1, (P, M): 1, (B, M): 1}

    def test_unknown_nodes_never_appear(self):
        table = promotion_probabilities(chain_graph(), max_hop=3)
        for counts in table.counts.values():
            for src, dst in counts:
                assert "unknown" not in (src, dst)


class TestGamma:
    @pytest.mark.parametrize("a", [0.5, 1.0, 2.5, 7.0, 40.0])
    @pytest.mark.parametrize("x", [0.01, 0.7, 3.0, 12.0, 80.0])
    def test_matches_scipy_gammainc(self, a, x):
        assert _gamma_p(a, x) == pytest.approx(
            float(scipy.special.gammainc(a, x)), abs=1e-12, rel=1e-10)

    def test_boundaries(self):
        assert _gamma_p(2.0, 0.0) == 0.0
        with pytest.raises(ValueError):
            _gamma_p(-1.0, 2.0)
        with pytest.raises(ValueError):
            _gamma_p(1.0, -2.0)


class TestChiSquare:
    def test_matches_scipy_on_reference_table(self):
        table = [[8206, 2997, 111], [3052, 1320, 355], [1796, 736, 54]]
        stat, dof, p = chi_square(table)
        ref = scipy.stats.chi2_contingency(table, correction=False)
        assert stat == pytest.approx(float(ref.statistic), rel=1e-12)
        assert dof == ref.dof
        assert p == pytest.approx(float(ref.pvalue), abs=1e-12)

    def test_closed_form_2x2(self):
        # chi2 = n (ad - bc)^2 / ((a+b)(c+d)(a+c)(b+d))
        a, b, c, d = 12, 5, 7, 20
        stat, dof, _ = chi_square([[a, b], [c, d]])
        n = a + b + c + d
        expected = n * (a * d - b * c) ** 2 / (
            (a + b) * (c + d) * (a + c) * (b + d))
        assert stat == pytest.approx(expected, rel=1e-12)
        assert dof == 1

    def test_sf_matches_scipy(self):
        for stat, dof in [(0.5, 1), (3.84, 1), (10.0, 4), (120.0, 9)]:
            assert chi2_sf(stat, dof) == pytest.approx(
                float(scipy.stats.chi2.sf(stat, dof)), abs=1e-12)

    @pytest.mark.parametrize("table", [
        [[1, 2]],                 # single row
        [[1], [2]],               # single column
        [[1, 2], [3]],            # ragged
        [[1, -2], [3, 4]],        # negative count
        [[0, 0], [1, 2]],         # zero row marginal
        [[0, 1], [0, 2]],         # zero column marginal
    ])
    def test_invalid_tables_raise(self, table):
        with pytest.raises(ChiSquareError):
            chi_square(table)

    def test_independent_table_large_p(self):
        _, _, p = chi_square([[10, 20], [30, 60]])
        assert p > 0.99


class TestTemporalDiff:
    def test_edge_and_label_transitions(self):
        a = PromotionGraph()
        a.add_node("a.one", AppClass.UNKNOWN)
        a.add_node("b.two", AppClass.BENIGN)
        a.add_node("c.three", AppClass.BENIGN)
        add_promotion(a, PromotionEdge("a.one", "b.two", AdKind.POPUP))
        add_promotion(a, PromotionEdge("b.two", "c.three", AdKind.POPUP))
        b = PromotionGraph()
        b.add_node("a.one", AppClass.MALWARE)
        b.add_node("b.two", AppClass.PUA)
        b.add_node("c.three", AppClass.BENIGN)
        add_promotion(b, PromotionEdge("a.one", "b.two", AdKind.POPUP))
        add_promotion(b, PromotionEdge("c.three", "a.one", AdKind.POPUP))
        diff = temporal_diff(a, b)
        assert diff.removed_edges == {("b.two", "c.three")}
        assert diff.added_edges == {("c.three", "a.one")}
        assert diff.zero_day_resolved == {"a.one"}
        assert diff.late_detection == {"b.two"}

    def test_app_absent_from_second_snapshot_ignored(self):
        a = PromotionGraph()
        a.add_node("a.one", AppClass.UNKNOWN)
        a.add_node("b.two", AppClass.BENIGN)
        add_promotion(a, PromotionEdge("a.one", "b.two", AdKind.POPUP))
        b = PromotionGraph()
        b.add_node("b.two", AppClass.BENIGN)
        diff = temporal_diff(a, b)
        assert diff.zero_day_resolved == set()
        assert diff.late_detection == set()


class TestReport:
    def test_rows_cover_all_class_pairs(self):
        table = promotion_probabilities(chain_graph(), max_hop=2)
        rows = stats_table_rows(table)
        assert len(rows) == 2 * 9
        assert {r["hop"] for r in rows} == {1, 2}
        keyed = {(r["hop"], r["src"], r["dst"]): r for r in rows}
        assert keyed[(1, B, P)]["count"] == 2
        assert keyed[(1, M, M)]["count"] == 0

    @pytest.mark.parametrize("fmt", ["json", "csv"])
    def test_emission_is_byte_deterministic(self, fmt, tmp_path):
        rows = stats_table_rows(promotion_probabilities(chain_graph(), 2))
        p1, p2 = tmp_path / f"a.{fmt}", tmp_path / f"b.{fmt}"
        emit_report(rows, str(p1), fmt=fmt)
        emit_report(list(reversed(list(reversed(rows)))), str(p2), fmt=fmt)
        assert filecmp.cmp(p1, p2, shallow=False)
        assert p1.read_bytes()

    def test_unknown_format_raises(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report([], str(tmp_path / "x.bin"), fmt="bin")
