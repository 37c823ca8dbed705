"""Table metrics, SQL exact match, execution accuracy and report assembly."""

from __future__ import annotations

import random
import sqlite3

import pytest
from hypothesis import given, strategies as st

from slicelink.errors import GoldExecutionError, JoinError, SlicelinkError
from slicelink.metrics import (
    build_report,
    exact_match,
    execution_accuracy,
    format_report,
    has_top_level_order_by,
    normalize_sql,
    report_to_json,
    table_metrics,
)
from slicelink.sft import QAExample

from conftest import table_metrics_oracle


def random_pairs(rng: random.Random, count: int):
    universe = [f"t{i}" for i in range(10)]
    pairs = []
    for _ in range(count):
        predicted = rng.sample(universe, rng.randint(0, 6))
        gold = rng.sample(universe, rng.randint(0, 6))
        pairs.append((predicted, gold))
    return pairs


class TestTableMetrics:
    def test_identity_case(self):
        pairs = [({"a", "b"}, {"a", "b"}), ({"c"}, {"c"})]
        m = table_metrics(pairs)
        assert (m.total_accuracy, m.filtered_accuracy, m.average_precision, m.average_recall) == (
            1.0,
            1.0,
            1.0,
            1.0,
        )

    def test_single_question_arithmetic(self):
        m = table_metrics([({"a", "b"}, {"a"})])
        assert m.total_accuracy == 0.0
        assert m.filtered_accuracy == 1.0
        assert m.average_precision == 0.5
        assert m.average_recall == 1.0

    def test_empty_prediction_conventions(self):
        m = table_metrics([((), ())])
        assert (m.total_accuracy, m.average_precision, m.average_recall) == (1.0, 1.0, 1.0)
        m = table_metrics([((), ("a",))])
        assert m.average_precision == 0.0
        assert m.average_recall == 0.0
        assert m.filtered_accuracy == 0.0

    def test_case_insensitive(self):
        m = table_metrics([(("Orders",), ("ORDERS",))])
        assert m.total_accuracy == 1.0

    def test_empty_list_is_error(self):
        with pytest.raises(ValueError):
            table_metrics([])

    def test_matches_oracle_on_200_random_pairs(self):
        rng = random.Random(808)
        pairs = random_pairs(rng, 200)
        m = table_metrics(pairs)
        expected = table_metrics_oracle(pairs)
        actual = (m.total_accuracy, m.filtered_accuracy, m.average_precision, m.average_recall)
        for a, e in zip(actual, expected):
            assert abs(a - e) <= 1e-12

    @given(
        st.lists(
            st.tuples(
                st.sets(st.sampled_from("abcdefg"), max_size=5),
                st.sets(st.sampled_from("abcdefg"), max_size=5),
            ),
            min_size=1,
            max_size=20,
        )
    )
    def test_filtered_at_least_total(self, pairs):
        m = table_metrics(pairs)
        assert m.filtered_accuracy >= m.total_accuracy
        assert 0.0 <= m.total_accuracy <= 1.0
        assert 0.0 <= m.average_precision <= 1.0
        assert 0.0 <= m.average_recall <= 1.0

    def test_recall_one_iff_counted_by_filtered(self):
        rng = random.Random(31)
        for predicted, gold in random_pairs(rng, 100):
            m = table_metrics([(predicted, gold)])
            assert (m.average_recall == 1.0) == (m.filtered_accuracy == 1.0)


class TestExactMatch:
    def test_whitespace_and_case(self):
        assert exact_match("SELECT  A FROM t;", "select a from t")

    def test_distinct_sql(self):
        assert not exact_match("SELECT a FROM t", "SELECT b FROM t")

    def test_quoted_literal_case_preserved(self):
        assert not exact_match("SELECT 'X' FROM t", "select 'x' from t")

    def test_quote_characters_unified(self):
        assert exact_match("SELECT \"verbatim\" FROM t", "SELECT 'verbatim' FROM t")

    def test_doubled_quote_escape_normalized(self):
        assert exact_match("SELECT 'It''s' FROM t", "SELECT \"It's\" FROM t")

    def test_trailing_semicolon_and_newlines(self):
        assert exact_match("SELECT a\nFROM t ;", "select a from t")

    def test_normalize_idempotent(self):
        text = "SELECT 'X' , a FROM t;"
        assert normalize_sql(normalize_sql(text)) == normalize_sql(text)


@pytest.fixture(scope="module")
def fixture_db(tmp_path_factory):
    """Three tables; items stored order (3, 1, 2) differs from sorted order."""
    path = tmp_path_factory.mktemp("db") / "fixture.sqlite"
    conn = sqlite3.connect(path)
    conn.executescript(
        """
        CREATE TABLE items (id INT, name TEXT, qty INT);
        CREATE TABLE tags (id INT, item_id INT, tag TEXT);
        CREATE TABLE plain (k INT);
        INSERT INTO items VALUES (3, 'c', 1), (1, 'a', 2), (2, 'b', 2);
        INSERT INTO tags VALUES (1, 3, 'x'), (2, 1, 'x'), (3, 1, 'y');
        INSERT INTO plain VALUES (5), (5), (7);
        """
    )
    conn.commit()
    conn.close()
    return path


# Hand-enumerated verdicts. items returns rows in insertion order (3, 1, 2);
# plain holds the duplicate-carrying multiset {5, 5, 7}.
CURATED_EX_CASES = [
    # identical statements
    ("SELECT id FROM items", "SELECT id FROM items", True),
    # gold unordered: multiset comparison accepts any row order
    ("SELECT id FROM items ORDER BY id", "SELECT id FROM items", True),
    # gold ordered: (3,1,2) vs (1,2,3) differ positionally
    ("SELECT id FROM items", "SELECT id FROM items ORDER BY id", False),
    # gold ordered, prediction ordered the same way
    ("SELECT id FROM items ORDER BY id ASC", "SELECT id FROM items ORDER BY id", True),
    # duplicates are significant: {5,7} != {5,5,7}
    ("SELECT DISTINCT k FROM plain", "SELECT k FROM plain", False),
    # duplicates preserved on both sides
    ("SELECT k FROM plain", "SELECT k FROM plain", True),
    # prediction fails to parse
    ("SELEC id FROM items", "SELECT id FROM items", False),
    # prediction references a missing table
    ("SELECT id FROM ghost", "SELECT id FROM items", False),
    # wrong column: ('c','a','b') vs (3,1,2)
    ("SELECT name FROM items", "SELECT id FROM items", False),
    # join equals direct lookup: items tagged 'x' are 3 and 1
    (
        "SELECT items.id FROM items JOIN tags ON tags.item_id = items.id WHERE tags.tag = 'x'",
        "SELECT item_id FROM tags WHERE tag = 'x'",
        True,
    ),
    # scalar aggregate: COUNT(*) = 3
    ("SELECT COUNT(*) FROM items", "SELECT 3", True),
    # ORDER BY inside a subquery is not top-level: multiset comparison
    ("SELECT id FROM items", "SELECT id FROM (SELECT id FROM items ORDER BY id)", True),
]


class TestExecutionAccuracy:
    @pytest.mark.parametrize("pred,gold,expected", CURATED_EX_CASES)
    def test_curated_pairs(self, fixture_db, pred, gold, expected):
        verdict = execution_accuracy(pred, gold, fixture_db)
        assert verdict.match is expected

    def test_engine_error_recorded(self, fixture_db):
        verdict = execution_accuracy("SELEC id FROM items", "SELECT id FROM items", fixture_db)
        assert not verdict.match
        assert verdict.error

    def test_symmetric_when_both_execute_without_order_by(self, fixture_db):
        pairs = [
            ("SELECT id FROM items", "SELECT id FROM items"),
            ("SELECT name FROM items", "SELECT id FROM items"),
            (
                "SELECT items.id FROM items JOIN tags ON tags.item_id = items.id WHERE tags.tag = 'x'",
                "SELECT item_id FROM tags WHERE tag = 'x'",
            ),
        ]
        for pred, gold in pairs:
            forward = execution_accuracy(pred, gold, fixture_db)
            backward = execution_accuracy(gold, pred, fixture_db)
            assert forward.match == backward.match

    def test_gold_failure_is_fixture_error(self, fixture_db):
        with pytest.raises(GoldExecutionError):
            execution_accuracy("SELECT id FROM items", "SELECT id FROM ghost", fixture_db)

    def test_unreadable_db_is_error(self, tmp_path):
        with pytest.raises(SlicelinkError):
            execution_accuracy("SELECT 1", "SELECT 1", tmp_path / "missing.sqlite")

    def test_runaway_prediction_times_out(self, fixture_db):
        runaway = (
            "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) "
            "SELECT COUNT(*) FROM c"
        )
        verdict = execution_accuracy(runaway, "SELECT 1", fixture_db, timeout_s=0.2)
        assert not verdict.match
        assert verdict.error

    def test_top_level_order_by_detection(self):
        assert has_top_level_order_by("SELECT a FROM t ORDER BY a")
        assert has_top_level_order_by("select a from t   order   by a desc")
        assert not has_top_level_order_by("SELECT a FROM (SELECT a FROM t ORDER BY a)")
        assert not has_top_level_order_by("SELECT 'ORDER BY' FROM t")


class TestBuildReport:
    def gold(self):
        return [
            QAExample("q1", "?", ("a",), "SELECT id FROM items", "fixture"),
            QAExample("q2", "?", ("b", "c"), "SELECT k FROM plain", "fixture"),
        ]

    def predictions(self):
        return [
            {"question_id": "q1", "predicted_tables": ["a"], "per_slice": []},
            {"question_id": "q2", "predicted_tables": ["b", "c"], "per_slice": []},
        ]

    def test_perfect_predictions_score_one(self):
        report = build_report(self.predictions(), self.gold())
        tm = report.table_metrics
        assert (tm.total_accuracy, tm.filtered_accuracy, tm.average_precision, tm.average_recall) == (
            1.0,
            1.0,
            1.0,
            1.0,
        )

    def test_missing_gold_entry_named(self):
        gold = self.gold()[:1]
        with pytest.raises(JoinError, match="q2"):
            build_report(self.predictions(), gold)

    def test_missing_prediction_named(self):
        with pytest.raises(JoinError, match="q2"):
            build_report(self.predictions()[:1], self.gold())

    def test_byte_identical_reports(self):
        first = report_to_json(build_report(self.predictions(), self.gold(), config={"seed": 1}))
        second = report_to_json(build_report(self.predictions(), self.gold(), config={"seed": 1}))
        assert first == second

    def test_sql_metrics_with_db(self, fixture_db):
        sql_predictions = [
            {"question_id": "q1", "predicted_sql": "SELECT id FROM items ORDER BY id"},
            {"question_id": "q2", "predicted_sql": "SELECT DISTINCT k FROM plain"},
        ]
        report = build_report(
            self.predictions(),
            self.gold(),
            sql_predictions=sql_predictions,
            db_dir=fixture_db.parent,
        )
        assert report.sql_metrics is not None
        # q1: EM false (ORDER BY differs textually), EX true (multiset)
        # q2: EM false, EX false (duplicates dropped)
        assert report.sql_metrics.exact_match == 0.0
        assert report.sql_metrics.execution_accuracy == 0.5
        verdicts = {v.question_id: v for v in report.sql_metrics.verdicts}
        assert verdicts["q1"].execution_match is True
        assert verdicts["q2"].execution_match is False

    def test_generation_failure_scores_zero(self, fixture_db):
        sql_predictions = [
            {"question_id": "q1", "predicted_sql": "SELECT id FROM items"},
            {"question_id": "q2", "predicted_sql": "", "failed": True},
        ]
        report = build_report(
            self.predictions(),
            self.gold(),
            sql_predictions=sql_predictions,
            db_dir=fixture_db.parent,
        )
        assert report.sql_metrics.exact_match == 0.5
        assert report.sql_metrics.execution_accuracy == 0.5

    def test_format_report_mentions_divergence(self):
        report = build_report(self.predictions(), self.gold())
        text = format_report(report)
        assert "not component decomposition" in text
        assert "total_accuracy" in text
