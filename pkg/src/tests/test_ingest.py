'''
@file: test_ingest.py

Unit tests for CSV parsing, window assignment and stratified subsampling
'''

import io

import pytest

from errors import RecordValidationError, RowFormatError, SchemaError
from ingest import (PAYSIM_TX_TYPES, WindowIndex, assign_windows, parse_transactions,
                    stratified_subsample, transaction_vocabulary)


class TestParseTransactions:
    """Test parsing of PaySim-layout CSV text"""

    def test_header_only_gives_empty_list(self, write_csv):
        assert parse_transactions(write_csv([])) == []

    def test_fixture_row(self, write_csv):
        path = write_csv(["1,PAYMENT,100.0,A,100.0,0.0,B,0.0,100.0,0,0"])
        records = parse_transactions(path)
        assert len(records) == 1
        record = records[0]
        assert record.step == 1
        assert record.tx_type == "PAYMENT"
        assert record.amount == 100.0
        assert record.src_id == "A"
        assert record.dst_id == "B"
        assert record.src_balance_before == 100.0
        assert record.dst_balance_after == 100.0
        assert record.is_fraud is False

    def test_fraud_flag(self, write_csv):
        records = parse_transactions(write_csv(["3,TRANSFER,5.0,A,5.0,0.0,B,0.0,0.0,1,0"]))
        assert records[0].is_fraud is True

    def test_flagged_fraud_column_is_ignored(self, write_csv):
        records = parse_transactions(write_csv(["3,TRANSFER,5.0,A,5.0,0.0,B,0.0,0.0,0,1"]))
        assert records[0].is_fraud is False

    def test_file_order_preserved(self, write_csv):
        rows = [f"{s},PAYMENT,1.0,A{s},1.0,0.0,B,0.0,1.0,0,0" for s in (5, 1, 3)]
        records = parse_transactions(write_csv(rows))
        assert [r.step for r in records] == [5, 1, 3]

    def test_accepts_stream(self):
        text = ("step,type,amount,nameOrig,oldbalanceOrg,newbalanceOrig,nameDest,"
                "oldbalanceDest,newbalanceDest,isFraud,isFlaggedFraud\n"
                "0,CASH_IN,2.5,A,0,2.5,B,10,7.5,0,0\n")
        records = parse_transactions(io.StringIO(text))
        assert records[0].amount == 2.5


class TestParseErrors:
    """Test schema, row-format and validation errors"""

    def test_missing_column_is_schema_error(self, write_csv):
        header = "step,type,amount,nameOrig,oldbalanceOrg,newbalanceOrig,nameDest,oldbalanceDest,newbalanceDest"
        with pytest.raises(SchemaError):
            parse_transactions(write_csv(["1,PAYMENT,1.0,A,1.0,0.0,B,0.0,1.0"], header=header))

    def test_non_numeric_amount_reports_line(self, write_csv):
        rows = ["1,PAYMENT,1.0,A,1.0,0.0,B,0.0,1.0,0,0",
                "2,PAYMENT,abc,A,1.0,0.0,B,0.0,1.0,0,0"]
        with pytest.raises(RowFormatError) as info:
            parse_transactions(write_csv(rows))
        assert info.value.line == 3

    def test_empty_entity_id(self, write_csv):
        with pytest.raises(RowFormatError) as info:
            parse_transactions(write_csv(["1,PAYMENT,1.0,,1.0,0.0,B,0.0,1.0,0,0"]))
        assert info.value.line == 2

    def test_negative_amount(self, write_csv):
        with pytest.raises(RecordValidationError) as info:
            parse_transactions(write_csv(["1,PAYMENT,-4.0,A,1.0,0.0,B,0.0,1.0,0,0"]))
        assert info.value.line == 2

    def test_negative_amount_is_value_error(self, write_csv):
        with pytest.raises(ValueError):
            parse_transactions(write_csv(["1,PAYMENT,-4.0,A,1.0,0.0,B,0.0,1.0,0,0"]))

    def test_line_numbers_count_blank_lines(self, write_csv):
        rows = ["1,PAYMENT,1.0,A,1.0,0.0,B,0.0,1.0,0,0",
                "",
                "2,PAYMENT,abc,A,1.0,0.0,B,0.0,1.0,0,0"]
        with pytest.raises(RowFormatError) as info:
            parse_transactions(write_csv(rows))
        assert info.value.line == 4

    def test_blank_lines_are_skipped(self, write_csv):
        rows = ["1,PAYMENT,1.0,A,1.0,0.0,B,0.0,1.0,0,0", "", "2,PAYMENT,2.0,A,1.0,0.0,B,0.0,1.0,1,0"]
        records = parse_transactions(write_csv(rows))
        assert [(r.step, r.is_fraud) for r in records] == [(1, False), (2, True)]

    def test_invalid_utf8_is_row_format_error(self, tmp_path):
        path = tmp_path / "latin.csv"
        path.write_bytes(b"step,type,amount,nameOrig,oldbalanceOrg,newbalanceOrig,nameDest,"
                         b"oldbalanceDest,newbalanceDest,isFraud,isFlaggedFraud\n"
                         b"1,PAYMENT,1.0,A,1.0,0.0,B,0.0,1.0,0,0\n"
                         b"2,PAYMENT,1.0,A\xff\xfe,1.0,0.0,B,0.0,1.0,0,0\n")
        with pytest.raises(RowFormatError) as info:
            parse_transactions(path)
        assert info.value.line == 3


class TestAssignWindows:
    """Test floor binning into uniform windows"""

    def test_step_zero(self, make_tx):
        ids, windows = assign_windows([make_tx(0, "A", "B")], 168)
        assert ids == [0]
        assert windows == [WindowIndex(0, 0, 168)]

    def test_boundary(self, make_tx):
        ids, _ = assign_windows([make_tx(167, "A", "B"), make_tx(168, "A", "B")], 168)
        assert ids == [0, 1]

    def test_three_windows(self, make_tx):
        ids, windows = assign_windows([make_tx(s, "A", "B") for s in (0, 200, 400)], 168)
        assert ids == [0, 1, 2]
        assert len(windows) == 3

    def test_empty_windows_retained(self, make_tx):
        ids, windows = assign_windows([make_tx(0, "A", "B"), make_tx(500, "A", "B")], 100)
        assert ids == [0, 5]
        assert [w.window_id for w in windows] == [0, 1, 2, 3, 4, 5]
        assert all(w.end_step - w.start_step == 100 for w in windows)

    def test_order_independent(self, make_tx):
        records = [make_tx(s, "A", "B") for s in (10, 300, 50, 700)]
        ids, _ = assign_windows(records, 168)
        reversed_ids, _ = assign_windows(records[::-1], 168)
        assert reversed_ids == ids[::-1]

    def test_bin_hours_must_be_positive(self, make_tx):
        with pytest.raises(ValueError):
            assign_windows([make_tx(0, "A", "B")], 0)


class TestStratifiedSubsample:
    """Test per-window quota subsampling"""

    def test_cap_above_size_is_identity(self, make_tx):
        records = [make_tx(s, "A", "B") for s in range(10)]
        assert stratified_subsample(records, cap=50, seed=1) == records

    def test_two_equal_windows_split_evenly(self, make_tx):
        records = [make_tx(0, f"A{i}", "B") for i in range(100)] + [make_tx(200, f"C{i}", "D") for i in range(100)]
        kept = stratified_subsample(records, cap=100, seed=7, bin_hours=168)
        window_ids, _ = assign_windows(kept, 168)
        assert window_ids.count(0) == 50
        assert window_ids.count(1) == 50

    def test_deterministic(self, make_tx):
        records = [make_tx(s % 500, f"A{s}", "B") for s in range(300)]
        first = stratified_subsample(records, cap=40, seed=3, bin_hours=100)
        second = stratified_subsample(records, cap=40, seed=3, bin_hours=100)
        assert first == second

    def test_preserves_original_order_and_content(self, make_tx):
        records = [make_tx(s, f"A{s}", "B") for s in range(0, 600, 3)]
        kept = stratified_subsample(records, cap=30, seed=5, bin_hours=100)
        positions = [records.index(r) for r in kept]
        assert positions == sorted(positions)
        assert all(r in records for r in kept)

    def test_small_windows_keep_one_record(self, make_tx):
        records = [make_tx(0, f"A{i}", "B") for i in range(97)]
        records += [make_tx(200, "X", "Y"), make_tx(400, "P", "Q"), make_tx(600, "R", "S")]
        kept = stratified_subsample(records, cap=10, seed=0, bin_hours=168)
        window_ids, _ = assign_windows(kept, 168)
        assert len(kept) == 10
        assert set(window_ids) == {0, 1, 2, 3}

    def test_cap_must_be_positive(self, make_tx):
        with pytest.raises(ValueError):
            stratified_subsample([make_tx(0, "A", "B")], cap=0)


class TestVocabulary:
    """Test transaction-type vocabulary"""

    def test_paysim_types_always_present(self, make_tx):
        assert transaction_vocabulary([]) == sorted(PAYSIM_TX_TYPES)

    def test_unknown_token_added_sorted(self, make_tx):
        vocabulary = transaction_vocabulary([make_tx(0, "A", "B", tx_type="AIRDROP")])
        assert vocabulary[0] == "AIRDROP"
        assert len(vocabulary) == len(PAYSIM_TX_TYPES) + 1
