import pytest

from ssmrobust.config import config_hash, parse_config_file, resolve_config
from ssmrobust.errors import ConfigError, FormatError
from ssmrobust.reporting import (
    EvalReport,
    emit_csv,
    emit_markdown,
    emit_report,
    merge_reports,
    parse_csv,
)


def _whitebox_report():
    return EvalReport(
        "whitebox",
        rows=[
            ("clean", 0.0, 0.9125, 200, 0),
            ("fgsm", 1 / 255, 0.55, 200, 0),
            ("pgd", 1 / 255, 0.12345678901234567, 200, 3),
        ],
        meta={"config_hash": "abc123", "seed": "42", "tool": "ssmrobust 0.1.0"},
    )


class TestCsvRoundTrip:
    def test_parse_emit_identity(self, tmp_path):
        report = _whitebox_report()
        path = tmp_path / "r.csv"
        emit_csv(report, path)
        assert parse_csv(path) == report

    def test_full_precision_floats(self, tmp_path):
        report = _whitebox_report()
        path = tmp_path / "r.csv"
        emit_csv(report, path)
        back = parse_csv(path)
        assert back.rows[2][2] == 0.12345678901234567

    def test_empty_rows_header_only(self, tmp_path):
        report = EvalReport("patchdrop", rows=[], meta={"tool": "x"})
        path = tmp_path / "empty.csv"
        emit_csv(report, path)
        lines = path.read_text().strip().split("\n")
        assert lines[-1] == "condition,ratio,accuracy,n,nonfinite"
        assert parse_csv(path) == report

    def test_emission_is_byte_deterministic(self, tmp_path):
        report = _whitebox_report()
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_csv(report, a)
        emit_csv(report, b)
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            EvalReport("mystery", rows=[])

    def test_row_width_checked(self):
        with pytest.raises(ValueError):
            EvalReport("whitebox", rows=[("clean", 0.0)])

    def test_malformed_csv(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("accuracy\n1.0\n")
        with pytest.raises(FormatError):
            parse_csv(path)

    def test_markdown_written_alongside(self, tmp_path):
        report = _whitebox_report()
        csv_path, md_path = emit_report(report, tmp_path / "out.csv")
        assert md_path.endswith("out.md")
        text = open(md_path).read()
        assert "91.25" in text  # accuracy printed as percent, 2 decimals


class TestMerge:
    def test_merge_is_row_concatenation(self, tmp_path):
        a, b = _whitebox_report(), _whitebox_report()
        merged = merge_reports([("alpha", a), ("beta", b)])
        assert merged.columns[0] == "dataset"
        assert len(merged.rows) == len(a.rows) + len(b.rows)
        assert [r for r in merged.rows if r[0] == "alpha"] == [("alpha",) + r for r in a.rows]

    def test_kind_mismatch_rejected(self):
        a = _whitebox_report()
        b = EvalReport("patchdrop", rows=[])
        with pytest.raises(ValueError):
            merge_reports([("a", a), ("b", b)])

    def test_merged_round_trip(self, tmp_path):
        merged = merge_reports([("a", _whitebox_report())])
        path = tmp_path / "m.csv"
        emit_csv(merged, path)
        assert parse_csv(path) == merged


class TestConfig:
    def test_file_grammar(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(
            "# an experiment\n"
            "seed = 7\n"
            "attack.eps = 1/255,4/255\n"
            "\n"
            "faults.budgets = 1,2,4\n"
        )
        values = parse_config_file(path)
        assert values["seed"] == "7"
        cfg, raw = resolve_config(values)
        assert cfg["seed"] == 7
        assert cfg["attack.eps"] == (1 / 255, 4 / 255)
        assert cfg["faults.budgets"] == (1, 2, 4)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("spline.reticulation = 9\n")
        with pytest.raises(ConfigError):
            parse_config_file(path)

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            resolve_config({}, {"train.epochs": "many"})

    def test_hash_stable_and_value_sensitive(self):
        _, raw_a = resolve_config({}, {"seed": "1"})
        _, raw_b = resolve_config({}, {"seed": "1"})
        _, raw_c = resolve_config({}, {"seed": "2"})
        assert config_hash(raw_a) == config_hash(raw_b)
        assert config_hash(raw_a) != config_hash(raw_c)

    def test_fraction_floats(self):
        cfg, _ = resolve_config({}, {"patchdrop.baseline": "1/4"})
        assert cfg["patchdrop.baseline"] == 0.25
