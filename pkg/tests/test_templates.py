import pytest
from jinja2 import TemplateNotFound

from app import templates
from app.harness import render_table_report

ROWS = [
    {"table": 1, "row_param": 0.1, "method": "baseline", "coverage": 0.3, "median_len": 0.44,
     "max_len": 0.58, "reps": 100, "failures": 0, "seed": 7},
    {"table": 1, "row_param": 0.1, "method": "proposed", "coverage": 0.96, "median_len": 0.46,
     "max_len": 0.6, "reps": 100, "failures": 2, "seed": 7},
    {"table": 1, "row_param": 0.2, "method": "baseline", "coverage": 0.24, "median_len": 0.45,
     "max_len": 0.6, "reps": 100, "failures": 0, "seed": 7},
    {"table": 1, "row_param": 0.2, "method": "proposed", "coverage": 0.98, "median_len": 0.47,
     "max_len": 0.59, "reps": 100, "failures": 0, "seed": 7},
]


@pytest.fixture(autouse=True)
def default_templates():
    templates.init_templates(None)
    yield
    templates.init_templates(None)


class TestTableReport:
    def test_default_template(self):
        text = render_table_report(ROWS)
        assert text.startswith("# Table 1: Coverage for varying inverse temperature beta")
        assert "| parameter | baseline | proposed |" in text
        assert "| 0.2 | 0.24 | 0.98 |" in text
        assert "| 0.1 | proposed | 0.96 | 0.460 | 0.600 | 2 |" in text

    def test_writes_file(self, tmp_path):
        path = tmp_path / "t1.md"
        text = render_table_report(ROWS, path)
        assert path.read_text(encoding="utf-8") == text

    def test_missing_coverage_is_marked(self):
        rows = [dict(ROWS[0], coverage=float("nan"))]
        assert "n/a" in render_table_report(rows)


class TestTemplateOverrides:
    def test_user_directory_takes_priority(self, tmp_path):
        (tmp_path / "table_report.md.j2").write_text("custom {{ table }}", encoding="utf-8")
        templates.init_templates(str(tmp_path))
        assert render_table_report(ROWS) == "custom 1"

    def test_missing_user_directory_falls_back(self, tmp_path, caplog):
        templates.init_templates(str(tmp_path / "absent"))
        assert "NETGLM_TEMPLATES_DIR" in caplog.text
        assert render_table_report(ROWS).startswith("# Table 1")

    def test_unknown_template(self):
        with pytest.raises(TemplateNotFound):
            templates.render_template("nope.md.j2")
