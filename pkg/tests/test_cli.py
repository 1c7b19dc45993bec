import json

import pytest

from vharmony import cli, report

TRAIN = ["--embedding-size", "4", "--hidden-size", "8", "--max-epochs", "2"]


class TestCli:
    def test_stagewise(self, tmp_path, capsys):
        lex, model, out = tmp_path / "lex.json", tmp_path / "m.bin", tmp_path / "a"
        assert cli.main(["synth", "--words", "150", "--out", str(lex), "--tsv", str(tmp_path / "f.tsv")]) == 0
        assert cli.main(["train", "--lexicon", str(lex), "--out", str(model), *TRAIN]) == 0
        assert cli.main(["analyze", "--lexicon", str(lex), "--model", str(model), "--out-dir", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "condition,delta_eta,statistic,p_value,effect_size,test" in printed
        assert cli.main(["report", "--run-dir", str(out)]) == 0
        assert (out / "figure_back.svg").exists()
        assert (out / "results.csv").read_text(encoding="utf-8").startswith("condition,")

    def test_ingest_from_data_dir(self, tmp_path, monkeypatch, capsys):
        (tmp_path / "forms.csv").write_text(
            "ID,Language_ID,Form,Segments\n1,fin,kala,k ɑ l ɑ\n2,fin,silmä,s i l m æ\n", encoding="utf-8")
        monkeypatch.setenv(report.DATA_DIR_ENV, str(tmp_path))
        out = tmp_path / "lex.json"
        assert cli.main(["ingest", "--language", "fin", "--out", str(out)]) == 0
        assert len(json.loads(out.read_text(encoding="utf-8"))["forms"]) == 2

    def test_run_synthetic(self, tmp_path, capsys):
        assert cli.main(["run", "--synthetic", "--words", "150", "--out-dir", str(tmp_path), *TRAIN]) == 0
        assert (tmp_path / "manifest.json").exists()
        assert cli.main(["report", "--run-dir", str(tmp_path)]) == 0

    def test_stage_error_exit_code(self, tmp_path, capsys):
        code = cli.main(["run", "--language", "fin", "--input", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path)])
        assert code == 2
        assert "stage 'config'" in capsys.readouterr().err

    def test_missing_input(self, tmp_path, monkeypatch):
        monkeypatch.delenv(report.DATA_DIR_ENV, raising=False)
        with pytest.raises(SystemExit):
            cli.main(["run", "--language", "fin", "--out-dir", str(tmp_path)])

    def test_help(self, capsys):
        with pytest.raises(SystemExit):
            cli.main(["--help"])
        assert "run" in capsys.readouterr().out
