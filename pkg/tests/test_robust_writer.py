import json
import os

import pandas as pd
import pytest

from src.data import robust_writer
from src.data.robust_writer import RobustWriter
from src.utils.errors import OutputError

FRAME = pd.DataFrame({"t": [0.0, 0.5], "pop_s": [1.0, 0.25]})


def _failing_replace(monkeypatch, fail_name):
    real_replace = os.replace

    def replace(src, dst):
        if os.path.basename(src) == f".tmp-{fail_name}":
            raise OSError("disk full")
        return real_replace(src, dst)

    monkeypatch.setattr(robust_writer.os, "replace", replace)


class TestBatch:
    def test_all_files_land_together(self, tmp_path):
        writer = RobustWriter(tmp_path)
        with writer.batch():
            writer.write_csv(FRAME, "a.csv")
            writer.write_json({"x": 1.0}, "b.json")
            assert not (tmp_path / "a.csv").exists()
        assert sorted(p.name for p in tmp_path.iterdir()) == ["a.csv", "b.json"]
        assert json.loads((tmp_path / "b.json").read_text(encoding="utf-8")) == {"x": 1.0}

    def test_exception_discards_staged(self, tmp_path):
        writer = RobustWriter(tmp_path)
        with pytest.raises(KeyboardInterrupt):
            with writer.batch():
                writer.write_csv(FRAME, "a.csv")
                raise KeyboardInterrupt
        assert list(tmp_path.iterdir()) == []


class TestCommitFailure:
    def test_partial_commit_rolled_back(self, tmp_path, monkeypatch):
        _failing_replace(monkeypatch, "b.csv")
        writer = RobustWriter(tmp_path)
        with pytest.raises(OutputError):
            with writer.batch():
                writer.write_csv(FRAME, "a.csv")
                writer.write_csv(FRAME, "b.csv")
                writer.write_csv(FRAME, "c.csv")
        assert list(tmp_path.iterdir()) == []

    def test_previous_files_restored(self, tmp_path, monkeypatch):
        (tmp_path / "a.csv").write_text("old a\n", encoding="utf-8")
        (tmp_path / "b.csv").write_text("old b\n", encoding="utf-8")
        _failing_replace(monkeypatch, "b.csv")
        writer = RobustWriter(tmp_path)
        with pytest.raises(OutputError):
            with writer.batch():
                writer.write_csv(FRAME, "a.csv")
                writer.write_csv(FRAME, "b.csv")
        assert sorted(p.name for p in tmp_path.iterdir()) == ["a.csv", "b.csv"]
        assert (tmp_path / "a.csv").read_text(encoding="utf-8") == "old a\n"
        assert (tmp_path / "b.csv").read_text(encoding="utf-8") == "old b\n"

    def test_overwrite_leaves_no_backups(self, tmp_path):
        (tmp_path / "a.csv").write_text("old\n", encoding="utf-8")
        RobustWriter(tmp_path).write_csv(FRAME, "a.csv")
        assert [p.name for p in tmp_path.iterdir()] == ["a.csv"]
        assert pd.read_csv(tmp_path / "a.csv").equals(FRAME)
