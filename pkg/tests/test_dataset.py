"""Tests for JSON Lines scene datasets."""

import json

import pytest

from latentplan.dataset import dataset_read, dataset_write, scene_to_dict
from latentplan.errors import DatasetParseError
from latentplan.scenes import SceneGenConfig, generate_scenes


@pytest.fixture(scope="module")
def ten_scenes():
    return generate_scenes(SceneGenConfig(), range(10))


class TestDatasetIO:
    """Tests for dataset_write and dataset_read."""

    def test_round_trip(self, tmp_path, ten_scenes) -> None:
        """Test that ten scenes read back equal to the originals."""
        path = tmp_path / "scenes.jsonl"
        assert dataset_write(ten_scenes, path) == 10
        assert dataset_read(path) == ten_scenes

    def test_one_scene_per_line(self, tmp_path, ten_scenes) -> None:
        """Test the JSON Lines layout and the documented field names."""
        path = tmp_path / "scenes.jsonl"
        dataset_write(ten_scenes, path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 10
        record = json.loads(lines[0])
        assert record["v"] == 1
        assert set(record) == {"v", "id", "map", "agents", "ego", "rng_seed"}
        agent = record["agents"][0]
        assert set(agent) == {"id", "class", "box", "past", "future", "motion_kind"}
        assert set(agent["past"]) == {"waypoints", "frame"}
        assert set(agent["past"]["waypoints"][0]) == {"x", "y", "t_index"}

    def test_empty_file(self, tmp_path) -> None:
        """Test that an empty file is an empty dataset."""
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert dataset_read(path) == []

    def test_truncated_last_line(self, tmp_path, ten_scenes) -> None:
        """Test that a truncated final line is reported with its line number."""
        path = tmp_path / "scenes.jsonl"
        dataset_write(ten_scenes[:3], path)
        text = path.read_text(encoding="utf-8")
        path.write_text(text[: len(text) - 40], encoding="utf-8")
        with pytest.raises(DatasetParseError) as exc_info:
            dataset_read(path)
        assert exc_info.value.line_number == 3
        assert "line 3" in str(exc_info.value)

    def test_wrong_version(self, tmp_path, ten_scenes) -> None:
        """Test that an unknown schema version is a parse error."""
        record = scene_to_dict(ten_scenes[0])
        record["v"] = 2
        path = tmp_path / "scenes.jsonl"
        path.write_text(json.dumps(record) + "\n", encoding="utf-8")
        with pytest.raises(DatasetParseError, match="version"):
            dataset_read(path)

    @pytest.mark.parametrize("record", ["[1, 2]", "5", '"scene"', "null"])
    def test_non_object_record(self, tmp_path, ten_scenes, record) -> None:
        """Test that valid JSON which is not an object is a parse error on its line."""
        path = tmp_path / "scenes.jsonl"
        dataset_write(ten_scenes[:1], path)
        with path.open("a", encoding="utf-8") as f:
            f.write(record + "\n")
        with pytest.raises(DatasetParseError) as exc_info:
            dataset_read(path)
        assert exc_info.value.line_number == 2
        assert "JSON object" in str(exc_info.value)

    def test_missing_file(self, tmp_path) -> None:
        """Test that a missing dataset raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            dataset_read(tmp_path / "nope.jsonl")
