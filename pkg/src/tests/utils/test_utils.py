"""Tests for utility functions."""

from pathlib import Path

import pytest

from sxextract.utils import atomic_output_dir, format_duration, stable_hash, timer


class TestUtilityFunctions:
    """Test suite for utility functions."""

    def test_format_duration_milliseconds(self) -> None:
        """Test format_duration for milliseconds."""
        assert format_duration(0.001) == "1.0ms"
        assert format_duration(0.5) == "500.0ms"

    def test_format_duration_seconds(self) -> None:
        """Test format_duration for seconds."""
        assert format_duration(1.0) == "1.00s"
        assert format_duration(30.5) == "30.50s"

    def test_format_duration_minutes_and_hours(self) -> None:
        """Test format_duration for minutes and hours."""
        assert format_duration(150) == "2.5m"
        assert format_duration(7200) == "2.0h"

    def test_stable_hash_ignores_key_order(self) -> None:
        """Equal mappings hash equally regardless of insertion order."""
        assert stable_hash({"a": 1, "b": 2}) == stable_hash({"b": 2, "a": 1})
        assert stable_hash({"a": 1}) != stable_hash({"a": 2})
        assert len(stable_hash("x", length=8)) == 8

    def test_timer_preserves_function(self) -> None:
        """The timing decorator returns the wrapped result and keeps its name."""

        @timer
        def double(x: int) -> int:
            return 2 * x

        assert double(4) == 8
        assert double.__name__ == "double"


class TestAtomicOutputDir:
    """Output directories appear only when complete."""

    def test_creates_target_on_success(self, tmp_path: Path) -> None:
        """Staged files land in the target directory."""
        target = tmp_path / "out"
        with atomic_output_dir(target) as staging:
            (staging / "a.txt").write_text("done", encoding="utf-8")
            assert not target.exists()
        assert (target / "a.txt").read_text(encoding="utf-8") == "done"

    def test_replaces_existing_target(self, tmp_path: Path) -> None:
        """An existing target is swapped for the new contents."""
        target = tmp_path / "out"
        target.mkdir()
        (target / "old.txt").write_text("old", encoding="utf-8")
        with atomic_output_dir(target) as staging:
            (staging / "new.txt").write_text("new", encoding="utf-8")
        assert sorted(p.name for p in target.iterdir()) == ["new.txt"]

    def test_failure_leaves_target_untouched(self, tmp_path: Path) -> None:
        """A failing block removes the staging directory only."""
        target = tmp_path / "out"
        target.mkdir()
        (target / "keep.txt").write_text("keep", encoding="utf-8")
        with pytest.raises(RuntimeError):
            with atomic_output_dir(target) as staging:
                (staging / "partial.txt").write_text("x", encoding="utf-8")
                raise RuntimeError("boom")
        assert sorted(p.name for p in target.iterdir()) == ["keep.txt"]
        assert [p.name for p in tmp_path.iterdir()] == ["out"]
