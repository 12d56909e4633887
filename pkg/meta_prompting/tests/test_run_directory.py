import os

import pytest

from meta_prompting.lib.run_directory import LOCK_NAME, RunDirectory
from meta_prompting.models.exceptions import RunDirectoryLockedError


def test_lock_is_held_while_open(tmp_path):
    root = tmp_path / "run"
    with RunDirectory(root) as run_dir:
        assert run_dir.locked
        assert (root / LOCK_NAME).read_text().strip() == str(os.getpid())
        assert run_dir.path("sub", "file.csv") == os.path.join(str(root), "sub", "file.csv")
        assert (root / "sub").is_dir()
    assert not run_dir.locked
    assert not (root / LOCK_NAME).exists()


def test_second_run_on_the_same_directory_is_refused(tmp_path):
    with RunDirectory(tmp_path) as first:
        with pytest.raises(RunDirectoryLockedError) as e:
            with RunDirectory(tmp_path):
                pass
        assert e.value.lock_path == first.lock_path
        assert first.locked
    with RunDirectory(tmp_path) as again:
        assert again.locked


def test_lock_is_released_on_error(tmp_path):
    with pytest.raises(ValueError):
        with RunDirectory(tmp_path):
            raise ValueError("stop")
    assert not (tmp_path / LOCK_NAME).exists()
