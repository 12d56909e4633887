import logging
import os
from os import PathLike
from typing import Union

from meta_prompting.models.exceptions import RunDirectoryLockedError

LOCK_NAME = ".lock"


class RunDirectory:
    """
    A run's output directory, held exclusively while the context is open.

    Entering creates the directory and a ``.lock`` file (atomic create, fails
    when it already exists); leaving removes the lock.
    """

    def __init__(self, path: Union[str, PathLike]):
        self.logger = logging.getLogger(__name__)
        self.logger.info(f"Initializing RunDirectory at {path}")
        self.root = os.fspath(path)
        self.lock_path = os.path.join(self.root, LOCK_NAME)
        self._locked = False

    def __enter__(self) -> "RunDirectory":
        os.makedirs(self.root, exist_ok=True)
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunDirectoryLockedError(self.lock_path) from None
        with os.fdopen(fd, "w") as f:
            f.write(f"{os.getpid()}\n")
        self._locked = True
        self.logger.debug(f"Locked {self.root}")
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        if self._locked:
            try:
                os.remove(self.lock_path)
            except FileNotFoundError:
                self.logger.warning(f"Lock file {self.lock_path} vanished before release")
            self._locked = False

    @property
    def locked(self) -> bool:
        return self._locked

    def path(self, *parts: str) -> str:
        """Path inside the run directory; parent directories are created."""
        full = os.path.join(self.root, *parts)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full
