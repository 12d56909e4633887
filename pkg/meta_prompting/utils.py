import hashlib
import logging
from typing import Union

import numpy as np

logger = logging.getLogger(__name__)

NOISY_LOGGERS = ("urllib3", "matplotlib", "asyncio")


def get_full_class_name(obj: object) -> str:
    """
    Gets the full class name and path of an object for use in errors.
    :param obj: The object to get the name and path of
    :return: The full name and path as a string.
    """
    module = obj.__class__.__module__
    if module is None or module == str.__class__.__module__:
        return obj.__class__.__name__
    return module + "." + obj.__class__.__name__



def configure_logging(level: Union[int, str] = logging.INFO) -> None:
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
    logging.basicConfig(
        encoding="utf-8",
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    for name in NOISY_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)


def worker_seed(base_seed: int, worker_index: int) -> int:
    """Seed for the ``worker_index``-th parallel stream: base seed XOR worker index."""
    return int(base_seed) ^ int(worker_index)


def worker_rng(base_seed: int, worker_index: int) -> np.random.Generator:
    return np.random.default_rng(worker_seed(base_seed, worker_index))


def derive_seed(base_seed: int, *tags: Union[int, str]) -> int:
    """
    Independent, reproducible child seed for a named stream (episode pools,
    model init, pretraining...). Uses numpy's SeedSequence spawning so that
    streams derived from the same base seed do not overlap.
    """
    entropy = [int(base_seed)]
    for tag in tags:
        if isinstance(tag, str):
            entropy.append(int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "little"))
        else:
            entropy.append(int(tag))
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def progress_enabled() -> bool:
    return logging.getLogger().getEffectiveLevel() <= logging.INFO
