# -*- coding: utf-8 -*-

import os
from codecs import open
from typing import Dict, List

from setuptools import find_packages, setup

here = os.path.abspath(os.path.dirname(__file__))

about: Dict[str, str] = {}
with open(os.path.join(here, "meta_prompting", "__version__.py"), "r", "utf-8") as f:
    exec(f.read(), about)


def read_pins(name: str) -> List[str]:
    """Pinned requirements from a pip-compile output file, comments and options dropped."""
    with open(os.path.join(here, name), "r", "utf-8") as f:
        lines = (line.split("#", 1)[0].strip() for line in f)
        return [line for line in lines if line and not line.startswith("-")]


setup(
    name=about["__title__"],
    version=about["__version__"],
    description=about["__description__"],
    author=about["__author__"],
    author_email=about["__author_email__"],
    url=about["__url__"],
    python_requires=">=3.9",
    license=about["__license__"],
    classifiers=[
        "Natural Language :: English",
        "Development Status :: 3 - Alpha",
        "Programming Language :: Python :: 3.9",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    packages=find_packages(exclude=("meta_prompting.tests", "examples", "examples.*")),
    project_urls={"Source": about["__url__"]} if about["__url__"] else {},
    include_package_data=True,
    install_requires=read_pins("requirements.txt"),
    extras_require={"test": read_pins("testing.txt")},
    entry_points={"console_scripts": ["meta-prompting = meta_prompting.cli:main"]},
)
