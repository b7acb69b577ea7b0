"""Access to the fixture files shipped inside the package."""
from __future__ import annotations

from functools import lru_cache
from importlib import resources
from pathlib import Path

from .model import Metamodel
from .modelformat import load_metamodel
from .names import normalize_name

METAMODEL_FILES = ("ccs-mini.json", "ccs-mini-reduced.json")


def fixtures_dir() -> Path:
    return Path(str(resources.files("mbelens") / "fixtures"))


def fixture_path(name: str) -> Path:
    return fixtures_dir() / name


def read_fixture(name: str) -> bytes:
    return fixture_path(name).read_bytes()


@lru_cache(maxsize=None)
def bundled_metamodels() -> dict[str, Metamodel]:
    """Shipped metamodels keyed by normalized name."""
    result = {}
    for filename in METAMODEL_FILES:
        mm = load_metamodel(read_fixture(filename))
        result[normalize_name(mm.name)] = mm
    return result
