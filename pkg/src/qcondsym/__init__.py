"""Conditional symmetries (first type, p-th type, non-classical) for evolution systems."""

from importlib import resources

__version__ = "0.1.0"


def data_path(*parts: str):
    """Path to a bundled data file, e.g. data_path("reference", 'first_type.sys')."""
    return resources.files(__name__).joinpath("data", *parts)


def read_data(*parts: str) -> str:
    return data_path(*parts).read_text(encoding="utf-8")
