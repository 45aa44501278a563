"""Bundled example networks used by the demos, tests, and CLI."""

from importlib import resources


def fixture_path(name):
    """Filesystem path of a bundled fixture config such as "topology2"."""
    if not name.endswith(".json"):
        name = name + ".json"
    return resources.files(__package__) / name


def fixture_names():
    return ("topology1", "topology2", "diamond")
