"""Bundled example documents (requests, policies and obligations)."""

from importlib import resources

NAMES = ("sample_request", "government_rule", "government_policy", "window_obligations", "window_policy", "region_policy")


def text(name):
    """Contents of ``data/corpus/<name>.xml``."""
    return resources.files("exacml").joinpath("data", "corpus", f"{name}.xml").read_text(encoding="utf-8")
