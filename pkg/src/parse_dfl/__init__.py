"""Desk-scale multimodal decentralized SGD with feature fission and
partial alignment, plus a discrete partial-information-decomposition
calculator for validating synthetic multimodal data."""

__version__ = "0.1.0"

from . import cli, model, network, numerics, objectives, pid, seeds, synthdata, trainer  # noqa: F401
