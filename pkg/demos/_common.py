"""Shared helpers for the demo scripts."""

from pathlib import Path

from catbranch import load_model

MODELS = Path(__file__).resolve().parent / "models"


def model(name: str):
    return load_model(MODELS / f"{name}.json")
