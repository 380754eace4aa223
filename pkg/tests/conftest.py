import pathlib

import pytest

MODELS = pathlib.Path(__file__).resolve().parent.parent / "models"

CORPUS = [
    "linear_regression.ldm",
    "binomial_logits.ldm",
    "multilevel_a.ldm",
    "multilevel_b.ldm",
    "zero_inflated.ldm",
    "ar2.ldm",
    "ar1.ldm",
    "dbn.ldm",
]


def model_text(name: str) -> str:
    return (MODELS / name).read_text()


@pytest.fixture(scope="session")
def corpus_texts():
    return {name: model_text(name) for name in CORPUS}
