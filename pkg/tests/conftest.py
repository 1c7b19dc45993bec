import numpy as np
import pytest

from vharmony import lexicon, plm
from vharmony.numerics import ModelParams
from vharmony.plm import TrainedModel, TrainingConfig, Vocabulary

TINY = TrainingConfig(embedding_size=6, hidden_size=12, n_layers=2, max_epochs=3, batch_size=16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_lexicon():
    spec = lexicon.SyntheticSpec(n_words=120)
    return lexicon.generate_synthetic_lexicon(spec, seed=3)


@pytest.fixture(scope="session")
def small_split(small_lexicon):
    return lexicon.split_dataset(small_lexicon, seed=0)


@pytest.fixture(scope="session")
def tiny_model(small_lexicon, small_split):
    return plm.train(small_split, small_lexicon.inventory, TINY)


def uniform_model(segments, vowels, d=4, h=5, n_layers=2) -> TrainedModel:
    """All-zero parameters: every prediction is uniform over the output alphabet."""
    vocab = Vocabulary.build(segments, vowels)
    params = ModelParams.zeros(len(vocab.inputs), len(vocab.outputs), d, h, n_layers)
    return TrainedModel(params, vocab, TrainingConfig(embedding_size=d, hidden_size=h, n_layers=n_layers))


@pytest.fixture
def uniform8():
    vowels = ("i", "e", "y", "ø", "ɯ", "a", "u", "o")
    return uniform_model(vowels + ("p", "t", "k"), vowels)


# one summary line per acceptance criterion, printed even when output is captured
_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        props = dict(report.user_properties)
        detail = props.get("detail", "")
        if report.failed and not detail:
            detail = str(report.longrepr.reprcrash.message).splitlines()[0] if hasattr(report.longrepr, "reprcrash") else ""
        _ACCEPTANCE[report.nodeid] = (report.outcome.upper(), f"{props.get('title', report.nodeid)}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for outcome, text in _ACCEPTANCE.values():
        terminalreporter.write_line(f"{'PASS' if outcome == 'PASSED' else 'FAIL'}  {text}")
