"""Test configuration and fixtures for the sxextract test suite."""

from __future__ import annotations

from pathlib import Path
from typing import Any

import pytest

import sxextract
from sxextract.core import ExperimentConfig, get_preset
from sxextract.models import AnnotatedConversation, Conversation, Ontology, SpanLabel, Speaker, Status, Turn
from sxextract.services.corpus import build_ontology, generate_corpus

# Cached terminal reporter and verbosity settings
_tr: Any = None
_quiet = False

DATA_DIR = Path(sxextract.__file__).parent / "data"


def pytest_configure(config: pytest.Config) -> None:
    """Configure pytest with terminal reporter and verbosity settings."""
    global _tr, _quiet  # pylint: disable=global-statement
    _tr = config.pluginmanager.get_plugin("terminalreporter")
    _quiet = bool(getattr(config.option, "quiet", 0))


@pytest.fixture()
def testing_config() -> ExperimentConfig:
    """Tiny, noise-free configuration."""
    return get_preset("testing")


@pytest.fixture()
def tiny_ontology(testing_config: ExperimentConfig) -> Ontology:
    """Six symptoms over three body systems."""
    return build_ontology(testing_config.generator)


@pytest.fixture()
def tiny_corpus(testing_config: ExperimentConfig, tiny_ontology: Ontology) -> list[AnnotatedConversation]:
    """Four generated conversations with three annotators each."""
    return generate_corpus(testing_config.generator, 0, tiny_ontology, n_annotators=3, n_conversations=4, prefix="t")


@pytest.fixture()
def golden_ontology_path() -> Path:
    return DATA_DIR / "golden_ontology.tsv"


@pytest.fixture()
def golden_corpus_path() -> Path:
    return DATA_DIR / "golden_corpus.jsonl"


@pytest.fixture()
def clinic_ontology() -> Ontology:
    """Hand-written ontology matching the golden data files."""
    return Ontology.from_pairs(
        [
            ("cough", "respiratory"),
            ("shortness_of_breath", "respiratory"),
            ("headache", "neurological"),
            ("dizziness", "neurological"),
        ]
    )


@pytest.fixture()
def clinic_conversation() -> AnnotatedConversation:
    """Two-turn conversation with one cough mention per annotator."""
    conversation = Conversation(
        "clinic-1",
        (
            Turn(Speaker.DR, ("any", "cough", "?")),
            Turn(Speaker.PT, ("yes", "a", "dry", "cough")),
        ),
    )
    label = SpanLabel(1, 3, 4, "cough", Status.EXPERIENCED)
    return AnnotatedConversation(conversation, {"a": (label,), "b": (label,), "c": ()}, truth=(label,))


def pytest_runtest_logreport(report: pytest.TestReport) -> None:
    """Emit a brief RAG status line per test when not in quiet mode."""
    if report.when != "call" or _tr is None or _quiet:
        return

    outcome = report.outcome  # 'passed' | 'failed' | 'skipped'
    if outcome == "passed":
        rag = "GREEN"
    elif outcome == "failed":
        rag = "RED"
    else:
        rag = "AMBER"

    if getattr(report, "wasxfail", False):
        rag = "AMBER"

    _tr.write_line(
        f"{rag} {report.nodeid}",
        green=outcome == "passed",
        red=outcome == "failed",
        yellow=(outcome == "skipped" or getattr(report, "wasxfail", False)),
    )


def pytest_report_teststatus(
    report: pytest.TestReport,
    config: pytest.Config,  # pylint: disable=unused-argument
) -> tuple[str, str, str] | None:
    """Customize short progress output to R/A/G letters for -q mode."""
    if report.when != "call":
        # For setup/teardown failures or skips
        if report.skipped:
            return "skipped", "A", "AMBER"
        if report.failed:
            return "failed", "R", "RED"
        return None

    if report.passed:
        return "passed", "G", "GREEN"
    if report.skipped:
        return "skipped", "A", "AMBER"
    if report.failed:
        return "failed", "R", "RED"
    return None
