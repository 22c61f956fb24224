"""
Oracle suites run by ``sxextract verify``.

Each suite compares an implementation against an independent reference:
exhaustive enumeration for the CRF, central differences for gradients,
hand-computed fixtures for the metrics and a grammar parser for decodes.
Suites collect failures instead of raising so one run reports all of them.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp

from sxextract.core import GeneratorConfig, get_preset
from sxextract.core.logging import get_logger
from sxextract.extractors.crf import SPAN_TAGS, CrfParams, crf_nll, log_partition, sequence_score, viterbi_decode
from sxextract.extractors.seq2seq import Seq2SeqModel, beam_decode, greedy_decode, seq2seq_loss
from sxextract.extractors.span_attribute import SatModel, sat_loss
from sxextract.extractors.vocab import Vocab
from sxextract.models import MentionSet, Ontology
from sxextract.nn import value as F
from sxextract.nn.gradcheck import grad_check
from sxextract.nn.value import Value
from sxextract.services.corpus import build_ontology, generate_corpus
from sxextract.services.metrics import cohen_kappa, evaluate_corpus, unweighted_prf, weighted_prf
from sxextract.utils import format_duration

__all__ = [
    "SuiteResult",
    "VerificationReport",
    "SUITES",
    "crf_oracle_suite",
    "gradient_suite",
    "metric_fixture_suite",
    "decode_grammar_suite",
    "run_verification",
]

logger = get_logger("services.verification")


@dataclass
class SuiteResult:
    name: str
    checks: int = 0
    failures: list[str] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def check(self, ok: bool, message: str) -> None:
        self.checks += 1
        if not ok:
            self.failures.append(message)


@dataclass
class VerificationReport:
    suites: list[SuiteResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "suites": [
                {
                    "name": s.name,
                    "passed": s.passed,
                    "checks": s.checks,
                    "failures": s.failures,
                    "seconds": round(s.seconds, 3),
                }
                for s in self.suites
            ],
        }


def _brute_force(em: np.ndarray, trans: np.ndarray) -> tuple[float, float]:
    """``(log Z, best score)`` by enumerating every tag sequence."""
    size = SPAN_TAGS.size
    n = em.shape[0]
    paths = np.array(list(itertools.product(range(size), repeat=n)))
    scores = trans[SPAN_TAGS.start, paths[:, 0]] + trans[paths[:, -1], SPAN_TAGS.stop]
    scores = scores + em[np.arange(n), paths].sum(axis=1)
    if n > 1:
        scores = scores + trans[paths[:, :-1], paths[:, 1:]].sum(axis=1)
    return float(logsumexp(scores)), float(scores.max())


def crf_oracle_suite(seed: int = 0, draws: int = 1000, max_len: int = 6) -> SuiteResult:
    """Forward algorithm and Viterbi against enumeration over the 3-tag set."""
    result = SuiteResult("crf")
    rng = np.random.default_rng([seed, 11])
    params = CrfParams(SPAN_TAGS, SPAN_TAGS.size, rng)
    params.label_embeddings.data = np.eye(SPAN_TAGS.size)
    for draw in range(draws):
        n = int(rng.integers(1, max_len + 1))
        params.transitions.data = rng.normal(0.0, 1.0, params.transitions.shape)
        params.pin_boundaries()
        h = rng.normal(0.0, 1.0, (n, SPAN_TAGS.size))
        log_z, best = _brute_force(h, params.transitions.data)
        with F.no_grad():
            got_z = log_partition(Value(h), params).item()
        result.check(abs(got_z - log_z) <= 1e-6, f"draw {draw}: log Z {got_z} vs enumeration {log_z}")
        path, score = viterbi_decode(Value(h), params)
        result.check(abs(score - best) <= 1e-9, f"draw {draw}: viterbi score {score} vs enumeration {best}")
        with F.no_grad():
            rescored = sequence_score(Value(h), path, params).item()
        result.check(abs(rescored - score) <= 1e-9, f"draw {draw}: path rescoring {rescored} vs {score}")
    return result


def _op_losses(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Value], dict[str, Value]]]:
    x = Value(rng.normal(0.0, 1.0, (3, 4)), requires_grad=True)
    w = Value(rng.normal(0.0, 1.0, (4, 2)), requires_grad=True)
    pos = Value(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    weights = rng.normal(0.0, 1.0, (3, 4))
    ids = [int(i) for i in rng.integers(0, 3, 5)]

    def weighted(v: Value) -> Value:
        return F.sum(v * Value(weights))

    return {
        "add_mul": (lambda: weighted(x * pos + x - pos / 3.0), {"x": x, "pos": pos}),
        "div": (lambda: weighted(x / pos), {"x": x, "pos": pos}),
        "matmul": (lambda: F.sum(F.tanh(F.matmul(x, w))), {"x": x, "w": w}),
        "sigmoid_exp_log": (lambda: weighted(F.sigmoid(x) + F.log(pos) + F.exp(x * 0.5)), {"x": x, "pos": pos}),
        "softmax": (lambda: weighted(F.softmax(x, axis=-1)), {"x": x}),
        "log_softmax": (lambda: weighted(F.log_softmax(x, axis=0)), {"x": x}),
        "logsumexp": (lambda: F.sum(F.logsumexp(x, axis=1) * Value(weights[:, 0])), {"x": x}),
        "concat_take": (lambda: F.sum(F.concat([x[1], F.take(x, (ids[:3], [0, 1, 2]))])), {"x": x}),
        "mean_reshape": (
            lambda: F.sum(F.reshape(F.mean(x * pos, axis=0), (2, 2)) * Value(weights[:2, :2])),
            {"x": x, "pos": pos},
        ),
        "embedding": (lambda: weighted(F.embedding(pos, ids[:3])), {"table": pos}),
    }


def _toy_units(seed: int) -> tuple[Ontology, Any]:
    generator = GeneratorConfig(
        n_symptoms=4, n_systems=2, n_conversations=4, min_turns=2, max_turns=3, mention_rate=4.0
    )
    ontology = build_ontology(generator)
    return ontology, generate_corpus(generator, seed, ontology, n_annotators=1)


def _sat_model(seed: int) -> tuple[SatModel, Any]:
    ontology, corpus = _toy_units(seed)
    base = get_preset("testing").sat
    config = dataclasses.replace(base, input_unit="window", window_turns=2, alpha=0.7)
    model = SatModel(config, Vocab.build(item.conversation for item in corpus), ontology, seed)
    examples = [ex for ex in model.training_examples(corpus) if ex.target]
    return model, examples[0]


def _seq2seq_model(seed: int) -> tuple[Seq2SeqModel, Any]:
    ontology, corpus = _toy_units(seed)
    base = get_preset("testing").seq2seq
    config = dataclasses.replace(base, window_k=2)
    model = Seq2SeqModel(config, Vocab.build(item.conversation for item in corpus), ontology, seed)
    examples = [ex for ex in model.training_examples(corpus) if len(ex.target) > 1]
    return model, examples[0]


def gradient_suite(seed: int = 0, seeds: int = 20, tolerance: float = 1e-4) -> SuiteResult:
    """Central differences (step 1e-5, float64) for the ops and every model loss."""
    result = SuiteResult("gradients")

    def record(label: str, loss_fn: Callable[[], Value], params: dict[str, Value], s: int) -> None:
        report = grad_check(loss_fn, params, tolerance=tolerance, step=1e-5, seed=s)
        detail = report.failures[0] if report.failures else None
        result.check(report.passed, f"{label} seed {s}: max relative error {report.max_relative_error:.2e} ({detail})")

    for s in range(seed, seed + seeds):
        rng = np.random.default_rng([s, 13])
        for name, (loss_fn, params) in _op_losses(rng).items():
            record(f"op {name}", loss_fn, params, s)

        crf = CrfParams(SPAN_TAGS, 4, rng)
        h = Value(rng.normal(0.0, 1.0, (5, 4)), requires_grad=True)
        gold = [int(t) for t in rng.integers(0, SPAN_TAGS.size, 5)]
        record("crf_nll", lambda: crf_nll(h, gold, crf), {"h": h, **crf.parameters()}, s)

        sat, example = _sat_model(s)
        alpha = sat.config.alpha
        params = sat.parameters()
        record("sat p=1", lambda: sat_loss(example.ids, example.target, sat, alpha, 1.0, coin=True), params, s)
        record("sat p=0", lambda: sat_loss(example.ids, example.target, sat, alpha, 0.0, coin=False), params, s)

        s2s, pair = _seq2seq_model(s)
        record("seq2seq", lambda: seq2seq_loss(pair.ids, pair.target, s2s), s2s.parameters(), s)
    return result


def metric_fixture_suite() -> SuiteResult:
    """Hand-computed metric values and conventions."""
    result = SuiteResult("metrics")
    pain, nausea, cough = ("pain", "experienced"), ("nausea", "other"), ("cough", "not_experienced")

    def close(got: tuple[float, float], want: tuple[float, float]) -> bool:
        return all(math.isclose(a, b, abs_tol=1e-12) for a, b in zip(got, want))

    one = MentionSet.from_keys([pain])
    result.check(close(unweighted_prf(one, one), (1.0, 1.0)), "identical sets must score 1")
    pred = MentionSet.from_keys([pain, nausea])
    ref = MentionSet.from_keys([pain, cough])
    result.check(close(unweighted_prf(pred, ref), (0.5, 0.5)), "half-overlap sets must score 0.5")
    sx_pred = MentionSet.from_keys([pain])
    sx_ref = MentionSet.from_keys([("pain", "not_experienced")])
    result.check(close(unweighted_prf(sx_pred, sx_ref, "sx"), (1.0, 1.0)), "sx view must ignore status")
    w_pred = MentionSet({pain: 1, nausea: 1})
    w_ref = MentionSet({pain: 2, cough: 1})
    result.check(close(weighted_prf(w_pred, w_ref), (0.5, 2.0 / 3.0)), "weighted fixture must give P=1/2, R=2/3")
    result.check(close(weighted_prf(w_pred.scaled(2), w_ref.scaled(2)), (0.5, 2.0 / 3.0)), "weighting is scale free")
    empty = MentionSet()
    result.check(close(unweighted_prf(empty, empty), (1.0, 1.0)), "empty vs empty must score 1")
    result.check(close(unweighted_prf(one, empty), (0.0, 0.0)), "nonempty vs empty scores 0 on both sides")
    result.check(close(unweighted_prf(empty, one), (0.0, 0.0)), "empty vs nonempty scores 0 on both sides")

    rng = np.random.default_rng(17)
    keys = [(f"s{i}", "experienced") for i in range(6)]
    agree = True
    for _ in range(1000):
        a = MentionSet.from_keys(k for k in keys if rng.random() < 0.5)
        b = MentionSet.from_keys(k for k in keys if rng.random() < 0.5)
        agree &= close(weighted_prf(a, b), unweighted_prf(a, b))
    result.check(agree, "weighted must equal unweighted when all counts are 1")

    report = evaluate_corpus(
        {"a": MentionSet.from_keys([pain]), "b": MentionSet.from_keys([pain, nausea])},
        {"a": MentionSet.from_keys([pain, cough]), "b": MentionSet.from_keys([pain])},
        mode="single",
    )
    cell = report.cell("unweighted", "sx_status")
    result.check(close((cell.precision, cell.recall), (0.75, 0.75)), "corpus P/R must be the per-conversation means")
    result.check(math.isclose(cell.f1, 0.75), "corpus F1 must be the harmonic mean of the means")

    universe = [pain, nausea]
    result.check(math.isclose(cohen_kappa(one, one, universe), 1.0), "kappa of identical sets must be 1")
    other = MentionSet.from_keys([nausea])
    result.check(math.isclose(cohen_kappa(one, other, universe), -1.0), "complete disagreement must give kappa -1")
    return result


def _grammar_ok(tokens: list[int], model: Seq2SeqModel) -> bool:
    targets = model.targets
    if not tokens or tokens[-1] != targets.eos or len(tokens) % 2 == 0:
        return False
    body = tokens[:-1]
    return all(targets.symptom_mask[t] for t in body[0::2]) and all(targets.status_mask[t] for t in body[1::2])


def decode_grammar_suite(seed: int = 0, models: int = 50) -> SuiteResult:
    """Beam output parses as (symptom, status) pairs plus EOS; width 1 equals greedy."""
    result = SuiteResult("grammar")
    generator = GeneratorConfig(n_symptoms=5, n_systems=2)
    ontology = build_ontology(generator)
    vocab = Vocab(["back", "pain", "no", "yes", "my", "knee"])
    base = get_preset("testing").seq2seq
    for m in range(models):
        model = Seq2SeqModel(base, vocab, ontology, seed + m)
        rng = np.random.default_rng([seed, m, 19])
        ids = [int(i) for i in rng.integers(0, len(vocab), int(rng.integers(2, 10)))]
        beam = beam_decode(ids, model, base.beam_width, base.max_decode_len)
        result.check(_grammar_ok(beam.tokens, model), f"model {m}: beam output {beam.tokens} breaks the grammar")
        rows = beam.attention
        result.check(
            rows.size == 0 or bool(np.allclose(rows.sum(axis=1), 1.0, atol=1e-9)),
            f"model {m}: attention rows do not sum to 1",
        )
        narrow = beam_decode(ids, model, 1, base.max_decode_len)
        greedy = greedy_decode(ids, model, base.max_decode_len)
        result.check(
            narrow.tokens == greedy.tokens, f"model {m}: width-1 beam {narrow.tokens} != greedy {greedy.tokens}"
        )
    return result


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "crf": crf_oracle_suite,
    "gradients": gradient_suite,
    "metrics": metric_fixture_suite,
    "grammar": decode_grammar_suite,
}


def run_verification(seed: int = 0, quick: bool = False, only: list[str] | None = None) -> VerificationReport:
    """Run the selected suites; ``quick`` shrinks draw and seed counts."""
    sizes: dict[str, dict[str, int]] = {
        "crf": {"draws": 50 if quick else 1000},
        "gradients": {"seeds": 2 if quick else 20},
        "metrics": {},
        "grammar": {"models": 5 if quick else 50},
    }
    report = VerificationReport()
    for name in only or list(SUITES):
        started = time.perf_counter()
        kwargs: dict[str, Any] = dict(sizes[name])
        if name != "metrics":
            kwargs["seed"] = seed
        suite = SUITES[name](**kwargs)
        suite.seconds = time.perf_counter() - started
        report.suites.append(suite)
        logger.info(
            "verification suite finished",
            extra={
                "suite": name,
                "passed": suite.passed,
                "checks": suite.checks,
                "failures": len(suite.failures),
                "duration": format_duration(suite.seconds),
            },
        )
    return report
