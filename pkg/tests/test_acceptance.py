"""Acceptance gate: one test per criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per criterion
is printed in the terminal summary.
"""

import itertools
import math
import os
import time

import numpy as np
import pytest
import scipy.stats

from vharmony import lexicon, numerics, plm, report, stats, surprisal
from vharmony.lexicon import Lexicon, SyntheticSpec, WordForm
from vharmony.numerics import ModelParams
from vharmony.plm import EOS, TrainingConfig

from conftest import uniform_model

PAIRED_HARMONY_ROWS = ("f_f/f_b", "b_b/b_f", "f_h/dish")
NON_HARMONY = ("arb", "ain", "hye", "eus", "ekk")


@pytest.fixture
def criterion(request):
    def record(title, detail=""):
        props = dict(request.node.user_properties)
        props.update(title=title, detail=detail)
        request.node.user_properties[:] = list(props.items())
    return record


# ---------------------------------------------------------------------------


def test_c1_gradient_correctness(criterion):
    criterion("1 gradient correctness")
    worst = 0.0
    for k in range(20):
        rng = np.random.default_rng(1000 + k)
        n_in, n_out = int(rng.integers(3, 10)), int(rng.integers(2, 7))
        B, T = int(rng.integers(1, 4)), int(rng.integers(1, 9))
        params = ModelParams.init(n_in, n_out, 4, 6, 2, rng)
        params = ModelParams({n: v + 0.3 * rng.standard_normal(v.shape) for n, v in params.items()})
        inputs = rng.integers(0, n_in, (B, T))
        targets = rng.integers(0, n_out, (B, T))
        weights = (rng.random((B, T)) < 0.8).astype(float)
        weights[0, -1] = 1.0
        _, grads = numerics.sequence_loss(params, inputs, targets, weights)
        loss = lambda p: numerics.sequence_loss(p, inputs, targets, weights, with_grads=False)[0]
        worst = max(worst, numerics.finite_diff_check(params, loss, grads, max_coords=None))
    criterion("1 gradient correctness", f"max relative error {worst:.2e} over 20 configurations")
    assert worst < 1e-4


def test_c2_normalization_and_restriction(criterion, tiny_model, small_split, small_lexicon):
    criterion("2 normalization and restriction")
    vocab = tiny_model.vocab
    assert set(vocab.outputs) == set(small_lexicon.inventory.vowels) | {EOS}
    worst = 0.0
    count = 0
    for include_eos in (False, True):
        for per_form in plm.predict_batch(tiny_model, small_split.test, include_eos=include_eos):
            for _, p in per_form:
                worst = max(worst, abs(p.sum() - 1.0))
                count += 1
    # the same logits spread over the whole segment alphabet: off-support mass is exactly zero
    full = list(vocab.inputs[2:]) + [EOS]
    support = [full.index(s) for s in vocab.outputs]
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(50, len(full))) * 5
    q = numerics.masked_softmax(logits, support)
    off = np.delete(q, support, axis=1)
    criterion("2 normalization and restriction", f"{count} distributions, max |sum-1| = {worst:.1e}, off-support max {off.max()}")
    assert worst < 1e-9
    assert (off == 0.0).all()
    assert np.abs(q.sum(axis=1) - 1).max() < 1e-9


def test_c3_uniform_model_identity(criterion):
    criterion("3 uniform-model identity")
    vowels = ("i", "e", "y", "ø", "ɯ", "a", "u", "o")
    model = uniform_model(vowels + ("p", "t", "k", "s"), vowels, d=3, h=4)
    lex = lexicon.generate_synthetic_lexicon(SyntheticSpec(n_words=200, consonants=("p", "t", "k", "s")), 0)
    expected = math.log2(len(model.vocab.outputs))
    checked = 0
    for per_form in plm.predict_batch(model, list(lex.forms)):
        for _, p in per_form:
            for v in vowels:
                assert surprisal.vowel_surprisal(p[model.vocab.out_index(v)]) == expected
                checked += 1
    criterion("3 uniform-model identity", f"{checked} vowel surprisals equal log2({len(model.vocab.outputs)}) exactly")
    assert checked > 0


def test_c4_preprocessing_fidelity(criterion):
    criterion("4 preprocessing fidelity")
    words = ["s i l m æ", "s i l m æ", "s i l m æ sː æ", "s i l m æ d æ"]
    forms = tuple(WordForm(tuple(x.split()), "fin") for x in words)
    out = lexicon.preprocess(Lexicon(forms, lexicon.build_inventory(forms), "fin"))
    got = {f.segments for f in out}
    criterion("4 preprocessing fidelity", " ".join(str(f) for f in out))
    assert got == {("s", "i", "l", "m", "æ", "sː", "æ"), ("s", "i", "l", "m", "æ", "d", "æ")}
    assert len(out) == 2


def test_c5_synthetic_harmony_detection(criterion, tmp_path):
    criterion("5 synthetic-harmony detection")
    start = time.perf_counter()
    rows = {}
    for strength in (1.0, 0.0):
        spec = SyntheticSpec(n_words=1000, min_vowels=2, max_vowels=4, strength=strength)
        cfg = report.RunConfig("synthetic", str(tmp_path / str(strength)), synthetic=spec, seed=0, figures=False)
        result = report.run_pipeline(cfg)
        rows[strength] = {r.condition: r for r in result.table.rows}
    elapsed = time.perf_counter() - start
    harmonic = [rows[1.0][c] for c in PAIRED_HARMONY_ROWS]
    control = [rows[0.0][c] for c in PAIRED_HARMONY_ROWS]
    criterion(
        "5 synthetic-harmony detection",
        "harmonic " + ", ".join(f"{r.condition} {r.delta_eta:.3f} (p={r.p_value:.1e})" for r in harmonic)
        + "; control " + ", ".join(f"{r.condition} {r.delta_eta:.3f}" for r in control)
        + f"; {elapsed:.0f}s",
    )
    for r in harmonic:
        assert r.kind == "paired"
        assert r.delta_eta <= -1.5 and r.p_value < 0.01
    for r in control:
        assert abs(r.delta_eta) < 0.3
    assert elapsed < 300


def test_c6_statistics_oracle_equivalence(criterion):
    criterion("6 statistics oracle equivalence")
    rng = np.random.default_rng(7)
    worst_w = worst_m = 0.0
    for _ in range(60):
        n = int(rng.integers(1, 11))
        a, b = rng.integers(0, 6, n).astype(float), rng.integers(0, 6, n).astype(float)
        if (a != b).any():
            d = a - b
            d = d[d != 0]
            ranks = scipy.stats.rankdata(np.abs(d))
            obs = ranks[d > 0].sum()
            sums = [sum(r for r, s in zip(ranks, sg) if s) for sg in itertools.product((0, 1), repeat=len(d))]
            lo = sum(x <= obs + 1e-9 for x in sums)
            hi = sum(x >= obs - 1e-9 for x in sums)
            oracle = min(1.0, 2 * min(lo, hi) / len(sums))
            worst_w = max(worst_w, abs(stats.wilcoxon_signed_rank(a, b, method="exact").p_value - oracle))
        n1, n2 = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        x, y = rng.integers(0, 5, n1).astype(float), rng.integers(0, 5, n2).astype(float)
        ranks = scipy.stats.rankdata(np.concatenate([x, y]))
        obs = ranks[:n1].sum()
        sums = [ranks[list(c)].sum() for c in itertools.combinations(range(n1 + n2), n1)]
        lo = sum(s <= obs + 1e-9 for s in sums)
        hi = sum(s >= obs - 1e-9 for s in sums)
        oracle = min(1.0, 2 * min(lo, hi) / len(sums))
        worst_m = max(worst_m, abs(stats.mann_whitney_u(x, y, method="exact").p_value - oracle))
    endpoints = [
        stats.effect_size_paired(0, 6, 6) == -1.0,
        stats.effect_size_paired(18, 6, 6) == 0.0,
        stats.effect_size_paired(36, 6, 6) == 1.0,
        stats.effect_size_unpaired(-12, 12) == -1.0,
        stats.effect_size_unpaired(0, 12) == 0.0,
        stats.effect_size_unpaired(12, 12) == 1.0,
    ]
    criterion("6 statistics oracle equivalence", f"Wilcoxon max |dp| {worst_w:.1e}, Mann-Whitney max |dp| {worst_m:.1e}, endpoints {sum(endpoints)}/6")
    assert worst_w < 1e-10 and worst_m < 1e-10
    assert all(endpoints)


def _northeuralex():
    path = report.default_wordlist(os.environ.get("NORTHEURALEX_DIR"))
    if path is None:
        pytest.fail(
            f"NorthEuraLex CLDF data not found: set {report.DATA_DIR_ENV} or NORTHEURALEX_DIR "
            "to a directory holding (cldf/)forms.csv",
            pytrace=False,
        )
    return path


def test_c7_wordlist_qualitative_reproduction(criterion, tmp_path):
    criterion("7 word-list qualitative reproduction")
    data = _northeuralex()

    def rows(lang, features=None):
        cfg = report.RunConfig(lang, str(tmp_path / lang), inputs=(str(data),), features=features, seed=0, figures=False)
        return {r.condition: r for r in report.run_pipeline(cfg).table.rows}

    tur = rows("tur", ("back",))["f_h/dish"]
    fin = rows("fin")["f_f/f_b"]
    flat = 0
    notes = []
    for lang in NON_HARMONY:
        r = rows(lang, ("back",))["f_h/dish"]
        flat += abs(r.delta_eta) < 0.5 or r.p_value >= 0.05
        notes.append(f"{lang} {r.delta_eta:.3f}")
    criterion(
        "7 word-list qualitative reproduction",
        f"tur f_h/dish {tur.delta_eta:.3f} (p={tur.p_value:.1e}); fin f_f/f_b {fin.delta_eta:.3f} "
        f"(p={fin.p_value:.1e}); flat {flat}/5 [{', '.join(notes)}]",
    )
    assert tur.delta_eta < 0 and tur.p_value < 0.01 and 1.5 <= -tur.delta_eta <= 6
    assert fin.delta_eta < 0 and fin.p_value < 0.01
    assert flat >= 4


def test_c8_determinism(criterion, tmp_path):
    criterion("8 determinism")
    spec = SyntheticSpec(n_words=400)
    training = TrainingConfig(embedding_size=8, hidden_size=32, max_epochs=4)
    outputs = []
    for run in ("a", "b"):
        cfg = report.RunConfig("synthetic", str(tmp_path / run), synthetic=spec, training=training, seed=11)
        report.run_pipeline(cfg)
        outputs.append(((tmp_path / run / "results.csv").read_bytes(), (tmp_path / run / "results.json").read_bytes()))
    criterion("8 determinism", f"results.csv {len(outputs[0][0])} bytes, identical={outputs[0] == outputs[1]}")
    assert outputs[0] == outputs[1]
