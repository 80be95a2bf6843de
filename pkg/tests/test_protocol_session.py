import io
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entqkd import streams
from entqkd.adversary import AttackPolicy, EveAction, EveTag
from entqkd.protocol_session import (
    CSV_COLUMNS,
    DIAGONAL_SUBSETS,
    PairRecord,
    RecordTable,
    SessionConfig,
    SubsetLabel,
    alice_choose,
    bob_choose,
    expected_bob_basis,
    run_session,
    run_trial,
    session_from_records,
    sift,
)
from entqkd.quantum_core import (
    Amplitudes,
    BasisTag,
    SourceChoice,
    basis_for,
    make_pair_state,
    measure_pair_first,
    overlap_prob,
)

GOLDEN = Path(__file__).parent / "golden"
PLAIN, PRIMED = SourceChoice.PLAIN, SourceChoice.PRIMED
RECT, DIAG, PLUS, MINUS = BasisTag.RECT, BasisTag.DIAG, BasisTag.PLUS_THETA, BasisTag.MINUS_THETA


def within_4_sigma(count, n, p):
    return abs(count - n * p) <= 4 * math.sqrt(n * p * (1 - p))


def record(source, a_basis, a_bit, b_basis, b_bit=0):
    return PairRecord(0, source, a_basis, a_bit, EveAction(EveTag.PASSIVE), b_basis, b_bit, None)


class TestStreams:
    def test_scalar_matches_vector(self):
        idx = np.array([0, 1, 2, 10**6, 2**40 + 3])
        for seed in (0, 1, 2**64 - 1):
            for slot in range(streams.SLOTS_PER_TRIAL):
                vec = streams.uniforms(seed, idx, slot)
                assert vec.tolist() == [streams.uniform(seed, int(i), slot) for i in idx]

    def test_unit_interval_and_uniformity(self):
        u = streams.uniforms(99, np.arange(200_000), 0)
        assert u.min() >= 0.0 and u.max() < 1.0
        assert within_4_sigma((u < 0.25).sum(), len(u), 0.25)

    def test_seed_normalization(self):
        assert streams.uniform(-1, 5, 2) == streams.uniform(2**64 - 1, 5, 2)

    def test_slots_differ(self):
        assert len(set(streams.trial_uniforms(3, 7))) == streams.SLOTS_PER_TRIAL


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs, field",
        [
            ({"epsilon": 0.0}, "epsilon"),
            ({"epsilon": 1.2}, "epsilon"),
            ({"n_pairs": 0}, "n_pairs"),
            ({"alpha_sq": 1.1}, "alpha_sq"),
            ({"m_samples": (1, 2, 3)}, "m_samples"),
            ({"e_max": 0.0}, "e_max"),
        ],
    )
    def test_rejects(self, kwargs, field):
        with pytest.raises(ValueError, match=field):
            SessionConfig(**kwargs)

    def test_epsilon_one_allowed(self):
        assert SessionConfig(epsilon=1.0).epsilon == 1.0


class TestChoices:
    def test_alice_epsilon_one_always_diag(self):
        for u in np.linspace(0, 0.9999, 50):
            assert alice_choose(1.0, 0.3, u)[1] is DIAG

    def test_alice_frequencies(self):
        n = 10**6
        idx = np.arange(n)
        u_src = streams.uniforms(1, idx, streams.SLOT_SOURCE)
        u_basis = streams.uniforms(1, idx, streams.SLOT_ALICE_BASIS)
        choices = [alice_choose(0.1, s, b) for s, b in zip(u_src.tolist(), u_basis.tolist())]
        assert within_4_sigma(sum(c[1] is DIAG for c in choices), n, 0.1)
        assert within_4_sigma(sum(c[0] is PRIMED for c in choices), n, 0.5)

    def test_bob_epsilon_one_never_rect(self):
        assert all(bob_choose(1.0, u) is not RECT for u in np.linspace(0, 0.9999, 50))

    def test_bob_frequencies(self):
        n = 10**6
        picks = [bob_choose(0.2, u) for u in streams.uniforms(2, np.arange(n), streams.SLOT_BOB_BASIS).tolist()]
        assert within_4_sigma(sum(b is PLUS for b in picks), n, 0.1)
        assert within_4_sigma(sum(b is MINUS for b in picks), n, 0.1)
        assert within_4_sigma(sum(b is RECT for b in picks), n, 0.8)

    def test_both_rect_probability_tends_to_one(self):
        probs = [(1 - eps) ** 2 for eps in (0.1, 0.01, 0.001, 1e-6)]
        assert probs == sorted(probs) and probs[-1] > 0.99999


class TestExpectedBasis:
    @pytest.mark.parametrize(
        "source, bit, expected",
        [(PLAIN, 0, PLUS), (PLAIN, 1, MINUS), (PRIMED, 0, MINUS), (PRIMED, 1, PLUS)],
    )
    def test_table(self, source, bit, expected):
        assert expected_bob_basis(source, bit) is expected

    @pytest.mark.parametrize("a2", [0.05, 0.3, 0.5, 0.8, 0.99])
    @pytest.mark.parametrize("source", [PLAIN, PRIMED])
    @pytest.mark.parametrize("u, bit", [(0.1, 0), (0.9, 1)])
    def test_collapsed_photon_is_eigenstate_with_same_bit(self, a2, source, u, bit):
        amps = Amplitudes.from_alpha_sq(a2)
        got, photon = measure_pair_first(make_pair_state(amps, source), basis_for(DIAG, amps), u)
        assert got == bit
        eig = basis_for(expected_bob_basis(source, bit), amps).eigenstate(bit)
        assert overlap_prob(photon, eig) == pytest.approx(1.0, abs=1e-12)


class TestSift:
    def test_rect_rect(self):
        assert sift(record(PLAIN, RECT, 0, RECT)) is SubsetLabel.E1
        assert sift(record(PRIMED, RECT, 1, RECT)) is SubsetLabel.E1P

    def test_incompatible(self):
        assert sift(record(PLAIN, DIAG, 0, MINUS)) is None
        assert sift(record(PLAIN, DIAG, 0, RECT)) is None
        assert sift(record(PLAIN, RECT, 0, PLUS)) is None

    def test_diagonal_labels(self):
        assert sift(record(PLAIN, DIAG, 0, PLUS)) is SubsetLabel.E2
        assert sift(record(PLAIN, DIAG, 1, MINUS)) is SubsetLabel.E3
        assert sift(record(PRIMED, DIAG, 0, MINUS)) is SubsetLabel.E2P
        assert sift(record(PRIMED, DIAG, 1, PLUS)) is SubsetLabel.E3P

    def test_bob_bit_ignored(self):
        for b_bit in (0, 1):
            assert sift(record(PRIMED, DIAG, 1, PLUS, b_bit)) is SubsetLabel.E3P

    def test_table_one_pattern(self):
        # 12 columns for the plain source: 4 compatible, 8 discarded
        kept = []
        for a_basis in (RECT, DIAG):
            for a_bit in (0, 1):
                for b_basis in (RECT, PLUS, MINUS):
                    kept.append(sift(record(PLAIN, a_basis, a_bit, b_basis)) is not None)
        assert kept == [True, False, False, True, False, False, False, True, False, False, False, True]


class TestRunTrial:
    def test_passive_sifted_records_agree(self):
        cfg = SessionConfig(n_pairs=1, epsilon=0.5, alpha_sq=0.7, seed=9)
        recs = [run_trial(cfg, i) for i in range(3000)]
        sifted = [r for r in recs if r.subset is not None]
        assert len(sifted) > 1000
        assert all(r.alice_bit == r.bob_bit for r in sifted)

    def test_product_state_rect_attack(self):
        cfg = SessionConfig(n_pairs=1, epsilon=0.3, alpha_sq=1.0, attack=AttackPolicy(1.0, 0.0, 0.0), seed=4)
        e1 = [r for r in (run_trial(cfg, i) for i in range(3000)) if r.subset is SubsetLabel.E1]
        assert e1 and all(r.alice_bit == r.bob_bit == 0 for r in e1)

    def test_explicit_draws(self):
        cfg = SessionConfig(n_pairs=1, epsilon=0.5, alpha_sq=0.8)
        # plain, rect, A=0, passive, bob rect, bob 0
        r = run_trial(cfg, 0, draws=[0.1, 0.1, 0.1, 0.99, 0.5, 0.1, 0.1, 0.0])
        assert (r.source, r.alice_basis, r.alice_bit, r.bob_basis, r.bob_bit, r.subset) == (
            PLAIN, RECT, 0, RECT, 0, SubsetLabel.E1,
        )
        assert r.eve_action == EveAction(EveTag.PASSIVE)

    def test_deterministic(self):
        cfg = SessionConfig(n_pairs=1, attack=AttackPolicy(0.2, 0.2, 0.2), seed=123)
        assert run_trial(cfg, 17) == run_trial(cfg, 17)


class TestRunSession:
    def test_single_pair(self):
        res = run_session(SessionConfig(n_pairs=1))
        assert len(res.table) == 1 and res.table.index.tolist() == [0]

    @settings(max_examples=10, deadline=None)
    @given(
        a2=st.sampled_from([0.0, 0.3, 0.5, 0.8, 1.0]),
        eps=st.sampled_from([0.05, 0.5, 1.0]),
        seed=st.integers(0, 2**64 - 1),
        policy=st.sampled_from([(0, 0, 0), (1, 0, 0), (0.2, 0.3, 0.4), (0, 0.5, 0.5)]),
    )
    def test_batch_matches_scalar_trials(self, a2, eps, seed, policy):
        cfg = SessionConfig(n_pairs=1500, epsilon=eps, alpha_sq=a2, attack=AttackPolicy(*policy), seed=seed)
        table = run_session(cfg, chunk_size=400).table
        assert list(table.records()) == [run_trial(cfg, i) for i in range(cfg.n_pairs)]

    def test_chunking_and_workers_do_not_matter(self):
        cfg = SessionConfig(n_pairs=50_000, epsilon=0.4, attack=AttackPolicy(0.1, 0.2, 0.3), seed=77)
        ref = run_session(cfg).table.to_csv()
        assert run_session(cfg, chunk_size=1234).table.to_csv() == ref
        assert run_session(cfg, chunk_size=5000, workers=4).table.to_csv() == ref

    def test_epsilon_one_has_no_rect_subsets(self):
        res = run_session(SessionConfig(n_pairs=10**6, epsilon=1.0, seed=1))
        assert res.tallies[SubsetLabel.E1] == res.tallies[SubsetLabel.E1P] == 0

    def test_sifted_fraction(self):
        res = run_session(SessionConfig(n_pairs=10**6, epsilon=0.1, seed=2))
        assert res.sifted_fraction == pytest.approx(0.815, abs=0.002)

    def test_diagonal_tallies(self):
        res = run_session(SessionConfig(n_pairs=10**6, epsilon=0.2, seed=3))
        for label in DIAGONAL_SUBSETS:
            assert abs(res.tallies[label] - 5000) <= 300

    def test_passive_perfect_correlation_and_balance(self):
        res = run_session(SessionConfig(n_pairs=400_000, epsilon=0.3, alpha_sq=0.9, seed=5))
        t = res.table
        sifted = t.sifted_mask()
        assert not (t.mismatch_mask() & sifted).any()
        assert within_4_sigma(int((t.alice_bit[sifted] == 0).sum()), int(sifted.sum()), 0.5)

    def test_tallies_from_records(self):
        cfg = SessionConfig(n_pairs=2000, epsilon=0.5, seed=8)
        res = run_session(cfg)
        again = session_from_records(cfg, res.table.records())
        assert again.tallies == res.tallies


class TestRecordCsv:
    def test_golden(self):
        cfg = SessionConfig(n_pairs=16, epsilon=0.6, alpha_sq=0.8, attack=AttackPolicy(0.3, 0.3, 0.3), seed=42)
        assert run_session(cfg).table.to_csv() == (GOLDEN / "records_seed42.csv").read_text()

    def test_header_and_tokens(self):
        text = run_session(SessionConfig(n_pairs=3000, epsilon=0.7, attack=AttackPolicy(0.2, 0.2, 0.2))).table.to_csv()
        lines = text.splitlines()
        assert tuple(lines[0].split(",")) == CSV_COLUMNS
        cols = list(zip(*(line.split(",") for line in lines[1:])))
        assert set(cols[1]) == {"plain", "primed"}
        assert set(cols[2]) == {"rect", "diag"}
        assert set(cols[4]) == {"measured_rect", "measured_plus", "measured_minus", "passive"}
        assert set(cols[5]) == {"rect", "plus_theta", "minus_theta"}
        assert set(cols[7]) == {"", "e1", "e1p", "e2", "e2p", "e3", "e3p"}

    def test_round_trip(self):
        table = run_session(SessionConfig(n_pairs=500, epsilon=0.5, attack=AttackPolicy(0.5, 0, 0))).table
        back = RecordTable.read_csv(io.StringIO(table.to_csv()))
        for col in RecordTable.COLUMNS:
            if col != "eve_bit":
                assert np.array_equal(getattr(back, col), getattr(table, col)), col
