import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from qkdstego.adversary import ChannelModel, EveStrategy
from qkdstego.dv import (
    DvConfig, StegoPlanDirect, bb84_reverse_run, bb84_run, default_delta, displacement_next,
    final_key, mqs_embed_direct, mqs_extract_direct, mqs_run, prepare_symbols, qber_check,
    reverse_extract_dv, reverse_receiver_key, sifted_qber, transmit, wrap_displacement,
)
from qkdstego.errors import EmbeddingFailure, ProtocolError
from qkdstego.qstate import EmbeddingParams
from qkdstego.seeding import trial_rng


def rngs(tag, n, seed=7):
    return (trial_rng(seed, tag, i) for i in range(n))


class TestConfig:
    def test_defaults(self):
        cfg = DvConfig(m=256)
        assert cfg.delta == 36 == default_delta(256)
        assert cfg.n_qubits == 4 * (256 + 36)
        assert cfg.abort_qber == 0.11

    @pytest.mark.parametrize("kw", [dict(m=1), dict(m=4, delta=-1), dict(m=4, abort_qber=1.5)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DvConfig(**kw)

    def test_plan_invariants(self):
        with pytest.raises(ValueError):
            StegoPlanDirect(0, 0, 4)
        with pytest.raises(ValueError):
            StegoPlanDirect(2, 1, 4)


class TestDisplacement:
    def test_examples(self):
        assert displacement_next(None, 5) == 1
        assert displacement_next(7, 5) == 3
        assert displacement_next(10, 5) == 1

    @given(st.integers(0, 10 ** 9), st.integers(1, 10 ** 4))
    def test_range(self, p, m):
        assert 1 <= displacement_next(p, m) <= m

    @given(st.integers(1, 10 ** 6), st.integers(1, 500))
    def test_wrap_range(self, d, n):
        w = wrap_displacement(d, n)
        assert 1 <= w <= n and (w - d) % n == 0


class TestBB84:
    def test_noiseless_sifting(self):
        tr = bb84_run(DvConfig(m=256, delta=26), rng=np.random.default_rng(0))
        assert not tr.aborted
        assert np.all(tr.prepared_bases[tr.sift_positions] == tr.measured_bases[tr.sift_positions])
        assert np.array_equal(tr.sifted_key_sender, tr.sifted_key_receiver)
        assert qber_check(tr, tr.sift_positions[:50]) == (0.0, False)

    def test_mean_sift_size(self):
        cfg = DvConfig(m=256, delta=26)
        sizes = [len(bb84_run(cfg, rng=r).sift_positions) for r in rngs("sift", 10_000)]
        assert np.mean(sizes) == pytest.approx(2 * (256 + 26), rel=0.01)

    def test_flip_quarter_channel_qber(self):
        cfg = DvConfig(m=256, channel=ChannelModel.depolarizing(0.25))
        q = [sifted_qber(bb84_run(cfg, rng=r)) for r in rngs("flip", 50)]
        assert np.mean(q) == pytest.approx(0.25, abs=0.02)

    def test_abort_when_sift_short(self):
        tr = transmit(8, 4, np.random.default_rng(1))
        assert tr.aborted

    def test_prepared_labels_and_skew(self):
        labels = prepare_symbols(200_000, np.random.default_rng(3), EmbeddingParams(0.5, 1.0))
        freq = np.bincount(labels, minlength=4) / len(labels)
        assert freq == pytest.approx([0.375, 0.125, 0.375, 0.125], abs=0.005)

    def test_intercept_with_zero_fraction_is_harmless(self):
        cfg = DvConfig(m=128)
        tr = bb84_run(cfg, rng=np.random.default_rng(4), eve=EveStrategy(intercept_fraction=0.0))
        assert sifted_qber(tr) == 0.0
        assert len(tr.eve) == 0


class TestQberCheck:
    def test_all_flipped(self):
        tr = bb84_run(DvConfig(m=32, channel=ChannelModel.depolarizing(1.0)), rng=np.random.default_rng(2))
        assert qber_check(tr, tr.sift_positions[:32]) == (1.0, True)

    def test_quarter_flip_always_aborts(self):
        cfg = DvConfig(m=256, channel=ChannelModel.depolarizing(0.25))
        aborts = [mqs_run(cfg, 0, 1, r).aborted for r in rngs("abort", 1000)]
        assert all(aborts)

    def test_empty(self):
        tr = bb84_run(DvConfig(m=8), rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            qber_check(tr, [])


class TestMqsDirect:
    def test_roundtrip(self):
        cfg = DvConfig(m=32)
        for i, r in enumerate(rngs("mqs", 1000)):
            msg, d = i % 2, 1 + i % 7
            res = mqs_run(cfg, msg, d, r)
            assert res.recovered_bit == msg
            assert res.qber == 0.0 and not res.aborted

    def test_pointer_geometry(self):
        tr = bb84_run(DvConfig(m=64), rng=np.random.default_rng(9))
        ann = mqs_embed_direct(tr, StegoPlanDirect(0, 3, 64), np.random.default_rng(10))
        assert len(ann) == 64 and len(set(ann)) == 64
        stego_slot = tr.slot_of(ann[-1]) + 3
        assert tr.sifted_key_sender[stego_slot] == 0
        assert tr.sift_positions[stego_slot] not in ann

    def test_check_bits_stay_uniform(self):
        cfg = DvConfig(m=16)
        counts = np.zeros(2, dtype=int)
        for i, r in enumerate(rngs("checks", 10_000)):
            msg = int(r.integers(2))
            res = mqs_run(cfg, msg, 1 + i % 5, r)
            counts += np.bincount(res.transcript.prepared_bits[list(res.announcements)], minlength=2)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_wrong_displacement_is_uncorrelated(self):
        cfg = DvConfig(m=32)
        agree = []
        for i, r in enumerate(rngs("wrongd", 4000)):
            msg = i % 2
            res = mqs_run(cfg, msg, 2, r)
            try:
                agree.append(mqs_extract_direct(res.transcript, res.announcements, 3) == msg)
            except ProtocolError:
                pass  # stego bit was the last sifted slot
        assert len(agree) > 3900
        assert np.mean(agree) == pytest.approx(0.5, abs=0.04)

    def test_noisy_error_rate(self):
        q = 0.1
        cfg = DvConfig(m=32, abort_qber=1.0, channel=ChannelModel.depolarizing(q))
        errs = [mqs_run(cfg, i % 2, 1, r).recovered_bit != i % 2 for i, r in enumerate(rngs("noisy", 4000))]
        assert np.mean(errs) == pytest.approx(q, abs=0.02)

    def test_no_candidate_raises(self):
        tr = bb84_run(DvConfig(m=8), rng=np.random.default_rng(5))
        d = len(tr.sift_positions) + 5
        with pytest.raises(EmbeddingFailure):
            mqs_embed_direct(tr, StegoPlanDirect(0, d, 8))

    def test_extract_past_end(self):
        tr = bb84_run(DvConfig(m=8), rng=np.random.default_rng(5))
        with pytest.raises(ProtocolError):
            mqs_extract_direct(tr, [int(tr.sift_positions[-1])], 1)

    def test_aborted_run_rejected(self):
        tr = transmit(8, 4, np.random.default_rng(1))
        with pytest.raises(ProtocolError):
            mqs_embed_direct(tr, StegoPlanDirect(0, 1, 4))

    def test_final_key_excludes_checks(self):
        res = mqs_run(DvConfig(m=16), 1, 2, np.random.default_rng(11))
        a, b = final_key(res.transcript, res.announcements)
        assert len(a) == len(res.transcript.sift_positions) - 16
        assert np.array_equal(a, b)


class TestReverse:
    @pytest.mark.parametrize("variant", ["A", "B"])
    def test_roundtrip(self, variant):
        cfg = DvConfig(m=32)
        for i, r in enumerate(rngs("rev" + variant, 1000)):
            msg, d = i % 2, 1 + i % 9
            tr, ann = bb84_reverse_run(cfg, msg, d, r, variant=variant)
            assert reverse_extract_dv(tr, ann, d, variant) == msg

    @given(st.integers(0, 2 ** 32 - 1), st.integers(0, 1), st.integers(1, 16), st.sampled_from("AB"))
    @settings(max_examples=50, deadline=None)
    def test_neutrality(self, seed, msg, d, variant):
        cfg = DvConfig(m=16)
        on, _ = bb84_reverse_run(cfg, msg, d, np.random.default_rng(seed), variant=variant, embed=True)
        off, _ = bb84_reverse_run(cfg, msg, d, np.random.default_rng(seed), variant=variant, embed=False)
        assert np.array_equal(on.prepared, off.prepared)
        assert np.array_equal(on.measured_bits, off.measured_bits)

    def test_variant_b_announces_every_sifted_position(self):
        tr, ann = bb84_reverse_run(DvConfig(m=16), 1, 40, np.random.default_rng(3))
        assert sorted(ann) == tr.sift_positions.tolist()

    def test_variant_a_key_excludes_substitute(self):
        tr, ann = bb84_reverse_run(DvConfig(m=16), 0, 2, np.random.default_rng(3), variant="A")
        fake = ann[-1]
        assert tr.prepared_bases[fake] != tr.measured_bases[fake]
        key = reverse_receiver_key(tr, ann, "A")
        assert np.array_equal(key, tr.sifted_key_receiver)

    @pytest.mark.slow
    def test_prepared_histogram_independent_of_message(self):
        cfg = DvConfig(m=2)
        table = np.zeros((2, 4), dtype=int)
        for i, r in enumerate(rngs("revhist", 100_000)):
            msg = i % 2
            tr, _ = bb84_reverse_run(cfg, msg, 1 + i % 3, r)
            table[msg] += np.bincount(tr.prepared, minlength=4)
        assert stats.chisquare(table.sum(axis=0)).pvalue > 0.01
        assert stats.chi2_contingency(table).pvalue > 0.01

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            bb84_reverse_run(DvConfig(m=4), 2, 1)
        with pytest.raises(ValueError):
            bb84_reverse_run(DvConfig(m=4), 0, 1, variant="C")
