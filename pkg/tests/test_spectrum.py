import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from krrdeteq.spectrum import (
    Alignment,
    ModelSpec,
    NoiseModel,
    Spectrum,
    SpectrumError,
    effective_rank,
    model_from_json,
    model_to_json,
    nu_diagnostic,
    tail_rank,
    trace_resolvents,
)

from conftest import random_spectrum


class TestSpectrumType:
    def test_rejects_increasing_values(self):
        with pytest.raises(SpectrumError):
            Spectrum(np.array([0.5, 1.0]), np.array([1, 1]))

    def test_rejects_nonpositive_values(self):
        with pytest.raises(SpectrumError):
            Spectrum(np.array([1.0, 0.0]), np.array([1, 1]))
        with pytest.raises(SpectrumError):
            Spectrum(np.array([1.0, -1e-3]), np.array([1, 1]))

    def test_rejects_empty_and_bad_multiplicity(self):
        with pytest.raises(SpectrumError):
            Spectrum.from_blocks([])
        with pytest.raises(SpectrumError):
            Spectrum(np.array([1.0]), np.array([0]))

    def test_head_tail_traces_match_expanded(self, rng):
        s = random_spectrum(rng)
        expanded = s.expand()
        for m in [0, 1, s.total_rank // 2, s.total_rank]:
            np.testing.assert_allclose(s.head_trace(m), expanded[:m].sum(), rtol=1e-12)
            np.testing.assert_allclose(s.tail_trace(m), expanded[m:].sum(), rtol=1e-12, atol=1e-300)

    def test_split_preserves_expansion(self, rng):
        s = random_spectrum(rng)
        m = s.total_rank // 3
        head, tail = s.split(m)
        parts = []
        if head is not None:
            parts.append(head.expand())
        if tail is not None:
            parts.append(tail.expand())
        np.testing.assert_array_equal(np.concatenate(parts), s.expand())

    def test_eigenvalue_at(self):
        s = Spectrum.from_blocks([(2.0, 3), (1.0, 1)])
        assert [s.eigenvalue_at(j) for j in range(1, 5)] == [2.0, 2.0, 2.0, 1.0]
        with pytest.raises(SpectrumError):
            s.eigenvalue_at(5)


class TestTraceResolvents:
    def test_isotropic_block(self):
        t1, t2 = trace_resolvents(Spectrum.from_blocks([(1.0, 200)]), 1.0)
        assert t1 == pytest.approx(100.0, rel=1e-14)
        assert t2 == pytest.approx(50.0, rel=1e-14)

    def test_two_block_hand_values(self):
        t1, t2 = trace_resolvents(Spectrum.from_blocks([(2.0, 3), (1.0, 1)]), 2.0)
        assert t1 == pytest.approx(11.0 / 6.0, rel=1e-14)
        assert t2 == pytest.approx(31.0 / 36.0, rel=1e-14)

    def test_large_shift_limit(self, rng):
        s = random_spectrum(rng)
        t1, t2 = trace_resolvents(s, 1e12)
        assert t1 < 1e-9 and t2 < 1e-9

    def test_rejects_nonpositive_shift(self):
        s = Spectrum.from_blocks([(1.0, 1)])
        for bad in (0.0, -1.0, math.nan):
            with pytest.raises(SpectrumError):
                trace_resolvents(s, bad)

    def test_decreasing_in_shift_and_t2_below_t1(self, rng):
        for _ in range(20):
            s = random_spectrum(rng)
            s1, s2 = sorted(rng.uniform(1e-4, 10.0, size=2))
            t1a, t2a = trace_resolvents(s, s1)
            t1b, t2b = trace_resolvents(s, s2)
            assert t1a > t1b and t2a > t2b
            assert t2a <= t1a <= s.total_rank


class TestTailRank:
    def test_hand_examples(self):
        assert tail_rank(Spectrum.from_blocks([(1.0, 4)]), 2, 0.0) == pytest.approx(2.0)
        assert tail_rank(Spectrum.from_blocks([(1.0, 1), (0.5, 2)]), 1, 1.0) == pytest.approx(4.0)

    def test_full_rank_convention(self):
        assert tail_rank(Spectrum.from_blocks([(1.0, 4)]), 4, 0.0) == math.inf

    def test_out_of_range(self):
        with pytest.raises(SpectrumError):
            tail_rank(Spectrum.from_blocks([(1.0, 4)]), 5, 0.0)

    def test_monotone_in_lambda(self, rng):
        s = random_spectrum(rng)
        m = s.total_rank // 2
        values = [tail_rank(s, m, lam) for lam in (0.0, 0.5, 2.0, 9.0)]
        assert values == sorted(values)


class TestEffectiveRank:
    def test_isotropic(self):
        assert effective_rank(Spectrum.from_blocks([(1.0, 10)]), 10, 3) == pytest.approx(10.0)

    def test_n_dominates(self):
        assert effective_rank(Spectrum.from_blocks([(1.0, 1)]), 1, 5) == pytest.approx(5.0)

    def test_power_law_matches_direct_scan(self):
        s = Spectrum.power_law(2.0, 100)
        m, n = 100, 10
        xs = s.expand()
        # brute-force oracle over the defining ratios (0-based indices)
        brute = float(n)
        for k in range(min(n, m)):
            brute = max(brute, xs[k:m].sum() / xs[k])
        assert effective_rank(s, m, n) == pytest.approx(brute, rel=1e-12)

    def test_at_least_n(self, rng):
        for _ in range(10):
            s = random_spectrum(rng)
            n = int(rng.integers(1, 200))
            m = int(rng.integers(1, s.total_rank + 1))
            assert effective_rank(s, m, n) >= n


class TestNuDiagnostic:
    def test_index_past_cut_gives_one(self):
        s = Spectrum.from_blocks([(1.0, 10)])
        # floor(eta * n) = 4 > m = 2
        assert nu_diagnostic(s, 2, 10, 1.0, eta=0.45) == 1.0

    def test_isotropic_value(self):
        s = Spectrum.from_blocks([(1.0, 100)])
        expected = 1.0 + 100.0 * math.sqrt(math.log(100.0))
        assert nu_diagnostic(s, 100, 8, 1.0, eta=0.25) == pytest.approx(expected, rel=1e-12)

    def test_large_lambda_limit(self):
        s = Spectrum.from_blocks([(1.0, 100)])
        assert nu_diagnostic(s, 100, 8, 1e12, eta=0.25) == pytest.approx(1.0, abs=1e-6)

    def test_requires_positive_tail_regularization(self):
        s = Spectrum.from_blocks([(1.0, 4)])
        with pytest.raises(SpectrumError):
            nu_diagnostic(s, 4, 4, 0.0)  # m = rank and lam = 0

    def test_eta_domain(self):
        s = Spectrum.from_blocks([(1.0, 4)])
        for eta in (0.0, 0.5, 0.9):
            with pytest.raises(SpectrumError):
                nu_diagnostic(s, 2, 4, 1.0, eta=eta)


@settings(max_examples=40, deadline=None)
@given(
    data=st.lists(
        st.tuples(st.floats(1e-6, 1.0), st.integers(1, 20)), min_size=1, max_size=8
    ),
    shifts=st.tuples(st.floats(1e-4, 1.0), st.floats(1.001, 100.0)),
)
def test_resolvent_traces_monotone_property(data, shifts):
    values = np.sort(np.array([v for v, _ in data]))[::-1]
    mults = np.array([m for _, m in data])
    s = Spectrum(values, mults)
    lo, ratio = shifts
    hi = lo * ratio
    t1_lo, t2_lo = trace_resolvents(s, lo)
    t1_hi, t2_hi = trace_resolvents(s, hi)
    assert t1_hi < t1_lo and t2_hi < t2_lo
    assert t2_lo <= t1_lo <= s.total_rank


class TestAlignmentAndModel:
    def test_alignment_validation(self):
        with pytest.raises(SpectrumError):
            Alignment(np.array([-0.1]))
        with pytest.raises(SpectrumError):
            Alignment(np.array([0.1]), residual_energy=-1.0)

    def test_total_energy(self):
        a = Alignment(np.array([0.5, 0.25]), residual_energy=0.25)
        assert a.total_energy == pytest.approx(1.0)

    def test_noise_model_proxy_dominates(self):
        with pytest.raises(SpectrumError):
            NoiseModel(variance=1.0, sub_gaussian_proxy=0.5)
        nm = NoiseModel(variance=1.0)
        assert nm.sub_gaussian_proxy >= nm.variance

    def test_ridgeless_needs_excess_rank(self):
        s = Spectrum.from_blocks([(2.0, 50)])
        with pytest.raises(SpectrumError):
            ModelSpec(n=100, lam=0.0, spectrum=s, alignment=Alignment.zero(s))
        ModelSpec(n=30, lam=0.0, spectrum=s, alignment=Alignment.zero(s))  # fine

    def test_alignment_length_checked(self):
        s = Spectrum.from_blocks([(1.0, 2), (0.5, 2)])
        with pytest.raises(SpectrumError):
            ModelSpec(n=2, lam=0.1, spectrum=s, alignment=Alignment(np.array([1.0])))


class TestJsonRoundTrip:
    def test_round_trip_is_deterministic(self):
        s = Spectrum.from_blocks([(1.0, 3), (0.125, 7)])
        a = Alignment(np.array([0.7, 0.2]), residual_energy=0.1)
        nm = NoiseModel(0.25)
        text = model_to_json(s, a, nm)
        s2, a2, n2 = model_from_json(text)
        assert model_to_json(s2, a2, n2) == text
        np.testing.assert_array_equal(s2.values, s.values)
        np.testing.assert_array_equal(s2.multiplicities, s.multiplicities)
        np.testing.assert_array_equal(a2.energies, a.energies)
        assert a2.residual_energy == a.residual_energy
        assert n2.variance == nm.variance

    def test_document_shape(self):
        s = Spectrum.from_blocks([(1.0, 2)])
        doc = json.loads(model_to_json(s, Alignment(np.array([1.0])), NoiseModel(0.0)))
        assert set(doc) == {"blocks", "alignment", "residual_energy", "noise_variance"}

    def test_mismatched_alignment_rejected(self):
        bad = json.dumps(
            {"blocks": [[1.0, 2], [0.5, 1]], "alignment": [1.0], "residual_energy": 0.0, "noise_variance": 0.0}
        )
        with pytest.raises(SpectrumError):
            model_from_json(bad)
