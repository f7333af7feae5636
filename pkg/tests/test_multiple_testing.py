import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from regionpool.domain.errors import DomainError
from regionpool.domain.models import (
    AdjustMethod,
    BivEvFamily,
    BivEvSpec,
    DependenceFit,
    HypothesisSet,
    PairTestRecord,
    ScaleGevParams,
)
from regionpool.stats.multiple_testing import adjust, adjust_bh, adjust_holm, adjust_im, recommend

# 4x4 case study, max-stable bootstrap, in percent
CASE_RAW = [0.00, 1.60, 2.50, 3.40, 3.55, 5.30, 7.15, 8.05, 10.00, 10.39, 13.04, 20.34, 46.08, 52.17, 66.92]
CASE_BH = [0.00, 10.64, 10.64, 10.64, 10.64, 13.24, 15.09, 15.09, 15.59, 15.59, 17.79, 25.42, 53.17, 55.90, 66.92]
CASE_HOLM = [0.00, 22.39, 32.48, 40.78, 40.78, 52.97, 64.32, 64.37, 69.97, 69.97, 69.97, 81.36, 100.0, 100.0, 100.0]

p_vectors = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=35)


def _record(loi: int, partner: int, p: float) -> PairTestRecord:
    dep = DependenceFit(spec=BivEvSpec(family=BivEvFamily.LOGISTIC, params=(0.5,)), criterion=1.0, loglik=0.0,
                        converged=True, n_params=1)
    null = ScaleGevParams(mu=20.0, sigma=5.0, gamma=0.1, alpha=1.0)
    return PairTestRecord(A=HypothesisSet(A=(loi, partner)), observed_t=1.0, boot_ts=np.ones(3), p_raw=p,
                          dependence=dep, null_fit=null)


def _holm_stepdown(p, alpha):
    m = len(p)
    order = np.argsort(p)
    rejected = np.zeros(m, dtype=bool)
    for j, i in enumerate(order):
        if p[i] > alpha / (m - j):
            break
        rejected[i] = True
    return rejected


def _bh_stepup(p, alpha):
    m = len(p)
    order = np.argsort(p)
    passing = [j for j in range(m) if p[order[j]] <= (j + 1) * alpha / m]
    rejected = np.zeros(m, dtype=bool)
    if passing:
        rejected[order[: max(passing) + 1]] = True
    return rejected


# ====== FIXTURES ======
def test_case_study_table():
    raw = np.array(CASE_RAW) / 100
    assert_allclose(adjust_bh(raw).adjusted * 100, CASE_BH, atol=0.1)
    assert_allclose(adjust_holm(raw).adjusted * 100, CASE_HOLM, atol=0.1)


def test_hand_fixtures():
    assert adjust_holm([0.01, 0.04, 0.03]).adjusted == pytest.approx([0.03, 0.06, 0.06])
    assert adjust_bh([0.01, 0.03, 0.04]).adjusted == pytest.approx([0.03, 0.04, 0.04])


def test_im_is_identity():
    res = adjust_im([0.2, 0.05], alpha=0.1)
    assert_allclose(res.adjusted, [0.2, 0.05])
    assert res.rejected.tolist() == [False, True]


@pytest.mark.parametrize("raw", [[], [0.1, 1.2], [np.nan], [-0.01]])
def test_invalid_input(raw):
    with pytest.raises(DomainError):
        adjust_bh(raw)


# ====== PROPERTIES ======
@given(p=p_vectors)
@settings(max_examples=300, deadline=None)
def test_adjusted_bounds_and_ordering(p):
    raw = np.array(p)
    holm, bh = adjust_holm(raw).adjusted, adjust_bh(raw).adjusted
    assert np.all((bh >= 0) & (holm <= 1))
    assert np.all(bh >= raw - 1e-12)
    assert np.all(holm >= bh - 1e-12)
    order = np.argsort(raw, kind="stable")
    assert np.all(np.diff(holm[order]) >= 0)
    assert np.all(np.diff(bh[order]) >= -1e-12)


@given(p=p_vectors, seed=st.integers(0, 2**16))
@settings(max_examples=200, deadline=None)
def test_permutation_invariance(p, seed):
    raw = np.array(p)
    perm = np.random.default_rng(seed).permutation(raw.size)
    for method in AdjustMethod:
        assert_allclose(adjust(raw[perm], method).adjusted, adjust(raw, method).adjusted[perm])


def test_matches_direct_threshold_rules():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        m = rng.integers(1, 36)
        p = rng.uniform(size=m) ** rng.uniform(1, 4)
        for alpha in (0.01, 0.05, 0.1):
            holm = adjust_holm(p, alpha).rejected
            bh = adjust_bh(p, alpha).rejected
            assert np.array_equal(holm, _holm_stepdown(p, alpha))
            assert np.array_equal(bh, _bh_stepup(p, alpha))
            im = adjust_im(p, alpha).rejected
            assert np.all(im[bh]) and np.all(bh[holm])


def test_error_rates_are_controlled():
    rng = np.random.default_rng(11)
    m, m0, trials, alpha = 15, 10, 10_000, 0.1
    any_false = 0
    fdp = 0.0
    for _ in range(trials):
        p = np.concatenate([rng.uniform(size=m0), rng.beta(0.2, 5.0, size=m - m0)])
        false_holm = adjust_holm(p, alpha).rejected[:m0].sum()
        bh = adjust_bh(p, alpha).rejected
        any_false += false_holm > 0
        fdp += bh[:m0].sum() / max(bh.sum(), 1)
    assert any_false / trials <= alpha + 0.01
    assert fdp / trials <= alpha + 0.01


# ====== RECOMMENDATION ======
class TestRecommend:
    def test_methods_differ(self):
        records = [_record(0, d, p) for d, p in zip((1, 2, 3), (0.01, 0.04, 0.03))]
        ids = ["loi", "a", "b", "c"]
        holm = recommend(records, AdjustMethod.HOLM, 0.05, 0, ids)
        assert holm.recommended == (0, 2, 3)
        assert holm.recommended_ids == ("loi", "b", "c")
        bh = recommend(records, AdjustMethod.BH, 0.05, 0, ids)
        assert bh.recommended == (0,)
        assert bh.partners[1].adjusted[AdjustMethod.HOLM] == pytest.approx(0.06)
        assert bh.partners[1].rejected[AdjustMethod.IM]

    def test_loi_not_first(self):
        records = [_record(2, 0, 0.5), _record(2, 1, 0.01)]
        report = recommend(records, AdjustMethod.IM, 0.1, 2)
        assert report.recommended == (0, 2)
        assert report.loi_id == "2"

    def test_nothing_rejected_keeps_everything(self):
        records = [_record(0, d, 0.9) for d in (1, 2)]
        assert recommend(records, "bh", 0.1, 0).recommended == (0, 1, 2)

    def test_record_without_loi(self):
        with pytest.raises(DomainError):
            recommend([_record(1, 2, 0.5)], AdjustMethod.BH, 0.1, 0)

    def test_duplicate_partners(self):
        with pytest.raises(DomainError):
            recommend([_record(0, 1, 0.5), _record(0, 1, 0.2)], AdjustMethod.BH, 0.1, 0)

    def test_alpha_range(self):
        with pytest.raises(DomainError):
            recommend([_record(0, 1, 0.5)], AdjustMethod.BH, 1.0, 0)
