"""IM, Holm and Benjamini-Hochberg adjustments of the pairwise p-values."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from regionpool.domain.errors import DomainError
from regionpool.domain.models import AdjustedPValues, AdjustMethod, PairTestRecord, PartnerResult, PoolingReport

logger = logging.getLogger(__name__)


def _validated(raw) -> np.ndarray:
    p = np.asarray(raw, dtype=float).reshape(-1)
    if p.size == 0:
        raise DomainError("no p-values to adjust")
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise DomainError("p-values must lie in [0, 1]")
    return p


def adjust_im(raw, alpha: float = 0.1) -> AdjustedPValues:
    p = _validated(raw)
    return AdjustedPValues(method=AdjustMethod.IM, raw=p, adjusted=p.copy(), alpha=alpha)


def adjust_holm(raw, alpha: float = 0.1) -> AdjustedPValues:
    """Stepdown: running maximum of (m - j + 1) p_(j) over the sorted p-values, capped at 1."""
    p = _validated(raw)
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = (m - np.arange(m)) * p[order]
    adjusted_sorted = np.minimum(1.0, np.maximum.accumulate(scaled))
    adjusted = np.empty(m)
    adjusted[order] = adjusted_sorted
    return AdjustedPValues(method=AdjustMethod.HOLM, raw=p, adjusted=adjusted, alpha=alpha)


def adjust_bh(raw, alpha: float = 0.1) -> AdjustedPValues:
    """Stepup: backward running minimum of m p_(j) / j over the sorted p-values, capped at 1."""
    p = _validated(raw)
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = m * p[order] / np.arange(1, m + 1)
    adjusted_sorted = np.minimum(1.0, np.minimum.accumulate(scaled[::-1])[::-1])
    adjusted = np.empty(m)
    adjusted[order] = adjusted_sorted
    return AdjustedPValues(method=AdjustMethod.BH, raw=p, adjusted=adjusted, alpha=alpha)


ADJUSTERS = {
    AdjustMethod.IM: adjust_im,
    AdjustMethod.HOLM: adjust_holm,
    AdjustMethod.BH: adjust_bh,
}


def adjust(raw, method: AdjustMethod, alpha: float = 0.1) -> AdjustedPValues:
    return ADJUSTERS[AdjustMethod(method)](raw, alpha)


def recommend(
    records: Sequence[PairTestRecord],
    method: AdjustMethod,
    alpha: float,
    loi: int,
    location_ids: Sequence[str] | None = None,
) -> PoolingReport:
    """Pooling region {loi} plus every partner whose pair hypothesis is not rejected."""
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    partners = []
    for rec in records:
        others = [d for d in rec.A.A if d != loi]
        if len(others) != 1 or loi not in rec.A.A:
            raise DomainError(f"record {rec.A.A} is not a pair with the location of interest {loi}")
        partners.append(others[0])
    if len(set(partners)) != len(partners):
        raise DomainError("records must cover distinct partners")
    method = AdjustMethod(method)
    ids = list(location_ids) if location_ids is not None else [str(d) for d in range(max(partners + [loi]) + 1)]

    raw = np.array([rec.p_raw for rec in records])
    adjusted = {m: adjust(raw, m, alpha) for m in AdjustMethod}
    rows = []
    for i, (d, rec) in enumerate(zip(partners, records)):
        rows.append(PartnerResult(
            partner=d,
            location_id=ids[d],
            observed_t=rec.observed_t,
            p_raw=rec.p_raw,
            adjusted={m: float(adjusted[m].adjusted[i]) for m in AdjustMethod},
            rejected={m: bool(adjusted[m].rejected[i]) for m in AdjustMethod},
        ))
    keep = sorted([loi] + [r.partner for r in rows if not r.rejected[method]])
    logger.info("%s at alpha=%.3g keeps %d of %d partners", method.value, alpha, len(keep) - 1, len(rows))
    return PoolingReport(loi=loi, loi_id=ids[loi], method=method, alpha=alpha, partners=rows,
                         recommended=tuple(keep), recommended_ids=tuple(ids[d] for d in keep))
