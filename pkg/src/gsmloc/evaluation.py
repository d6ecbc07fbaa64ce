"""Error metrics, comparison reports, and parameter sweeps.

Every localizer run is reduced to an EvalReport: the list of per-sample
distance errors (meters, great-circle against ground truth), summary
percentiles, and an empirical CDF at 1 m resolution. Windowed methods are
scored only after their warm-up; samples a method cannot localize are
counted separately and excluded from the error statistics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import clone

from .estimators import HmmLocalizer, KnnLocalizer
from .geo import GeoPoint, haversine
from .ingest import ScanRecord, serving_only


def _percentile(errors: np.ndarray, q: float) -> float:
    # order-statistic ("inverted CDF") convention so summary quantiles agree
    # with the exported CDF table to within one resolution step
    if errors.size == 0:
        return math.nan
    return float(np.percentile(errors, q, method="inverted_cdf"))


@dataclass
class EvalReport:
    """Outcome of one (method, parameterization) run over a test trace."""

    method: str
    params: dict
    errors_m: np.ndarray
    n_warmup: int = 0
    n_unlocalizable: int = 0

    @property
    def n_estimates(self) -> int:
        """Samples the method attempted: localized plus unlocalizable."""
        return len(self.errors_m) + self.n_unlocalizable

    @property
    def median(self) -> float:
        return _percentile(self.errors_m, 50)

    @property
    def mean(self) -> float:
        return float(self.errors_m.mean()) if self.errors_m.size else math.nan

    @property
    def p67(self) -> float:
        return _percentile(self.errors_m, 67)

    @property
    def p90(self) -> float:
        return _percentile(self.errors_m, 90)

    @property
    def max_error(self) -> float:
        return float(self.errors_m.max()) if self.errors_m.size else math.nan

    def cdf(self) -> list[tuple[float, float]]:
        """Empirical CDF at 1 m resolution.

        Fractions are over all attempted samples, so the curve tops out at
        the localizable fraction (1.0 when nothing was unlocalizable).
        """
        if self.n_estimates == 0:
            raise ValueError("report has no estimates; nothing to tabulate")
        total = self.n_estimates
        values = np.ceil(np.sort(self.errors_m))
        table: list[tuple[float, float]] = []
        for i, v in enumerate(values, start=1):
            frac = i / total
            if table and table[-1][0] == v:
                table[-1] = (float(v), frac)
            else:
                table.append((float(v), frac))
        return table

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "params": self.params,
            "summary": {
                "median_m": self.median,
                "mean_m": self.mean,
                "p67_m": self.p67,
                "p90_m": self.p90,
                "max_m": self.max_error,
            },
            "n_estimates": self.n_estimates,
            "n_unlocalizable": self.n_unlocalizable,
            "n_warmup": self.n_warmup,
        }


def _clean_params(estimator) -> dict:
    return {
        k: v
        for k, v in estimator.get_params().items()
        if isinstance(v, (bool, int, float, str)) or v is None
    }


def evaluate(
    estimator,
    test_records: Sequence[ScanRecord],
    method: str | None = None,
    params: dict | None = None,
) -> EvalReport:
    """Score a fitted estimator against a serving-only, time-ordered test trace."""
    records = serving_only(test_records)
    if not records:
        raise ValueError("empty test set")
    pred = estimator.predict(records)
    warmup = min(getattr(estimator, "warmup", 0), len(records))
    errors: list[float] = []
    unlocalizable = 0
    for i in range(warmup, len(records)):
        if np.isnan(pred[i]).any():
            unlocalizable += 1
        else:
            errors.append(haversine(GeoPoint(pred[i, 0], pred[i, 1]), records[i].pos))
    return EvalReport(
        method=method or type(estimator).__name__,
        params=params if params is not None else _clean_params(estimator),
        errors_m=np.asarray(errors, dtype=float),
        n_warmup=warmup,
        n_unlocalizable=unlocalizable,
    )


def sweep_grid_len(
    train_records: Sequence[ScanRecord],
    test_records: Sequence[ScanRecord],
    lengths: Iterable[float],
    window: int = 10,
    estimator: HmmLocalizer | None = None,
) -> list[EvalReport]:
    """Retrain and evaluate the HMM tracker once per grid cell length."""
    proto = estimator if estimator is not None else HmmLocalizer(window=window)
    reports = []
    for length in lengths:
        est = clone(proto)
        est.set_params(cell_len_m=float(length), window=window)
        est.fit(train_records)
        reports.append(evaluate(est, test_records, method="hmm"))
    return reports


def sweep_window(
    estimator: HmmLocalizer,
    test_records: Sequence[ScanRecord],
    windows: Iterable[int],
) -> list[EvalReport]:
    """Evaluate one already-fitted tracker at several window lengths.

    The underlying model does not depend on the window, so no refit happens;
    only the decoding window changes.
    """
    original = estimator.window
    reports = []
    try:
        for w in windows:
            estimator.set_params(window=int(w))
            reports.append(evaluate(estimator, test_records, method="hmm"))
    finally:
        estimator.set_params(window=original)
    return reports


def tune_k(
    train_records: Sequence[ScanRecord],
    k_values: Iterable[int] = range(1, 9),
    holdout_fraction: float = 0.25,
    towers=None,
) -> int:
    """Pick the KNN k with the best median error on a time-ordered holdout.

    Tuning touches only the training trace: the earlier part fits, the later
    part validates.
    """
    records = serving_only(train_records)
    split = max(1, int(len(records) * (1.0 - holdout_fraction)))
    fit_part, holdout = records[:split], records[split:]
    if not holdout:
        return min(k_values)
    best_k, best_median = None, math.inf
    for k in k_values:
        est = KnnLocalizer(k=int(k), towers=towers).fit(fit_part)
        median = evaluate(est, holdout).median
        if not math.isnan(median) and median < best_median:
            best_k, best_median = int(k), median
    return best_k if best_k is not None else min(k_values)


def export_cdf(report: EvalReport, path) -> None:
    """Write the report's CDF as `error_m,fraction` CSV rows, sorted and deduplicated."""
    table = report.cdf()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("error_m,fraction\n")
        for err, frac in table:
            f.write(f"{int(err)},{frac!r}\n")


def write_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=1)
        f.write("\n")


def write_manifest(path, config: dict) -> None:
    """Record every parameter and seed of an experiment so it can be rerun exactly."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config, f, indent=1, sort_keys=True)
        f.write("\n")


def summary_table(reports: Sequence[EvalReport]) -> str:
    """Aligned text comparison of several runs, one row per report."""
    header = f"{'method':<10} {'median_m':>10} {'mean_m':>10} {'p67_m':>10} {'p90_m':>10} {'max_m':>10} {'unloc':>6}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.method:<10} {r.median:>10.1f} {r.mean:>10.1f} {r.p67:>10.1f} "
            f"{r.p90:>10.1f} {r.max_error:>10.1f} {r.n_unlocalizable:>6d}"
        )
    return "\n".join(lines)
