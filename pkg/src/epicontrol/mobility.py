"""Google Community Mobility Report ingestion, residential regression and
aggregate-distancing composition.

Sign conventions, fixed once here and relied on everywhere else:

* Google series (RR, G, P, T, W, R) are stored as signed fractional
  deviations from baseline (-0.914 means -91.4%). Deviations are negative
  under lockdown for everything except residential.
* "Alpha space" expresses each activity as a restriction fraction in [0, 1]
  (0 = baseline, 1 = complete curtail): alpha_k = -deviation_k. Policy
  vectors, bounds and the composed control map all live in alpha space.
* SU (schools & universities) is synthetic; Google has no such category.
  It is stored as a closure fraction in [0, 1] (already alpha-like):
  0 before 2020-03-04, 1 afterwards. Its deviation-space image is -SU.
* The aggregate distancing level weights seven terms; the residential term
  carries its own sign (it enters as -deviation), which is what makes the
  regression-composed six-activity weights come out right.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import GapInDates, MalformedCsv, RankDeficient, RegionNotFound

ACTIVITIES = ("RR", "G", "P", "T", "W", "SU")

#: Contact-share weights of the seven terms of the aggregate distancing level
#: (RR, G, P, T, W, SU, R). They sum to 1.
U_WEIGHTS = np.array([0.2, 0.05, 0.05, 0.05, 0.25, 0.2, 0.2])

#: Date all schools and universities closed in Lombardy.
SCHOOL_CLOSURE_DATE = dt.date(2020, 3, 4)

#: Strict-lockdown window used for the maximum-restriction statistics.
STRICT_WINDOW = (dt.date(2020, 3, 21), dt.date(2020, 5, 3))

_CSV_COLUMNS = {
    "RR": "retail_and_recreation_percent_change_from_baseline",
    "G": "grocery_and_pharmacy_percent_change_from_baseline",
    "P": "parks_percent_change_from_baseline",
    "T": "transit_stations_percent_change_from_baseline",
    "W": "workplaces_percent_change_from_baseline",
    "R": "residential_percent_change_from_baseline",
}


@dataclass(frozen=True)
class ActivitySeries:
    """Per-day mobility deviations for one region, plus the synthetic SU series."""

    dates: tuple[dt.date, ...]
    RR: np.ndarray
    G: np.ndarray
    P: np.ndarray
    T: np.ndarray
    W: np.ndarray
    R: np.ndarray
    SU: np.ndarray  # closure fraction in [0, 1]

    def __len__(self) -> int:
        return len(self.dates)

    def deviations(self) -> np.ndarray:
        """n x 6 deviation-space matrix (RR, G, P, T, W, SU), SU as -closure."""
        return np.column_stack([self.RR, self.G, self.P, self.T, self.W, -self.SU])

    def restrictions(self) -> np.ndarray:
        """n x 6 alpha-space matrix (RR, G, P, T, W, SU)."""
        return -self.deviations()

    def window(self, start: dt.date, end: dt.date) -> "ActivitySeries":
        idx = [i for i, d in enumerate(self.dates) if start <= d <= end]
        if not idx:
            raise GapInDates(f"no observations between {start} and {end}")
        sl = np.array(idx)
        return ActivitySeries(
            dates=tuple(self.dates[i] for i in idx),
            RR=self.RR[sl], G=self.G[sl], P=self.P[sl], T=self.T[sl],
            W=self.W[sl], R=self.R[sl], SU=self.SU[sl])


def _synthesize_su(dates) -> np.ndarray:
    return np.array([1.0 if d >= SCHOOL_CLOSURE_DATE else 0.0 for d in dates])


def parse_mobility_csv(source, region: str) -> ActivitySeries:
    """Parse a Community Mobility Reports CSV for one first-level region.

    source may be a path, a text stream or a byte stream. Rows are kept when
    sub_region_1 equals `region` and sub_region_2 is empty; percent integers
    become signed fractions. Dates must be contiguous after filtering.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8", newline="") as f:
            return _parse_rows(f, region)
    if isinstance(source, io.RawIOBase) or (hasattr(source, "read") and
                                            isinstance(source.read(0), bytes)):
        return _parse_rows(io.TextIOWrapper(source, encoding="utf-8"), region)
    return _parse_rows(source, region)


def _parse_rows(stream, region: str) -> ActivitySeries:
    reader = csv.DictReader(stream)
    header = reader.fieldnames
    if header is None:
        raise MalformedCsv("empty file")
    required = {"sub_region_1", "sub_region_2", "date", *_CSV_COLUMNS.values()}
    missing = required - set(header)
    if missing:
        raise MalformedCsv(f"missing columns: {sorted(missing)}")

    rows = {}
    for lineno, row in enumerate(reader, start=2):
        if row.get("sub_region_1") != region or (row.get("sub_region_2") or "").strip():
            continue
        try:
            date = dt.date.fromisoformat(row["date"])
            values = {k: float(row[col]) / 100.0 for k, col in _CSV_COLUMNS.items()}
        except (ValueError, TypeError) as e:
            raise MalformedCsv(f"line {lineno}: {e}") from e
        if date in rows:
            raise MalformedCsv(f"line {lineno}: duplicate date {date}")
        rows[date] = values

    if not rows:
        raise RegionNotFound(f"no rows for sub_region_1 == {region!r}")
    dates = sorted(rows)
    for a, b in zip(dates, dates[1:]):
        if (b - a).days != 1:
            raise GapInDates(f"missing day(s) between {a} and {b}")

    cols = {k: np.array([rows[d][k] for d in dates]) for k in _CSV_COLUMNS}
    return ActivitySeries(dates=tuple(dates), SU=_synthesize_su(dates), **cols)


@dataclass(frozen=True)
class RegressionFit:
    """OLS fit of residential mobility on the other six activities."""

    coef: np.ndarray          # c0..c6 (intercept, RR, G, P, T, W, SU)
    se: np.ndarray
    t_stat: np.ndarray
    p_value: np.ndarray
    ci95: np.ndarray          # (7, 2) lower/upper
    rmse: float               # residual standard error, sqrt(RSS / (n - 7))
    r2: float
    r2_adj: float
    n_obs: int

    NAMES = ("c0", "c1_RR", "c2_G", "c3_P", "c4_T", "c5_W", "c6_SU")

    def to_dict(self) -> dict:
        return {
            "names": list(self.NAMES),
            "coef": self.coef.tolist(),
            "se": self.se.tolist(),
            "t_stat": self.t_stat.tolist(),
            "p_value": self.p_value.tolist(),
            "ci95_lower": self.ci95[:, 0].tolist(),
            "ci95_upper": self.ci95[:, 1].tolist(),
            "rmse": self.rmse,
            "r2": self.r2,
            "r2_adj": self.r2_adj,
            "n_obs": self.n_obs,
        }


def student_t_p_value(t: float, dof: int) -> float:
    """Two-sided p-value of a t statistic via the regularized incomplete beta.

    Exact tail formula, accurate down to the ~1e-30 p-values seen on long
    lockdown series where a normal approximation would underflow usefully.
    """
    if dof <= 0:
        raise ValueError("dof must be positive")
    x = dof / (dof + t * t)
    return float(special.betainc(0.5 * dof, 0.5, x))


def _t_critical(dof: int, level: float = 0.975) -> float:
    # invert the tail formula used above rather than pulling in scipy.stats
    from scipy.special import betaincinv
    x = betaincinv(0.5 * dof, 0.5, 2.0 * (1.0 - level))
    return float(np.sqrt(dof * (1.0 - x) / x))


def fit_residential_regression(series: ActivitySeries) -> RegressionFit:
    """Fit R(t) = c0 + c1 RR + c2 G + c3 P + c4 T + c5 W + c6 SU by OLS.

    All regressors are in deviation space (SU enters as -closure). Standard
    errors use the unbiased residual variance; p-values are exact Student-t
    tails with n - 7 degrees of freedom.
    """
    n = len(series)
    k = 7
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} observations, got {n}")
    X = np.column_stack([np.ones(n), series.deviations()])
    y = series.R

    xtx = X.T @ X
    svals = np.linalg.svd(xtx, compute_uv=False)
    if svals[-1] <= 1e-10 * svals[0]:
        raise RankDeficient(
            f"normal-equations matrix singular (relative pivot {svals[-1] / svals[0]:.2e})")

    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    rss = float(resid @ resid)
    dof = n - k
    s2 = rss / dof
    cov = s2 * np.linalg.inv(xtx)
    se = np.sqrt(np.diag(cov))
    t_stat = coef / se
    p = np.array([student_t_p_value(t, dof) for t in t_stat])
    tcrit = _t_critical(dof)
    ci = np.column_stack([coef - tcrit * se, coef + tcrit * se])

    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    r2_adj = 1.0 - (1.0 - r2) * (n - 1) / dof
    return RegressionFit(coef=coef, se=se, t_stat=t_stat, p_value=p, ci95=ci,
                         rmse=float(np.sqrt(s2)), r2=r2, r2_adj=r2_adj, n_obs=n)


def aggregate_u(rr, g, p, t, w, su, r) -> float:
    """Aggregate social-distancing level from seven activity terms.

    The six activity inputs are restriction fractions (alpha space); the
    residential input is the negated residential deviation, so it is
    negative under lockdown and damps the total, reflecting that time at
    home substitutes for, rather than adds to, curtailment.
    """
    vals = np.array([rr, g, p, t, w, su, r], dtype=float)
    return float(U_WEIGHTS @ vals)


def compose_policy_weights(fit: RegressionFit) -> np.ndarray:
    """Fold the residential regression into the six activity weights.

    Substituting the fitted residential response into the aggregate level
    (intercept dropped: statistically zero) yields one weight per
    controllable activity: w_k + 0.2 * c_k.
    """
    return np.asarray(U_WEIGHTS[:6] + U_WEIGHTS[6] * fit.coef[1:7])


def max_restriction_stats(series: ActivitySeries,
                          start: dt.date = STRICT_WINDOW[0],
                          end: dt.date = STRICT_WINDOW[1]) -> dict:
    """Per-activity mean and std of the deviations over the strict-lockdown window."""
    win = series.window(start, end)
    out = {}
    for name in ("RR", "G", "P", "T", "W", "R"):
        vals = getattr(win, name)
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1))}
    out["window"] = {"start": start.isoformat(), "end": end.isoformat(),
                     "days": len(win)}
    return out


@dataclass(frozen=True)
class AdherenceModel:
    """Distribution of the gap between announced curtails and realized behavior.

    aggregate mode draws one scalar deviation of the aggregate level per
    scenario; per-activity mode draws one deviation per activity per
    scenario and maps them through composed policy weights.
    """

    mode: str = "aggregate"  # "aggregate" | "per-activity"
    sigma_u: float = 0.0282
    per_activity_sigma: np.ndarray = field(
        default_factory=lambda: np.array([0.065, 0.11, 0.233, 0.064, 0.113, 0.0]))
    redraw_daily: bool = False

    def validate(self) -> list[str]:
        problems = []
        if self.mode not in ("aggregate", "per-activity"):
            problems.append(f"unknown adherence mode {self.mode!r}")
        if self.sigma_u < 0:
            problems.append(f"sigma_u must be >= 0, got {self.sigma_u}")
        if np.any(np.asarray(self.per_activity_sigma) < 0):
            problems.append("per_activity_sigma entries must be >= 0")
        return problems


def sample_adherence(model: AdherenceModel, seed, n: int, days: int,
                     weights: np.ndarray | None = None) -> np.ndarray:
    """Draw n adherence-deviation series of length `days`.

    A scenario keeps one adherence character: the draw is held constant
    across its days (redraw_daily=True redraws each day instead).
    Deterministic given the seed.
    """
    if n < 1:
        raise ValueError("need n >= 1 scenarios")
    rng = np.random.default_rng(seed)
    shape_days = days if model.redraw_daily else 1
    if model.mode == "aggregate":
        theta = rng.normal(0.0, model.sigma_u, size=(n, shape_days))
    else:
        if weights is None:
            raise ValueError("per-activity mode needs composed policy weights")
        devs = rng.normal(0.0, model.per_activity_sigma,
                          size=(n, shape_days, 6))
        theta = devs @ np.asarray(weights)
    if not model.redraw_daily:
        theta = np.repeat(theta, max(days, 1), axis=1)
    return theta


def series_to_rows(series: ActivitySeries):
    """Rows for the date,RR,G,P,T,W,SU,R CSV dump (fraction units)."""
    for i, d in enumerate(series.dates):
        yield (d.isoformat(), series.RR[i], series.G[i], series.P[i],
               series.T[i], series.W[i], series.SU[i], series.R[i])
