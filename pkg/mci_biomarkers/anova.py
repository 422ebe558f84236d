"""Fixed-effects N-way ANOVA with Bonferroni and Tukey HSD pairwise contrasts."""

from dataclasses import dataclass
from itertools import combinations

import numpy as np
import pandas as pd
from scipy import integrate, optimize, special, stats

from mci_biomarkers.errors import ConvergenceError, ValidationError
from mci_biomarkers.logger import get_logger

_log = get_logger('anova')

DEFAULT_ALPHA = 0.05
P_FLOOR = 1e-12
REPLICA_CAVEAT = (
    "Monte-Carlo replicas reuse the same participants, so they are not independent "
    "samples and these ANOVA p-values are optimistic."
)
REPORT_COLUMNS = (
    'response', 'factor', 'method', 'contrast', 'statistic', 'df',
    'mean_diff', 'p_value', 'ci_low', 'ci_high', 'direction',
)

_Z_LIMIT = 10.0
_SCALE_SPAN = 12.0
_CDF_TOL = 1e-5


@dataclass(frozen=True)
class AnovaTerm:
    name: str
    ss: float
    df: int
    F: float
    p_value: float

    @property
    def ms(self) -> float:
        return self.ss / self.df


@dataclass(frozen=True)
class AnovaTable:
    response: str
    terms: tuple[AnovaTerm, ...]
    residual_ss: float
    residual_df: int
    total_ss: float
    grand_mean: float
    n: int
    balanced: bool

    @property
    def ms_residual(self) -> float:
        return self.residual_ss / self.residual_df

    def term(self, name: str) -> AnovaTerm:
        for t in self.terms:
            if t.name == name:
                return t
        raise KeyError(name)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {'term': t.name, 'ss': t.ss, 'df': t.df, 'ms': t.ms, 'F': t.F, 'p_value': t.p_value}
            for t in self.terms
        ]
        rows.append({'term': 'Residual', 'ss': self.residual_ss, 'df': self.residual_df,
                     'ms': self.ms_residual, 'F': np.nan, 'p_value': np.nan})
        return pd.DataFrame(rows)


@dataclass(frozen=True)
class PairwiseContrast:
    factor: str
    level_a: str
    level_b: str
    mean_diff: float  # mean(a) - mean(b)
    statistic: float
    df: int
    p_value: float
    ci_low: float
    ci_high: float
    method: str

    @property
    def contrast(self) -> str:
        return f"{self.level_a} - {self.level_b}"

    @property
    def direction(self) -> str:
        if self.mean_diff > 0:
            return f"{self.level_a} > {self.level_b}"
        if self.mean_diff < 0:
            return f"{self.level_a} < {self.level_b}"
        return f"{self.level_a} = {self.level_b}"


def f_pvalue(F: float, df1: float, df2: float) -> float:
    """Upper tail of F(df1, df2) through the regularised incomplete beta."""
    if F <= 0:
        return 1.0
    if np.isinf(F):
        return 0.0
    return float(special.betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * F)))


def format_p(p: float) -> str:
    return f"< {P_FLOOR:g}" if p < P_FLOOR else f"{p:.6g}"


# ---------------------------------------------------------------------------
# N-way ANOVA
# ---------------------------------------------------------------------------

def _levels(frame: pd.DataFrame, factor: str) -> list[str]:
    if factor not in frame.columns:
        raise ValidationError(f"results have no column {factor!r}")
    levels = sorted(frame[factor].astype(str).unique())
    if len(levels) < 2:
        raise ValidationError(f"factor {factor!r} has a single level ({levels[0] if levels else 'none'})")
    return levels


def _effect_coding(values: pd.Series, levels: list[str]) -> np.ndarray:
    """Sum-to-zero coding: the last level is -1 in every column."""
    codes = values.astype(str).map({lv: i for i, lv in enumerate(levels)}).to_numpy()
    last = len(levels) - 1
    cols = np.zeros((len(codes), last))
    for i in range(last):
        cols[codes == i, i] = 1.0
    cols[codes == last, :] = -1.0
    return cols


def _response(frame: pd.DataFrame, response: str) -> np.ndarray:
    if response not in frame.columns:
        raise ValidationError(f"results have no column {response!r}")
    y = frame[response].to_numpy(dtype=float)
    if len(y) == 0:
        raise ValidationError("results table is empty")
    if not np.isfinite(y).all():
        raise ValidationError(f"response {response!r} has non-finite values")
    return y


def _rss(design: np.ndarray, y: np.ndarray) -> tuple[float, int]:
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return float(resid @ resid), int(np.linalg.matrix_rank(design))


def nway_anova(frame: pd.DataFrame, response: str, factors, interactions=()) -> AnovaTable:
    """Marginal (type III) sums of squares; equal to sequential SS when balanced."""
    factors = list(factors)
    if not factors:
        raise ValidationError("ANOVA needs at least one factor")
    y = _response(frame, response)
    n = len(y)
    blocks = {f: _effect_coding(frame[f], _levels(frame, f)) for f in factors}
    for a, b in interactions:
        if a not in blocks or b not in blocks:
            raise ValidationError(f"interaction {a}:{b} names a factor not in the model")
        blocks[f"{a}:{b}"] = np.column_stack([
            blocks[a][:, i] * blocks[b][:, j]
            for i in range(blocks[a].shape[1]) for j in range(blocks[b].shape[1])
        ])

    cells = frame.groupby([frame[f].astype(str) for f in factors]).size()
    expected_cells = int(np.prod([len(_levels(frame, f)) for f in factors]))
    balanced = len(cells) == expected_cells and cells.nunique() == 1
    if not balanced:
        _log.warning("unbalanced design for %s; using marginal sums of squares", response)

    intercept = np.ones((n, 1))
    full = np.hstack([intercept] + list(blocks.values()))
    rss_full, rank_full = _rss(full, y)
    df_res = n - rank_full
    if df_res <= 0:
        raise ValidationError(f"no residual degrees of freedom ({n} rows, rank {rank_full})")

    grand = float(y.mean())
    total_ss = float(((y - grand) ** 2).sum())
    # Exact zeros for a constant response.
    if total_ss == 0:
        rss_full = 0.0
    ms_res = rss_full / df_res

    terms = []
    for name in blocks:
        reduced = np.hstack([intercept] + [b for other, b in blocks.items() if other != name])
        rss_reduced, rank_reduced = _rss(reduced, y)
        df = rank_full - rank_reduced
        if df == 0:
            raise ValidationError(f"term {name!r} is confounded with the other factors")
        ss = 0.0 if total_ss == 0 else max(rss_reduced - rss_full, 0.0)
        if ss == 0:
            F = 0.0
        elif ms_res == 0:
            F = np.inf
        else:
            F = (ss / df) / ms_res
        terms.append(AnovaTerm(name, ss, df, float(F), f_pvalue(F, df, df_res)))

    return AnovaTable(response, tuple(terms), rss_full, df_res, total_ss, grand, n, balanced)


# ---------------------------------------------------------------------------
# Studentized range distribution
# ---------------------------------------------------------------------------

def _range_cdf_inf(q: float, k: int) -> float:
    def integrand(z):
        return stats.norm.pdf(z) * (stats.norm.cdf(z) - stats.norm.cdf(z - q)) ** (k - 1)

    value, err = integrate.quad(integrand, -_Z_LIMIT, _Z_LIMIT, epsabs=1e-11, epsrel=1e-10, limit=200)
    if err > _CDF_TOL:
        raise ConvergenceError(f"studentized range inner integral error {err:.2e} at q={q}")
    return k * value


def studentized_range_cdf(q: float, k: int, df: float) -> float:
    """P(range of k standard normals / independent chi scale <= q)."""
    if k < 2:
        raise ValidationError(f"studentized range needs k >= 2, got {k}")
    if not df >= 1:
        raise ValidationError(f"studentized range needs df >= 1, got {df}")
    if q <= 0:
        return 0.0
    if np.isinf(df):
        return float(np.clip(_range_cdf_inf(q, k), 0.0, 1.0))

    half = df / 2.0
    log_norm = half * np.log(df) - special.gammaln(half) - (half - 1) * np.log(2.0)

    def integrand(s):
        if s <= 0:
            return 0.0
        log_density = log_norm + (df - 1) * np.log(s) - df * s * s / 2.0
        return np.exp(log_density) * _range_cdf_inf(q * s, k)

    sigma = 1.0 / np.sqrt(2.0 * df)
    low = max(0.0, 1.0 - _SCALE_SPAN * sigma)
    high = 1.0 + _SCALE_SPAN * sigma
    value, err = integrate.quad(integrand, low, high, epsabs=1e-9, epsrel=1e-8, limit=200)
    if err > _CDF_TOL:
        raise ConvergenceError(f"studentized range outer integral error {err:.2e} at q={q}, df={df}")
    return float(np.clip(value, 0.0, 1.0))


def studentized_range_critical(alpha: float, k: int, df: float) -> float:
    """Upper-alpha quantile of the studentized range, by root finding on the CDF."""
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    target = 1.0 - alpha

    def gap(q):
        return studentized_range_cdf(q, k, df) - target

    high = 8.0
    while gap(high) < 0:
        high *= 2
        if high > 1e4:
            raise ConvergenceError(f"could not bracket the studentized range quantile (k={k}, df={df})")
    return float(optimize.brentq(gap, 1e-8, high, xtol=1e-7))


# ---------------------------------------------------------------------------
# Pairwise comparisons
# ---------------------------------------------------------------------------

def _groups(frame: pd.DataFrame, response: str, factor: str):
    levels = _levels(frame, factor)
    y = _response(frame, response)
    keys = frame[factor].astype(str).to_numpy()
    groups = [y[keys == lv] for lv in levels]
    return levels, groups


def _pooled_error(groups, table: AnovaTable | None) -> tuple[float, int]:
    if table is not None:
        return table.ms_residual, table.residual_df
    n = sum(len(g) for g in groups)
    df = n - len(groups)
    if df <= 0:
        raise ValidationError("no within-group degrees of freedom for pairwise tests")
    sse = sum(float(((g - g.mean()) ** 2).sum()) for g in groups)
    return sse / df, df


def bonferroni_pairwise(frame: pd.DataFrame, response: str, factor: str,
                        alpha: float = DEFAULT_ALPHA, table: AnovaTable | None = None) -> list[PairwiseContrast]:
    """Pooled-variance t tests on every level pair, Bonferroni-adjusted."""
    levels, groups = _groups(frame, response, factor)
    mse, df = _pooled_error(groups, table)
    pairs = list(combinations(range(len(levels)), 2))
    m = len(pairs)
    t_crit = stats.t.ppf(1 - alpha / (2 * m), df)
    out = []
    for a, b in pairs:
        diff = float(groups[a].mean() - groups[b].mean())
        se = np.sqrt(mse * (1 / len(groups[a]) + 1 / len(groups[b])))
        if se == 0:
            t_stat = 0.0 if diff == 0 else np.copysign(np.inf, diff)
        else:
            t_stat = diff / se
        p_raw = float(2 * stats.t.sf(abs(t_stat), df))
        out.append(PairwiseContrast(
            factor, levels[a], levels[b], diff, float(t_stat), df,
            min(1.0, m * p_raw), diff - t_crit * se, diff + t_crit * se, 'Bonferroni',
        ))
    return out


def tukey_hsd(frame: pd.DataFrame, response: str, factor: str,
              alpha: float = DEFAULT_ALPHA, table: AnovaTable | None = None) -> list[PairwiseContrast]:
    """Tukey HSD; unequal group sizes fall back to Tukey-Kramer."""
    levels, groups = _groups(frame, response, factor)
    sizes = {len(g) for g in groups}
    method = 'TukeyHSD'
    if len(sizes) > 1:
        _log.warning("unequal group sizes for %s by %s; using Tukey-Kramer", response, factor)
        method = 'Tukey-Kramer'
    mse, df = _pooled_error(groups, table)
    k = len(levels)
    q_crit = studentized_range_critical(alpha, k, df)
    out = []
    for a, b in combinations(range(k), 2):
        diff = float(groups[a].mean() - groups[b].mean())
        se = np.sqrt(mse / 2 * (1 / len(groups[a]) + 1 / len(groups[b])))
        if se == 0:
            q = 0.0 if diff == 0 else np.inf
        else:
            q = abs(diff) / se
        p = 0.0 if np.isinf(q) else 1.0 - studentized_range_cdf(q, k, df)
        out.append(PairwiseContrast(
            factor, levels[a], levels[b], diff, float(q), df,
            float(np.clip(p, 0.0, 1.0)), diff - q_crit * se, diff + q_crit * se, method,
        ))
    return out


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def anova_report(frame: pd.DataFrame, responses, factors, interactions=(),
                 alpha: float = DEFAULT_ALPHA) -> pd.DataFrame:
    """ANOVA rows plus both post-hoc families per factor, as a flat table."""
    _log.warning(REPLICA_CAVEAT)
    rows = []
    for response in responses:
        table = nway_anova(frame, response, factors, interactions)
        for term in table.terms:
            rows.append({
                'response': response, 'factor': term.name, 'method': 'ANOVA',
                'contrast': term.name, 'statistic': term.F,
                'df': f"{term.df},{table.residual_df}", 'mean_diff': np.nan,
                'p_value': format_p(term.p_value), 'ci_low': np.nan, 'ci_high': np.nan,
                'direction': '',
            })
        for factor in factors:
            for c in bonferroni_pairwise(frame, response, factor, alpha, table) + \
                    tukey_hsd(frame, response, factor, alpha, table):
                rows.append({
                    'response': response, 'factor': factor, 'method': c.method,
                    'contrast': c.contrast, 'statistic': c.statistic, 'df': str(c.df),
                    'mean_diff': c.mean_diff, 'p_value': format_p(c.p_value),
                    'ci_low': c.ci_low, 'ci_high': c.ci_high, 'direction': c.direction,
                })
    return pd.DataFrame(rows, columns=list(REPORT_COLUMNS))
