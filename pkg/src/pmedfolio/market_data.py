"""Price panels, return panels, correlation distances, and scenario sets.

All types are immutable after construction; operations are pure functions.
The CSV price format has a ``date`` first column and one column per asset;
files with missing or non-numeric cells are rejected rather than imputed,
since silent imputation would change the correlation structure downstream.
"""

from __future__ import annotations

import csv
import datetime
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SIMPLE = "simple"
LOGARITHMIC = "logarithmic"


class MalformedCsvError(ValueError):
    """Unparseable CSV content; carries the 1-based offending line."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonPositivePriceError(ValueError):
    """Some prices are zero or negative; offenders are (asset, date) pairs."""

    def __init__(self, offenders: list[tuple[str, str]]):
        shown = ", ".join(f"{a}@{d}" for a, d in offenders[:8])
        more = "" if len(offenders) <= 8 else f" (+{len(offenders) - 8} more)"
        super().__init__(f"non-positive prices: {shown}{more}")
        self.offenders = offenders


class TooFewObservationsError(ValueError):
    pass


class WrongReturnKindError(ValueError):
    pass


class BadProbabilitiesError(ValueError):
    pass


class BadBlockSpecError(ValueError):
    pass


class ZeroVarianceWarning(UserWarning):
    """A return series is flat; its correlations were set to zero."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PricePanel:
    """Dates x assets matrix of strictly positive prices."""

    dates: tuple[str, ...]
    prices: np.ndarray  # (T+1, n)
    asset_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "prices", _freeze(self.prices))
        t1, n = self.prices.shape
        if len(self.dates) != t1:
            raise ValueError("dates length does not match price rows")
        if len(self.asset_ids) != n:
            raise ValueError("asset_ids length does not match price columns")
        if not np.all(self.prices > 0.0):
            raise ValueError("prices must be strictly positive")
        _check_date_order(self.dates)

    @property
    def n(self) -> int:
        return self.prices.shape[1]

    @property
    def num_returns(self) -> int:
        return self.prices.shape[0] - 1


@dataclass(frozen=True)
class ReturnPanel:
    """Per-period fractional or log returns, one column per asset."""

    returns: np.ndarray  # (T, n)
    kind: str
    asset_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "returns", _freeze(self.returns))
        if self.kind not in (SIMPLE, LOGARITHMIC):
            raise ValueError(f"unknown return kind {self.kind!r}")
        if len(self.asset_ids) != self.returns.shape[1]:
            raise ValueError("asset_ids length does not match return columns")

    @property
    def n(self) -> int:
        return self.returns.shape[1]

    @property
    def num_obs(self) -> int:
        return self.returns.shape[0]


@dataclass(frozen=True)
class ScenarioSet:
    """Historical return scenarios with probabilities and asset means."""

    returns: np.ndarray  # (T, n) simple returns
    probs: np.ndarray  # (T,)
    mu: np.ndarray  # (n,)
    asset_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "returns", _freeze(self.returns))
        object.__setattr__(self, "probs", _freeze(self.probs))
        object.__setattr__(self, "mu", _freeze(self.mu))
        if not self.asset_ids:
            object.__setattr__(
                self,
                "asset_ids",
                tuple(f"A{j}" for j in range(self.returns.shape[1])),
            )
        if abs(float(self.probs.sum()) - 1.0) > 1e-12:
            raise ValueError("scenario probabilities must sum to 1")

    @property
    def n(self) -> int:
        return self.returns.shape[1]

    @property
    def num_scenarios(self) -> int:
        return self.returns.shape[0]


@dataclass(frozen=True)
class DistanceMatrix:
    """Correlation distances d = sqrt(2 (1 - rho)) on the complete graph."""

    d: np.ndarray  # (n, n), zero diagonal, values in [0, 2]
    rho: np.ndarray  # (n, n) correlations

    def __post_init__(self) -> None:
        object.__setattr__(self, "d", _freeze(self.d))
        object.__setattr__(self, "rho", _freeze(self.rho))

    @property
    def n(self) -> int:
        return self.d.shape[0]


def _check_date_order(dates: Sequence[str]) -> None:
    if len(set(dates)) != len(dates):
        raise ValueError("duplicate date labels")
    keys = _date_keys(dates)
    if keys is not None and any(a >= b for a, b in zip(keys, keys[1:])):
        raise ValueError("date labels are not strictly increasing")


def _date_keys(dates: Sequence[str]) -> list | None:
    """Comparable keys when labels are all ISO dates or all numbers."""
    try:
        return [datetime.date.fromisoformat(s) for s in dates]
    except ValueError:
        pass
    try:
        return [float(s) for s in dates]
    except ValueError:
        return None


# ---------------------------------------------------------------------------
# CSV ingestion / emission
# ---------------------------------------------------------------------------

def load_prices(path: str) -> PricePanel:
    """Read a ``date,asset...`` CSV into a validated panel.

    Raises FileNotFoundError, :class:`MalformedCsvError` on parse problems
    (including missing cells), and :class:`NonPositivePriceError` naming
    every offending (asset, date) pair.
    """
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedCsvError(1, "empty file") from None
        if len(header) < 2:
            raise MalformedCsvError(1, "need a date column and >= 1 asset")
        asset_ids = tuple(h.strip() for h in header[1:])
        if any(not a for a in asset_ids):
            raise MalformedCsvError(1, "blank asset name in header")
        dates: list[str] = []
        rows: list[list[float]] = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise MalformedCsvError(
                    lineno, f"expected {len(header)} cells, found {len(rec)}"
                )
            dates.append(rec[0].strip())
            vals = []
            for cell in rec[1:]:
                cell = cell.strip()
                if not cell:
                    raise MalformedCsvError(lineno, "missing cell")
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise MalformedCsvError(
                        lineno, f"non-numeric cell {cell!r}"
                    ) from None
            rows.append(vals)
    if not rows:
        raise MalformedCsvError(2, "no data rows")
    prices = np.array(rows, dtype=float)
    bad = np.argwhere(~(prices > 0.0))
    if len(bad):
        offenders = [(asset_ids[j], dates[i]) for i, j in bad]
        raise NonPositivePriceError(offenders)
    try:
        return PricePanel(tuple(dates), prices, asset_ids)
    except ValueError as exc:
        raise MalformedCsvError(1, str(exc)) from None


def save_prices(panel: PricePanel, path: str) -> None:
    """Emit the same CSV shape at full round-trip precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("date",) + panel.asset_ids)
        for i, date in enumerate(panel.dates):
            writer.writerow([date] + [repr(v) for v in panel.prices[i]])


# ---------------------------------------------------------------------------
# derived series
# ---------------------------------------------------------------------------

def simple_returns(panel: PricePanel) -> ReturnPanel:
    """Per-period fractional price changes."""
    if panel.prices.shape[0] < 2:
        raise TooFewObservationsError("need at least two price rows")
    p = panel.prices
    rets = (p[1:] - p[:-1]) / p[:-1]
    return ReturnPanel(rets, SIMPLE, panel.asset_ids)


def log_returns(panel: PricePanel) -> ReturnPanel:
    """Per-period differences of log prices."""
    if panel.prices.shape[0] < 2:
        raise TooFewObservationsError("need at least two price rows")
    lp = np.log(panel.prices)
    return ReturnPanel(lp[1:] - lp[:-1], LOGARITHMIC, panel.asset_ids)


def correlation_distances(rp: ReturnPanel) -> DistanceMatrix:
    """Pearson correlations of log returns mapped to metric distances.

    Flat (zero-variance) series get zero correlation against everything,
    which keeps the asset graph complete; a :class:`ZeroVarianceWarning`
    names them.
    """
    if rp.kind != LOGARITHMIC:
        raise WrongReturnKindError(
            "correlation distances are defined on logarithmic returns"
        )
    t, n = rp.returns.shape
    if t < 2:
        raise TooFewObservationsError("need at least two return rows")
    x = rp.returns - rp.returns.mean(axis=0)
    cov = (x.T @ x) / (t - 1)
    sd = np.sqrt(np.diag(cov).copy())
    flat = sd == 0.0
    if flat.any():
        names = [rp.asset_ids[j] for j in np.flatnonzero(flat)]
        warnings.warn(
            f"zero-variance return series: {', '.join(names)}; "
            "their correlations were set to 0",
            ZeroVarianceWarning,
        )
        sd[flat] = 1.0  # placeholder; the rows are overwritten below
    rho = cov / np.outer(sd, sd)
    rho[flat, :] = 0.0
    rho[:, flat] = 0.0
    rho = np.clip((rho + rho.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(rho, 1.0)
    d = np.sqrt(np.maximum(2.0 * (1.0 - rho), 0.0))
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(d, rho)


def scenario_set(
    rp: ReturnPanel, probs: Sequence[float] | None = None
) -> ScenarioSet:
    """Wrap simple returns as probability-weighted scenarios.

    Probabilities default to the uniform 1/T; a supplied vector must be
    nonnegative and sum to 1 within 1e-9 (it is renormalized exactly).
    """
    if rp.kind != SIMPLE:
        raise WrongReturnKindError("scenario sets are built on simple returns")
    t = rp.num_obs
    if probs is None:
        pr = np.full(t, 1.0 / t)
    else:
        pr = np.asarray(probs, dtype=float)
        if pr.shape != (t,):
            raise BadProbabilitiesError(
                f"expected {t} probabilities, got shape {pr.shape}"
            )
        if np.any(pr < 0.0):
            raise BadProbabilitiesError("negative probability")
        s = float(pr.sum())
        if abs(s - 1.0) > 1e-9:
            raise BadProbabilitiesError(f"probabilities sum to {s!r}, not 1")
        pr = pr / s
    mu = pr @ rp.returns
    return ScenarioSet(rp.returns, pr, mu, rp.asset_ids)


# ---------------------------------------------------------------------------
# synthetic market
# ---------------------------------------------------------------------------

def synthetic_market(
    n: int,
    num_obs: int,
    blocks: Sequence[int],
    seed: int,
    factor_vol: float = 0.03,
    idio_vol: float = 0.012,
) -> PricePanel:
    """Geometric random-walk prices driven by one factor per block.

    ``blocks`` lists block sizes partitioning the ``n`` assets in index
    order; within-block correlations come out well above cross-block ones.
    Deterministic for a fixed seed.
    """
    if n < 2 or num_obs < 2:
        raise ValueError("need n >= 2 assets and num_obs >= 2 observations")
    sizes = [int(b) for b in blocks]
    if any(b < 1 for b in sizes) or sum(sizes) != n:
        raise BadBlockSpecError(
            f"block sizes {sizes} do not partition {n} assets"
        )
    rng = np.random.default_rng(seed)
    block_of = np.repeat(np.arange(len(sizes)), sizes)
    drift = rng.normal(0.002, 0.0008, size=n)
    loading = rng.uniform(0.8, 1.2, size=n)
    factors = rng.normal(0.0, factor_vol, size=(num_obs, len(sizes)))
    idio = rng.normal(0.0, idio_vol, size=(num_obs, n))
    log_rets = drift + loading * factors[:, block_of] + idio
    p0 = 100.0 * rng.uniform(0.5, 2.0, size=n)
    prices = np.vstack([np.ones(n), np.exp(np.cumsum(log_rets, axis=0))]) * p0
    start = datetime.date(2000, 1, 7)
    dates = tuple(
        (start + datetime.timedelta(weeks=k)).isoformat()
        for k in range(num_obs + 1)
    )
    ids = tuple(f"A{j:02d}" for j in range(n))
    return PricePanel(dates, prices, ids)
