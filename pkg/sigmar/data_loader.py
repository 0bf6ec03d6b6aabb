import dataclasses
import logging

import numpy as np
import pandas as pd
import torch

from sigmar import model
from sigmar.errors import DegenerateInputError, DimensionError, ValidationError

logger = logging.getLogger(__name__)

PANEL_COLUMNS = ["t", "variable", "country", "value"]
TRADE_COLUMNS = ["year", "exporter", "importer", "value"]


def _read_csv(path, columns):
    try:
        frame = pd.read_csv(path, dtype={"variable": str, "country": str,
                                         "exporter": str, "importer": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise ValidationError(f"cannot read {path}: {err}") from err
    if list(frame.columns) != columns:
        raise ValidationError(
            f"{path}: expected columns {columns}, found {list(frame.columns)}")
    return frame


def _numeric(frame, column, path, integer=False):
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna()
    if integer:
        bad |= values.notna() & (values != np.round(values))
    if bad.any():
        row = int(np.argmax(bad.to_numpy()))
        raise ValidationError(
            f"{path}: non-numeric {column} {frame[column].iloc[row]!r} on data row {row + 1}")
    return values.astype(np.int64) if integer else values.astype(float)


def load_panel_csv(path):
    """Load a long-format panel CSV.

    The file has exactly the columns t, variable, country, value and one row
    per (t, variable, country) cell. Variables and countries keep their order
    of first appearance; periods are sorted.

    Args:
        path (str): Path to the CSV file.

    Returns:
        PanelSeries: Frames of shape (T, k, n) with labels.
    """
    frame = _read_csv(path, PANEL_COLUMNS)
    frame["t"] = _numeric(frame, "t", path, integer=True)
    frame["value"] = _numeric(frame, "value", path)
    duplicated = frame.duplicated(subset=["t", "variable", "country"])
    if duplicated.any():
        row = frame[duplicated].iloc[0]
        raise ValidationError(
            f"{path}: duplicate cell (t={row.t}, variable={row.variable}, country={row.country})")
    variables = list(pd.unique(frame["variable"]))
    countries = list(pd.unique(frame["country"]))
    periods = sorted(pd.unique(frame["t"]))
    grid = frame.set_index(["t", "variable", "country"])["value"]
    full = pd.MultiIndex.from_product([periods, variables, countries],
                                      names=["t", "variable", "country"])
    grid = grid.reindex(full)
    if grid.isna().any():
        t, variable, country = grid[grid.isna()].index[0]
        raise ValidationError(
            f"{path}: missing cell (t={t}, variable={variable}, country={country})")
    frames = grid.to_numpy().reshape(len(periods), len(variables), len(countries))
    logger.info(f"loaded panel {path}: T={len(periods)}, k={len(variables)}, n={len(countries)}")
    return model.PanelSeries(frames, variables=tuple(variables), countries=tuple(countries),
                             periods=tuple(int(p) for p in periods))


def labels_of(series):
    """Labels of a panel, with generated defaults for missing ones."""
    variables = series.variables or tuple(f"var{i}" for i in range(series.k))
    countries = series.countries or tuple(f"c{j}" for j in range(series.n))
    periods = series.periods or tuple(range(series.T))
    return variables, countries, periods


def panel_to_frame(series):
    variables, countries, periods = labels_of(series)
    index = pd.MultiIndex.from_product([periods, variables, countries],
                                       names=["t", "variable", "country"])
    return pd.DataFrame({"value": series.frames.reshape(-1)}, index=index).reset_index()


def write_panel_csv(series, path):
    """Write a panel in the format read by ``load_panel_csv``."""
    panel_to_frame(series).to_csv(path, index=False, float_format="%.17g")


def preprocess(series):
    """First differences, per-series demeaning, per-variable unit pooled variance.

    Demeaning happens before scaling. The pooled variance of variable i is
    taken over all countries and periods (divisor: number of cells).

    Raises:
        DegenerateInputError: A variable has zero pooled variance.
    """
    if series.T < 3:
        raise DimensionError(f"preprocessing needs at least 3 periods, got {series.T}")
    diffs = np.diff(series.frames, axis=0)
    diffs = diffs - diffs.mean(axis=0, keepdims=True)
    scale = np.sqrt(np.mean(diffs ** 2, axis=(0, 2)))
    variables, _, _ = labels_of(series)
    for i, s in enumerate(scale):
        if s == 0:
            raise DegenerateInputError(f"variable {variables[i]} has zero pooled variance")
    periods = None if series.periods is None else series.periods[1:]
    return model.PanelSeries(diffs / scale[None, :, None], series.variables, series.countries,
                             periods)


@dataclasses.dataclass
class TradeFlowPanel:
    """Annual bilateral trade flows.

    Attributes:
        years (list): Sorted years.
        flows (np.ndarray): Array (len(years), n, n); flows[y, i, j] is
            exports of country i to country j. Diagonal entries are ignored.
        countries (tuple): Country labels.
    """
    years: list
    flows: np.ndarray
    countries: tuple

    def __post_init__(self):
        self.flows = np.asarray(self.flows, dtype=float)
        if self.flows.ndim != 3 or self.flows.shape[0] != len(self.years) \
                or self.flows.shape[1] != self.flows.shape[2]:
            raise DimensionError(f"flows of shape {self.flows.shape} do not match {len(self.years)} years")
        if np.any(self.flows < 0):
            raise ValidationError("trade flows must be nonnegative")


def load_trade_csv(path, countries=None):
    """Load annual trade flows (year, exporter, importer, value).

    Args:
        path (str): Path to the CSV file.
        countries (tuple): Country order to use, typically the panel's labels.
            Missing pairs count as zero trade.

    Returns:
        TradeFlowPanel: Flows aligned to ``countries``.
    """
    frame = _read_csv(path, TRADE_COLUMNS)
    frame["year"] = _numeric(frame, "year", path, integer=True)
    frame["value"] = _numeric(frame, "value", path)
    if countries is None:
        countries = tuple(pd.unique(pd.concat([frame["exporter"], frame["importer"]])))
    index = {c: i for i, c in enumerate(countries)}
    unknown = set(frame["exporter"]).union(frame["importer"]) - set(index)
    if unknown:
        raise ValidationError(f"{path}: unknown countries {sorted(unknown)}")
    years = sorted(int(y) for y in pd.unique(frame["year"]))
    year_index = {y: i for i, y in enumerate(years)}
    flows = np.zeros((len(years), len(countries), len(countries)))
    for row in frame.itertuples(index=False):
        flows[year_index[row.year], index[row.exporter], index[row.importer]] += row.value
    return TradeFlowPanel(years, flows, tuple(countries))


def build_weight_from_trade(panel, as_of_year, window=3):
    """Average of row-normalized trade flows over the latest ``window`` years.

    Only years <= as_of_year are used. Each year's flows get a zero diagonal
    and rows summing to one before averaging.

    Raises:
        ValidationError: Fewer than ``window`` years are available.
        DegenerateInputError: A country has no trade in one of the years.
    """
    available = [i for i, y in enumerate(panel.years) if y <= as_of_year]
    if len(available) < window:
        raise ValidationError(
            f"need {window} trade years up to {as_of_year}, found {len(available)}")
    mats = []
    for i in available[-window:]:
        flows = panel.flows[i].copy()
        np.fill_diagonal(flows, 0.0)
        totals = flows.sum(axis=1)
        for j in np.flatnonzero(totals == 0):
            raise DegenerateInputError(
                f"country {panel.countries[j]} has no trade in {panel.years[i]}")
        mats.append(flows / totals[:, None])
    W = np.mean(mats, axis=0)
    if not np.allclose(W.sum(axis=1), 1.0, rtol=0, atol=1e-12):
        raise DegenerateInputError("averaged trade weights are not row-stochastic")
    return model.WeightMatrix(W)


def trade_weight_provider(panel, periods, periods_per_year=4, first_year=None, window=3):
    """Returns t -> WeightMatrix built from trade years up to the year of period t.

    Args:
        panel (TradeFlowPanel): Trade flows.
        periods (tuple): Period labels of the panel (integers counted from 0).
        periods_per_year (int): Periods per calendar year.
        first_year (int): Calendar year of period 0; defaults to the first year
            with ``window`` trade years available.
        window (int): Number of trade years averaged.
    """
    first_year = panel.years[0] + window - 1 if first_year is None else first_year
    cache = {}

    def provider(t):
        year = first_year + int(periods[t]) // periods_per_year
        if year not in cache:
            cache[year] = build_weight_from_trade(panel, year, window)
        return cache[year]
    return provider


class PanelWindowDataset(torch.utils.data.Dataset):
    """Rolling estimation windows of a panel.

    Sample ``idx`` ends at t = window - 1 + idx and is the tuple
    (t, frames [t - window + 1, t] as a PanelSeries, X_{t+1}).

    Args:
        series (PanelSeries): Panel.
        window (int): Window length.
    """
    def __init__(self, series, window):
        super().__init__()
        if window < 2 or window >= series.T:
            raise DimensionError(f"window {window} does not fit a series of length {series.T}")
        self._series = series
        self._window = window
        self._length = series.T - window

    def __len__(self):
        return self._length

    def __getitem__(self, idx):
        if idx < 0 or idx >= self._length:
            raise IndexError(idx)
        t = self._window - 1 + idx
        train = self._series.window(t - self._window + 1, t + 1)
        return t, train, self._series.frames[t + 1]


def collate_fn(sample):
    """Keeps samples as (int, PanelSeries, np.ndarray) without tensor conversion."""
    return sample


def get_window_loader(series, window):
    """Returns a data loader over rolling windows, in time order.

    Args:
        series (PanelSeries): Panel.
        window (int): Window length.

    Returns:
        torch.utils.data.DataLoader: One window per iteration.
    """
    dataset = PanelWindowDataset(series, window)
    return torch.utils.data.DataLoader(dataset, batch_size=None, shuffle=False,
                                       collate_fn=collate_fn)
