"""Writes a synthetic macro panel and trade-flow file in the real-data schema.

The panel holds quarterly levels of 5 variables for 10 countries over 164
quarters, integrated from a SIGMAR process. Trade flows are annual, cover
three years before the first quarter up to the last quarter's year, and
drift slowly around a random gravity-like base.
"""
import argparse
import os

import numpy as np
import pandas as pd

from sigmar import data_loader
from sigmar import model
from sigmar import simulate

COUNTRIES = ("AUS", "CAN", "DEU", "FRA", "GBR", "ITA", "JPN", "KOR", "MEX", "USA")
VARIABLES = ("gdp", "cpi", "rate", "prod", "trade")
N_QUARTERS = 164
FIRST_YEAR = 1980


def make_trade_flows(countries, years, seed=0):
    """Long table (year, exporter, importer, value) of positive flows."""
    rng = simulate.rng_for(seed, 5)
    n = len(countries)
    base = rng.lognormal(mean=3.0, sigma=1.0, size=(n, n))
    rows = []
    for year in years:
        flows = base * rng.lognormal(mean=0.0, sigma=0.1, size=(n, n))
        for i in range(n):
            for j in range(n):
                if i != j:
                    rows.append((int(year), countries[i], countries[j], float(flows[i, j])))
    return pd.DataFrame(rows, columns=data_loader.TRADE_COLUMNS)


def write_fixture(out_dir, seed=0, countries=COUNTRIES, variables=VARIABLES,
                  n_quarters=N_QUARTERS, first_year=FIRST_YEAR):
    """Writes panel.csv and trade.csv into ``out_dir``.

    Returns:
        dict: Paths of the written files under keys "panel" and "trade".
    """
    os.makedirs(out_dir, exist_ok=True)
    k, n = len(variables), len(countries)
    spec = simulate.DgpSpec(k=k, n=n, s=min(2 * n, (k * n) ** 2), seed=seed, sigma=1.0)
    W = simulate.gen_weight(n, seed)
    params = simulate.gen_coefficients(spec, W)
    growth = simulate.simulate_series(params, W, n_quarters, seed=seed)
    levels = 100.0 + np.cumsum(growth.frames, axis=0)
    panel = model.PanelSeries(levels, variables=variables, countries=countries,
                              periods=tuple(range(n_quarters)))
    last_year = first_year + (n_quarters - 1) // 4
    years = range(first_year - 3, last_year + 1)
    paths = {"panel": os.path.join(out_dir, "panel.csv"),
             "trade": os.path.join(out_dir, "trade.csv")}
    data_loader.write_panel_csv(panel, paths["panel"])
    make_trade_flows(countries, years, seed).to_csv(paths["trade"], index=False,
                                                    float_format="%.10g")
    return paths


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description='Write a synthetic panel and trade-flow fixture.')
    parser.add_argument('--output', default='fixture', help="Output directory.")
    parser.add_argument('--seed', type=int, default=0, help="Seed of the generating process.")
    args = parser.parse_args()
    written = write_fixture(args.output, args.seed)
    print(f"Wrote {written['panel']} and {written['trade']}")
