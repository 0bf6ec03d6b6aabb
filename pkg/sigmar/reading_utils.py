"""Utilities for reading experiment configuration and weight files.

Config files are flat ``key = value`` text:

    # desk replication
    reps = 50
    T_values = 100, 500, 2000
    dgp.sigma = 1.0
    ama.bias_correction = true

Values are parsed as int, then float, then a comma-separated list, then
true/false, else kept as a string. Dotted keys configure the estimator and
simulation settings (``dgp.*``, ``admm.*``, ``ama.*``, ``qmle.*``).
"""
import dataclasses
import logging
import re
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from sigmar import amabc
from sigmar import evaluate
from sigmar import model
from sigmar import projection
from sigmar import qmle
from sigmar import simulate
from sigmar.qmle import QmleOptions
from sigmar.errors import ValidationError

logger = logging.getLogger(__name__)

KEY_PATTERN = re.compile(r"^[a-z_][a-z0-9_.]*$", re.IGNORECASE)
SECTIONS = ("dgp", "admm", "ama", "qmle")
MODES = ("simulate", "fit", "project", "forecast", "benchmark", "replicate")


def _scalar(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    return text


def parse_value(text):
    text = text.strip()
    if "," in text:
        return [_scalar(part.strip()) for part in text.split(",") if part.strip()]
    return _scalar(text)


def parse_config(text, source="<config>"):
    """Parses config text into a dict.

    Raises:
        ValidationError: A line is not ``key = value``, a key is malformed or
            repeated.
    """
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not KEY_PATTERN.match(key):
            raise ValidationError(f"{source}:{lineno}: malformed key {key!r}")
        if key in cfg:
            raise ValidationError(f"{source}:{lineno}: duplicate key {key!r}")
        if not value:
            raise ValidationError(f"{source}:{lineno}: key {key!r} has no value")
        cfg[key] = parse_value(value)
    return cfg


def read_config(path):
    try:
        with open(path, 'rt') as fp:
            text = fp.read()
    except OSError as err:
        raise ValidationError(f"cannot read config {path}: {err}") from err
    cfg = parse_config(text, source=path)
    logger.info(f"read {len(cfg)} settings from {path}")
    return cfg


def dataclass_from_config(cls, cfg, prefix, base=None):
    """Builds ``cls`` from the ``prefix.*`` keys of ``cfg``.

    Args:
        cls: Dataclass type.
        cfg (dict): Parsed configuration.
        prefix (str): Section name, e.g. "ama".
        base: Instance supplying values for keys not set in ``cfg``.

    Raises:
        ValidationError: Unknown key in the section or invalid value.
    """
    fields = {f.name for f in dataclasses.fields(cls)}
    values = {}
    for key, value in cfg.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1:]
        if name not in fields:
            raise ValidationError(f"unknown setting {key!r}; {prefix} accepts {sorted(fields)}")
        values[name] = value
    try:
        if base is not None:
            return dataclasses.replace(base, **values)
        return cls(**values)
    except (TypeError, ValueError) as err:
        if isinstance(err, ValidationError):
            raise
        raise ValidationError(f"invalid {prefix} settings {values}: {err}") from err


def parse_cell(text):
    """'3x4x10' -> (3, 4, 10)."""
    parts = str(text).lower().split("x")
    try:
        cell = tuple(int(p) for p in parts)
    except ValueError as err:
        raise ValidationError(f"cell {text!r} is not of the form KxNxS") from err
    if len(cell) != 3:
        raise ValidationError(f"cell {text!r} is not of the form KxNxS")
    return cell


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


@dataclasses.dataclass
class ExperimentConfig:
    """Merged settings of one CLI run.

    Attributes:
        mode (str): Subcommand, one of MODES.
        seed (int): Master seed.
        out (str): Output directory.
        exp_id (str): Experiment identifier used in file names.
        reps (int): Replications per cell and design.
        designs (int): Independent true-parameter draws per replication cell.
        jobs (int): Worker processes.
        method (str): Estimator for ``fit`` and ``forecast``.
        methods (tuple): Estimators for ``benchmark``.
        data (str): Panel CSV.
        weights (str): Weight matrix CSV.
        trade (str): Trade-flow CSV; weights are built from it when given.
        params (str): Parameter JSON (``project``, oracle forecasts).
        phi (str): Transition matrix CSV for ``project``.
        preprocess (bool): Difference, demean and scale the panel first.
        window (int): Rolling window length.
        warm_start (bool): Warm-start rolling SIGMAR fits.
        periods_per_year (int): Panel periods per trade year.
        first_year (int): Calendar year of period 0.
        as_of_year (int): Trade year for a single fit.
        trade_window (int): Number of trade years averaged.
        cells (list): (k, n, s) simulation cells.
        T_values (list): Series lengths of the replication grid.
        dgp (DgpSpec): Simulation design for ``simulate``.
    """
    mode: Optional[str] = None
    seed: int = 0
    out: str = "results"
    exp_id: str = "exp"
    reps: int = 50
    designs: int = 1
    jobs: int = 1
    method: str = "bc"
    methods: Tuple[str, ...] = ("iar", "ivar", "ivarx", "svar", "mar", "smar", "gmar", "qmle", "bc")
    data: Optional[str] = None
    weights: Optional[str] = None
    trade: Optional[str] = None
    params: Optional[str] = None
    phi: Optional[str] = None
    preprocess: bool = False
    window: int = 40
    warm_start: bool = False
    periods_per_year: int = 4
    first_year: Optional[int] = None
    as_of_year: Optional[int] = None
    trade_window: int = 3
    cells: List[Tuple[int, int, int]] = dataclasses.field(default_factory=lambda: [(3, 4, 10)])
    T_values: List[int] = dataclasses.field(default_factory=lambda: [100, 500, 2000])
    dgp: simulate.DgpSpec = dataclasses.field(default_factory=simulate.DgpSpec)
    admm: projection.AdmmConfig = dataclasses.field(default_factory=projection.AdmmConfig)
    ama: amabc.AmaConfig = dataclasses.field(default_factory=amabc.AmaConfig)
    qmle: QmleOptions = dataclasses.field(default_factory=QmleOptions)

    @classmethod
    def from_sources(cls, mode, cfg=None, overrides=None):
        """Defaults < config file < command-line flags.

        Args:
            mode (str): Subcommand.
            cfg (dict): Parsed config file.
            overrides (dict): Flags that were given on the command line.
        """
        merged = dict(cfg or {})
        merged.update({key: value for key, value in (overrides or {}).items() if value is not None})
        top = {f.name for f in dataclasses.fields(cls)} - set(SECTIONS)
        values = {"mode": mode}
        for key, value in merged.items():
            if "." in key:
                if key.split(".", 1)[0] not in SECTIONS:
                    raise ValidationError(f"unknown setting section in {key!r}")
                continue
            if key not in top or key == "mode":
                raise ValidationError(f"unknown setting {key!r}")
            values[key] = value
        if "methods" in values:
            values["methods"] = tuple(str(m) for m in _as_list(values["methods"]))
        if "cells" in values:
            values["cells"] = [parse_cell(c) for c in _as_list(values["cells"])]
        if "T_values" in values:
            values["T_values"] = [int(t) for t in _as_list(values["T_values"])]
        for name in ("data", "weights", "trade", "params", "phi", "out", "exp_id", "method"):
            if name in values:
                values[name] = str(values[name])
        values["dgp"] = dataclass_from_config(simulate.DgpSpec, merged, "dgp")
        values["admm"] = dataclass_from_config(projection.AdmmConfig, merged, "admm")
        values["ama"] = dataclass_from_config(amabc.AmaConfig, merged, "ama")
        values["qmle"] = dataclass_from_config(qmle.QmleOptions, merged, "qmle")
        try:
            config = cls(**values)
        except TypeError as err:
            raise ValidationError(f"invalid settings: {err}") from err
        config.validate()
        return config

    def method_options(self):
        return evaluate.MethodOptions(qmle=self.qmle, ama=self.ama, admm=self.admm, seed=self.seed)

    def validate(self):
        """Checks the fields each mode needs."""
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.reps < 1 or self.jobs < 1 or self.designs < 1:
            raise ValidationError("reps, designs and jobs must be at least 1")
        if self.seed < 0:
            raise ValidationError(f"seed must be nonnegative, got {self.seed}")
        if self.mode in ("fit", "forecast", "benchmark"):
            if self.data is None:
                raise ValidationError(f"{self.mode} needs a panel (data)")
            if self.weights is None and self.trade is None:
                raise ValidationError(f"{self.mode} needs weights or trade flows")
        oracle = self.mode == "forecast" and self.method == "oracle"
        if oracle and self.params is None:
            raise ValidationError("oracle forecasts need the true parameters (params)")
        if self.mode in ("fit", "forecast") and not oracle and self.method not in evaluate.METHODS:
            raise ValidationError(
                f"unknown method {self.method!r}; choose from {', '.join(evaluate.METHODS)}")
        if self.mode == "benchmark":
            unknown = [m for m in self.methods if m not in evaluate.METHODS]
            if unknown:
                raise ValidationError(f"unknown benchmark methods {unknown}")
        if self.mode in ("forecast", "benchmark") and self.window < 2:
            raise ValidationError(f"window must be at least 2, got {self.window}")
        if self.mode == "project" and self.phi is None and self.params is None:
            raise ValidationError("project needs a transition matrix (phi) or parameters (params)")
        if self.mode == "replicate":
            if not self.cells or not self.T_values:
                raise ValidationError("replicate needs at least one cell and one T value")
            if any(t < 3 for t in self.T_values):
                raise ValidationError(f"T values must be at least 3, got {self.T_values}")
        if self.periods_per_year < 1 or self.trade_window < 1:
            raise ValidationError("periods_per_year and trade_window must be at least 1")


def load_matrix_csv(path):
    """Reads a headerless CSV of numbers into a 2-D array."""
    try:
        frame = pd.read_csv(path, header=None)
        M = frame.to_numpy(dtype=float)
    except (OSError, ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise ValidationError(f"cannot read matrix {path}: {err}") from err
    if not np.all(np.isfinite(M)):
        raise ValidationError(f"{path}: matrix has non-finite entries")
    return M


def load_weight_csv(path):
    """Reads an n x n weight matrix; row i holds the weights of country i."""
    return model.WeightMatrix(load_matrix_csv(path))


def write_matrix_csv(M, path, index=None, columns=None):
    """Writes a matrix; labels are added when both index and columns are given."""
    frame = pd.DataFrame(np.asarray(M, dtype=float))
    if index is not None and columns is not None:
        frame.index, frame.columns = list(index), list(columns)
        frame.to_csv(path, float_format="%.17g")
    else:
        frame.to_csv(path, header=False, index=False, float_format="%.17g")
