"""
CSV ingestion for observation tables.

Two layouts are accepted (comma separated, header row, UTF-8):
  direct  id,x,sigma
  AYP     id,Y,Yprime,n,nprime   -> x = Y - Yprime, sigma from the two rates
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from hetsel.model import InputError, Observation

logger = logging.getLogger(__name__)

DIRECT_COLUMNS = ("id", "x", "sigma")
AYP_COLUMNS = ("id", "Y", "Yprime", "n", "nprime")


class IngestError(InputError):
    """Parse or validation failure tied to a file line (header is line 1)."""

    def __init__(self, message, line=None, path=None):
        super().__init__(message)
        self.line = line
        self.path = str(path) if path is not None else None

    def context(self):
        return {"line": self.line, "path": self.path}


@dataclass(frozen=True)
class IngestRecord:
    id: str
    x: float
    sigma: float
    line: Optional[int] = None

    def to_observation(self):
        return Observation(id=self.id, x=self.x, sigma=self.sigma)


def ayp_standard_error(Y, Yprime, n, nprime):
    """sqrt(Y(1-Y)/n + Y'(1-Y')/n') for a difference of two passing rates."""
    for name, rate in (("Y", Y), ("Yprime", Yprime)):
        if not 0.0 <= rate <= 1.0:
            raise InputError(f"{name} must be a rate in [0, 1], got {rate}")
    for name, count in (("n", n), ("nprime", nprime)):
        if not count >= 1:
            raise InputError(f"{name} must be >= 1, got {count}")
    variance = Y * (1.0 - Y) / n + Yprime * (1.0 - Yprime) / nprime
    if variance <= 0:
        raise InputError("degenerate unit: both variance terms are zero")
    return math.sqrt(variance)


def _numeric(frame, column, path):
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise IngestError(f"column {column!r} has a missing or non-numeric value", line=row + 2, path=path)
    return values.to_numpy(dtype=float)


def read_observations(path) -> List[IngestRecord]:
    """Read a direct or AYP-style CSV into validated records."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"id": str}, float_precision="round_trip", encoding="utf-8",
                            keep_default_na=False, na_values=[""])
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise IngestError(f"cannot parse CSV: {e}", line=None, path=path)

    columns = set(frame.columns)
    if "id" not in columns:
        raise IngestError("missing required column 'id'", line=1, path=path)
    if frame["id"].isna().any():
        row = int(np.flatnonzero(frame["id"].isna().to_numpy())[0])
        raise IngestError("missing id", line=row + 2, path=path)

    records = []
    if set(DIRECT_COLUMNS) <= columns:
        xs = _numeric(frame, "x", path)
        sigmas = _numeric(frame, "sigma", path)
        for row, (uid, x, sigma) in enumerate(zip(frame["id"], xs, sigmas)):
            if not (math.isfinite(x) and math.isfinite(sigma) and sigma > 0):
                raise IngestError(f"unit {uid!r}: x must be finite and sigma positive", line=row + 2, path=path)
            records.append(IngestRecord(id=uid, x=x, sigma=sigma, line=row + 2))
        layout = "direct"
    elif set(AYP_COLUMNS) <= columns:
        values = {c: _numeric(frame, c, path) for c in AYP_COLUMNS[1:]}
        for row, uid in enumerate(frame["id"]):
            Y, Yp = values["Y"][row], values["Yprime"][row]
            try:
                sigma = ayp_standard_error(Y, Yp, values["n"][row], values["nprime"][row])
            except InputError as e:
                raise IngestError(f"unit {uid!r}: {e}", line=row + 2, path=path)
            records.append(IngestRecord(id=uid, x=Y - Yp, sigma=sigma, line=row + 2))
        layout = "ayp"
    else:
        raise IngestError(f"header must contain {','.join(DIRECT_COLUMNS)} or {','.join(AYP_COLUMNS)}",
                          line=1, path=path)

    if not records:
        raise IngestError("no data rows", line=2, path=path)
    logger.info("Loaded %d units from %s (%s layout)", len(records), path, layout)
    return records


def trim_by_se_percentile(records, lower=0.0, upper=1.0):
    """Drop records whose sigma lies strictly outside the [lower, upper] empirical percentiles."""
    if not 0.0 <= lower < upper <= 1.0:
        raise InputError(f"trim bounds must satisfy 0 <= lower < upper <= 1, got ({lower}, {upper})")
    if not records:
        raise InputError("nothing to trim")
    sigmas = np.array([r.sigma for r in records], dtype=float)
    lo, hi = np.quantile(sigmas, [lower, upper])
    kept = [r for r, s in zip(records, sigmas) if lo <= s <= hi]
    if not kept:
        raise InputError("all records were trimmed")
    if len(kept) < len(records):
        logger.info("Trimmed %d of %d units by standard-error percentiles (%.4g, %.4g)",
                    len(records) - len(kept), len(records), lower, upper)
    return kept


def write_observations(path, ids, xs, sigmas, extra=None):
    """Write id,x,sigma (plus extra columns) with round-trip float formatting."""
    frame = pd.DataFrame({"id": list(ids), "x": np.asarray(xs, dtype=float),
                          "sigma": np.asarray(sigmas, dtype=float)})
    for name, values in (extra or {}).items():
        frame[name] = values
    frame.to_csv(path, index=False, encoding="utf-8")
    return frame
