"""Per-farm observation series: CSV ingestion and synthetic generation.

One CSV per farm with header ``timestamp,awo_mw,fwo_mw`` (ISO-8601 UTC
timestamps).  Farms are aligned on the exact intersection of their
timestamps; rows missing in any farm are dropped and counted.  The
synthetic generator replaces the proprietary measurement archive: it
draws each farm from a known mixture, clamps negative power to zero, and
also emits the exact distribution of the independent-farm aggregate for
oracle comparisons.
"""

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CsvFormatError, InsufficientDataError, ParameterError
from .mixture import GmmParams

_HEADER = ["timestamp", "awo_mw", "fwo_mw"]
_MAX_AGGREGATE_COMPONENTS = 100_000


@dataclass(frozen=True)
class WindSeries:
    """One farm's aligned (actual, forecast) observation pairs in MW."""

    farm_id: str
    timestamps: tuple
    values: np.ndarray
    capacity_mw: float | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        if values.ndim != 2 or values.shape[1] != 2:
            raise ParameterError("values must have shape (N, 2)")
        if values.shape[0] != len(self.timestamps):
            raise ParameterError("one timestamp per observation row required")
        if not np.all(np.isfinite(values)):
            raise ParameterError(f"farm {self.farm_id}: non-finite power value")
        if np.any(values < 0):
            raise ParameterError(f"farm {self.farm_id}: negative power value")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "timestamps", tuple(self.timestamps))

    @property
    def n_obs(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class LoadResult:
    """Aligned farms plus how many rows the alignment dropped."""

    farms: tuple
    dropped_rows: int


def observation_blocks(farms):
    """(M, N, 2) observation array from aligned farm series."""
    sizes = {farm.n_obs for farm in farms}
    if len(sizes) != 1:
        raise ParameterError("farms are not aligned to a common length")
    return np.stack([farm.values for farm in farms])


def aggregate_observations(farms):
    """Network totals per timestamp: the (N, 2) sums over farms."""
    return observation_blocks(farms).sum(axis=0)


def load_csv(directory):
    """Load every ``*.csv`` in a directory as one farm each.

    Farms are ordered by file name; timestamps are matched exactly as
    strings.  Raises :class:`CsvFormatError` with the file and line for
    malformed rows, and errors out when no timestamp is shared by all
    farms.
    """
    directory = Path(directory)
    paths = sorted(directory.glob("*.csv"))
    if not paths:
        raise InsufficientDataError(f"no CSV files in {directory}")

    raw = []
    for path in paths:
        rows = {}
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            try:
                header = next(reader)
            except StopIteration:
                raise CsvFormatError(f"{path}: empty file", path=str(path),
                                     line=1) from None
            if header != _HEADER:
                raise CsvFormatError(
                    f"{path}: expected header {','.join(_HEADER)!r}, got "
                    f"{','.join(header)!r}", path=str(path), line=1)
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 3:
                    raise CsvFormatError(
                        f"{path}:{lineno}: expected 3 fields, got {len(row)}",
                        path=str(path), line=lineno)
                stamp = row[0]
                try:
                    awo, fwo = float(row[1]), float(row[2])
                except ValueError as exc:
                    raise CsvFormatError(f"{path}:{lineno}: {exc}",
                                         path=str(path), line=lineno) from exc
                if stamp in rows:
                    raise CsvFormatError(
                        f"{path}:{lineno}: duplicate timestamp {stamp!r}",
                        path=str(path), line=lineno)
                rows[stamp] = (awo, fwo)
        raw.append((path.stem, rows))

    common = set(raw[0][1])
    for _, rows in raw[1:]:
        common &= set(rows)
    if not common:
        raise InsufficientDataError(
            "farms share no common timestamps; nothing to align")
    ordered = sorted(common)
    dropped = sum(len(rows) - len(common) for _, rows in raw)

    farms = tuple(
        WindSeries(
            farm_id=farm_id,
            timestamps=ordered,
            values=np.array([rows[t] for t in ordered]),
        )
        for farm_id, rows in raw
    )
    return LoadResult(farms=farms, dropped_rows=dropped)


def write_csv(farms, directory):
    """One CSV per farm; floats printed in round-trip (repr) form."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for farm in farms:
        with open(directory / f"{farm.farm_id}.csv", "w", newline="",
                  encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(_HEADER)
            for stamp, (awo, fwo) in zip(farm.timestamps, farm.values):
                writer.writerow([stamp, repr(float(awo)), repr(float(fwo))])


def hourly_timestamps(n, start_day="2024-01-01"):
    """n consecutive hourly ISO-8601 UTC timestamps."""
    base = np.datetime64(f"{start_day}T00:00:00", "s")
    hour = np.timedelta64(3600, "s")
    return tuple(str(base + i * hour) + "Z" for i in range(n))


def aggregate_truth(farm_truths):
    """Exact mixture of the sum of independent per-farm mixtures.

    Component-wise convolution: one aggregate component per choice of a
    component in every farm, with product weight, summed means and summed
    covariances.  Guarded against combinatorial blow-up.
    """
    total = 1
    for truth in farm_truths:
        total *= truth.n_components
        if total > _MAX_AGGREGATE_COMPONENTS:
            raise ParameterError(
                "aggregated truth would exceed "
                f"{_MAX_AGGREGATE_COMPONENTS} components")
    weights = np.empty(total)
    means = np.empty((total, 2))
    covs = np.empty((total, 2, 2))
    ranges = [range(t.n_components) for t in farm_truths]
    for idx, combo in enumerate(itertools.product(*ranges)):
        w = 1.0
        mu = np.zeros(2)
        cov = np.zeros((2, 2))
        for truth, j in zip(farm_truths, combo):
            w *= truth.weights[j]
            mu += truth.means[j]
            cov += truth.covariances[j]
        weights[idx] = w
        means[idx] = mu
        covs[idx] = cov
    weights = weights / weights.sum()
    return GmmParams(weights=weights, means=means, covariances=covs)


@dataclass(frozen=True)
class SyntheticResult:
    """Generated farms, the exact aggregate distribution, clamp count."""

    farms: tuple
    aggregated_truth: GmmParams
    clamped_values: int


def generate_synthetic(farm_truths, n_obs, seed, farm_ids=None,
                       start_day="2024-01-01"):
    """Draw aligned per-farm series from known mixtures.

    Farms are sampled independently on deterministic per-farm substreams
    of ``seed``.  Negative draws are clamped to zero and counted; pick
    truths with mass in the positive quadrant when the clamping would
    distort an oracle comparison.
    """
    if n_obs < 1:
        raise ParameterError("need at least one observation")
    m_count = len(farm_truths)
    if m_count < 1:
        raise ParameterError("need at least one farm truth")
    if farm_ids is None:
        farm_ids = [f"farm{m + 1:02d}" for m in range(m_count)]
    if len(farm_ids) != m_count:
        raise ParameterError("one farm id per truth required")

    stamps = hourly_timestamps(n_obs, start_day)
    streams = np.random.SeedSequence(seed).spawn(m_count)
    farms = []
    clamped = 0
    for farm_id, truth, stream in zip(farm_ids, farm_truths, streams):
        draws = truth.sample(n_obs, np.random.default_rng(stream))
        clamped += int(np.sum(draws < 0))
        draws = np.maximum(draws, 0.0)
        farms.append(WindSeries(farm_id=farm_id, timestamps=stamps,
                                values=draws))
    return SyntheticResult(
        farms=tuple(farms),
        aggregated_truth=aggregate_truth(farm_truths),
        clamped_values=clamped,
    )
