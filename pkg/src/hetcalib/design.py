"""Replicated physical designs: grouping raw observations into unique locations.

Every downstream computation works with the n unique input locations, their
replicate counts ``a`` and the per-location sample means and (biased) sample
variances, never with the N raw rows directly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np


class DesignError(ValueError):
    """Raised for malformed or degenerate experimental data."""


@dataclass(frozen=True)
class Observation:
    x: tuple[float, ...]
    y: float

    def __post_init__(self):
        if len(self.x) < 1:
            raise DesignError("observation has an empty input vector")
        if not all(math.isfinite(v) for v in self.x) or not math.isfinite(self.y):
            raise DesignError(f"non-finite value in observation {self.x!r}, {self.y!r}")


@dataclass(frozen=True, eq=False)
class ReplicatedDesign:
    """Unique input locations with their replicate groups.

    Attributes
    ----------
    locations : ndarray, shape (n, d)
        Unique input locations, sorted lexicographically.
    replicates : tuple of ndarray
        ``replicates[i]`` holds the responses observed at ``locations[i]``.
    bounds : ndarray, shape (d, 2)
        Box containing the input domain.
    """

    locations: np.ndarray
    replicates: tuple
    bounds: np.ndarray
    a: np.ndarray = field(init=False)
    ybar: np.ndarray = field(init=False)
    s2: np.ndarray = field(init=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.locations, dtype=float))
        reps = tuple(np.asarray(r, dtype=float).ravel() for r in self.replicates)
        bounds = np.asarray(self.bounds, dtype=float).reshape(X.shape[1], 2)
        if len(reps) != X.shape[0]:
            raise DesignError("one replicate group per unique location is required")
        if X.shape[0] < 2:
            raise DesignError(f"need at least 2 unique locations, got {X.shape[0]}")
        if any(r.size == 0 for r in reps):
            raise DesignError("empty replicate group")
        if np.any(bounds[:, 0] > bounds[:, 1]):
            raise DesignError("domain bounds must satisfy lo <= hi")
        if np.any(X < bounds[:, 0] - 1e-12) or np.any(X > bounds[:, 1] + 1e-12):
            raise DesignError("unique location outside the domain bounds")
        a = np.array([r.size for r in reps], dtype=int)
        ybar = np.array([math.fsum(r) / r.size for r in reps])
        s2 = np.array([math.fsum((r - m) ** 2) / r.size for r, m in zip(reps, ybar)])
        for arr in (X, bounds, a, ybar, s2):
            arr.setflags(write=False)
        object.__setattr__(self, "locations", X)
        object.__setattr__(self, "replicates", reps)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "ybar", ybar)
        object.__setattr__(self, "s2", s2)

    @property
    def n(self) -> int:
        return self.locations.shape[0]

    @property
    def d(self) -> int:
        return self.locations.shape[1]

    @property
    def N(self) -> int:
        return int(self.a.sum())

    @property
    def y(self) -> np.ndarray:
        """All raw responses, grouped by location."""
        return np.concatenate(self.replicates)

    @property
    def X(self) -> np.ndarray:
        """Raw inputs aligned with :attr:`y`."""
        return np.repeat(self.locations, self.a, axis=0)

    @property
    def group(self) -> np.ndarray:
        """Index of the unique location of every raw row."""
        return np.repeat(np.arange(self.n), self.a)

    def unbiased_variance(self) -> np.ndarray:
        """Sample variances with divisor ``a_i - 1`` (NaN where ``a_i == 1``).

        For diagnostics and WLS weighting only; the likelihood uses :attr:`s2`.
        """
        out = np.full(self.n, np.nan)
        m = self.a > 1
        out[m] = self.s2[m] * self.a[m] / (self.a[m] - 1)
        return out

    def pooled_variance(self) -> float:
        """Pooled within-location variance, falling back to the spread of the means."""
        dof = int(np.sum(self.a - 1))
        if dof > 0:
            v = float(np.sum(self.a * self.s2) / dof)
            if v > 0:
                return v
        v = float(np.var(self.ybar))
        return v if v > 0 else 1.0

    def observations(self) -> list[Observation]:
        return [Observation(tuple(float(v) for v in x), float(yv))
                for x, yv in zip(self.X, self.y)]


def group_replicates(obs: Iterable[Observation], rounding: int = 8,
                     bounds=None) -> ReplicatedDesign:
    """Merge observations whose inputs agree after rounding to ``rounding`` decimals.

    Unique locations are ordered lexicographically by their rounded coordinates.
    ``bounds`` defaults to the per-dimension data range.
    """
    obs = list(obs)
    if not obs:
        raise DesignError("no observations")
    d = len(obs[0].x)
    groups: dict[tuple, list[float]] = {}
    first: dict[tuple, tuple] = {}
    for k, o in enumerate(obs):
        if len(o.x) != d:
            raise DesignError(f"observation {k} has dimension {len(o.x)}, expected {d}")
        key = tuple(round(float(v), rounding) + 0.0 for v in o.x)
        groups.setdefault(key, []).append(float(o.y))
        first.setdefault(key, tuple(float(v) for v in o.x))
    keys = sorted(groups)
    if len(keys) < 2:
        raise DesignError(f"need at least 2 unique locations after grouping, got {len(keys)}")
    # group on rounded keys, but keep the exact coordinates of the first occurrence
    X = np.array([first[k] for k in keys], dtype=float)
    if bounds is None:
        bounds = np.column_stack([X.min(axis=0), X.max(axis=0)])
    return ReplicatedDesign(X, tuple(np.array(groups[k]) for k in keys), bounds)


def design_from_arrays(X, y, rounding: int = 8, bounds=None) -> ReplicatedDesign:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise DesignError("X and y lengths differ")
    return group_replicates((Observation(tuple(x), v) for x, v in zip(X, y)),
                            rounding=rounding, bounds=bounds)


def minmax_scale(design: ReplicatedDesign) -> tuple[ReplicatedDesign, np.ndarray]:
    """Rescale inputs to the unit cube. Returns the scaled design and the old bounds."""
    lo, hi = design.bounds[:, 0], design.bounds[:, 1]
    width = np.where(hi > lo, hi - lo, 1.0)
    X = (design.locations - lo) / width
    unit = np.column_stack([np.zeros(design.d), np.ones(design.d)])
    return ReplicatedDesign(X, design.replicates, unit), design.bounds.copy()


def _default_schema(d: int) -> dict[str, str]:
    s = {f"x{j + 1}": f"x{j + 1}" for j in range(d)}
    s["y"] = "y"
    return s


def read_design_csv(path, schema: Mapping[str, str] | None = None, rounding: int = 8,
                    bounds=None) -> ReplicatedDesign:
    """Read a header-row CSV into a :class:`ReplicatedDesign`.

    ``schema`` maps logical names (``x1``..``xd``, ``y``) to CSV column names.
    Without a schema, every column named ``x<k>`` is an input and ``y`` is the
    response.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DesignError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DesignError(f"{path}: empty file") from None
        if schema is None:
            xs = sorted((h for h in header if h.startswith("x") and h[1:].isdigit()),
                        key=lambda h: int(h[1:]))
            schema = _default_schema(len(xs))
        xkeys = sorted((k for k in schema if k != "y"), key=lambda k: int(k[1:]))
        if "y" not in schema or not xkeys:
            raise DesignError("schema must name at least one input column and 'y'")
        cols = {}
        for key in xkeys + ["y"]:
            name = schema[key]
            if name not in header:
                raise DesignError(f"{path}: missing column {name!r} (for {key})")
            cols[key] = header.index(name)
        obs = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            vals = []
            for key in xkeys + ["y"]:
                j = cols[key]
                cell = row[j].strip() if j < len(row) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise DesignError(
                        f"{path}: line {lineno}, column {schema[key]!r}: "
                        f"cannot parse {cell!r} as a number") from None
                if not math.isfinite(v):
                    raise DesignError(f"{path}: line {lineno}, column {schema[key]!r}: non-finite value")
                vals.append(v)
            obs.append(Observation(tuple(vals[:-1]), vals[-1]))
    if not obs:
        raise DesignError(f"{path}: no data rows")
    return group_replicates(obs, rounding=rounding, bounds=bounds)


def write_design_csv(design: ReplicatedDesign, path, schema: Mapping[str, str] | None = None) -> None:
    """Write raw rows at 17 significant digits (lossless for float64)."""
    schema = dict(schema or _default_schema(design.d))
    names = [schema[f"x{j + 1}"] for j in range(design.d)] + [schema["y"]]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for x, yv in zip(design.X, design.y):
            w.writerow([f"{v:.17g}" for v in x] + [f"{yv:.17g}"])
