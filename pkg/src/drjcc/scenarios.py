"""Uncertainty samples per prosumer and the profile CSV format.

Each prosumer's uncertain net demand (must-run load minus PV) is modelled as
``D (mu + xi)``: ``D`` is a diagonal of nominal uncertain power (kW), ``D mu``
is the nominal net profile and ``D xi`` the deviation of one observed day.
Samples are stored in kW; :meth:`ProsumerScenarios.normalized` returns the
dimensionless ``xi`` used by the ambiguity set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import CommunityConfig

SCALE_FLOOR_KW = 0.1
PROFILE_HEADER = ["prosumer_id", "day", "hour", "load_kw", "pv_kw"]


class ProfileError(ValueError):
    """Raised for malformed or inconsistent profile data."""


def _ro(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ProsumerScenarios:
    nominal_load: np.ndarray  # (T,) kW
    nominal_pv: np.ndarray  # (T,) kW
    samples: np.ndarray  # (I, T) kW deviations of net demand
    scale: np.ndarray  # (T,) diagonal of D, kW

    def __post_init__(self):
        for name in ("nominal_load", "nominal_pv", "scale"):
            object.__setattr__(self, name, _ro(getattr(self, name)))
        samples = _ro(np.atleast_2d(self.samples))
        object.__setattr__(self, "samples", samples)
        T = len(self.nominal_load)
        if samples.shape[1] != T or len(self.nominal_pv) != T or len(self.scale) != T:
            raise ProfileError("sample vectors, nominals and scale must share the horizon length")
        if samples.shape[0] < 1:
            raise ProfileError("at least one sample is required")
        if not np.all(np.isfinite(self.scale)) or np.any(self.scale <= 0):
            raise ProfileError("scale entries must be finite and positive")

    @classmethod
    def from_days(cls, load: np.ndarray, pv: np.ndarray) -> "ProsumerScenarios":
        """Nominals are the per-hour means; samples are residuals of net demand."""
        load, pv = np.atleast_2d(load), np.atleast_2d(pv)
        nominal_load = load.mean(axis=0)
        nominal_pv = pv.mean(axis=0)
        net = load - pv
        return cls(nominal_load, nominal_pv, net - net.mean(axis=0), scale_for(nominal_load - nominal_pv))

    @property
    def horizon(self) -> int:
        return len(self.nominal_load)

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def nominal_net(self) -> np.ndarray:
        return self.nominal_load - self.nominal_pv

    @property
    def mu(self) -> np.ndarray:
        return self.nominal_net / self.scale

    def normalized(self) -> np.ndarray:
        """Dimensionless deviations ``xi = D^-1 (sample deviation)``, shape (I, T)."""
        return self.samples / self.scale

    def realized_net(self) -> np.ndarray:
        """Net demand ``D (mu + xi)`` of every sample, kW, shape (I, T)."""
        return self.nominal_net + self.samples


def scale_for(nominal_net: np.ndarray) -> np.ndarray:
    return np.maximum(np.abs(nominal_net), SCALE_FLOOR_KW)


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    prosumers: dict  # id -> ProsumerScenarios
    days: tuple = ()

    def __post_init__(self):
        counts = {s.count for s in self.prosumers.values()}
        if len(counts) > 1:
            raise ProfileError(f"prosumers carry different sample counts: {sorted(counts)}")
        if not self.days:
            object.__setattr__(self, "days", tuple(range(self.sample_count)))
        elif len(self.days) != self.sample_count:
            raise ProfileError("day labels must match the sample count")

    def __getitem__(self, pid: str) -> ProsumerScenarios:
        return self.prosumers[pid]

    @property
    def sample_count(self) -> int:
        return next(iter(self.prosumers.values())).count if self.prosumers else 0

    @property
    def ids(self) -> list:
        return list(self.prosumers)

    def subset(self, ids) -> "ScenarioSet":
        return ScenarioSet({i: self.prosumers[i] for i in ids}, self.days)


def load_profiles(path, config: CommunityConfig) -> ScenarioSet:
    """Read ``prosumer_id,day,hour,load_kw,pv_kw`` rows into a ScenarioSet."""
    T = config.horizon
    known = set(config.ids)
    load, pv = {}, {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != PROFILE_HEADER:
            raise ProfileError(f"{path}: header must be {','.join(PROFILE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ProfileError(f"{path}:{lineno}: expected 5 columns")
            pid, day = row[0].strip(), row[1].strip()
            if pid not in known:
                raise ProfileError(f"{path}:{lineno}: missing prosumer {pid!r} in community config")
            try:
                hour = int(row[2])
                lkw, pkw = float(row[3]), float(row[4])
            except ValueError:
                raise ProfileError(f"{path}:{lineno}: non-numeric cell") from None
            if not 0 <= hour < T:
                raise ProfileError(f"{path}:{lineno}: hour {hour} outside 0..{T - 1}")
            if not (np.isfinite(lkw) and np.isfinite(pkw)):
                raise ProfileError(f"{path}:{lineno}: non-finite value")
            key = (pid, day)
            if hour in load.get(key, {}):
                raise ProfileError(f"{path}:{lineno}: duplicate row for {pid!r}, day {day!r}, hour {hour}")
            load.setdefault(key, {})[hour] = lkw
            pv.setdefault(key, {})[hour] = pkw

    days_of = {}
    for (pid, day), hours in load.items():
        if len(hours) != T:
            raise ProfileError(f"{path}: ragged day {day!r} for {pid!r} ({len(hours)} of {T} hours)")
        days_of.setdefault(pid, []).append(day)
    missing = known - set(days_of)
    if missing:
        raise ProfileError(f"{path}: missing prosumer(s) {sorted(missing)}")
    day_sets = {tuple(sorted(v)) for v in days_of.values()}
    if len(day_sets) != 1:
        raise ProfileError(f"{path}: prosumers do not share the same days")
    days = days_of[config.ids[0]]

    out = {}
    for pid in config.ids:
        L = np.array([[load[(pid, d)][h] for h in range(T)] for d in days])
        G = np.array([[pv[(pid, d)][h] for h in range(T)] for d in days])
        out[pid] = ProsumerScenarios.from_days(L, G)
    return ScenarioSet(out, tuple(days))


def write_profiles(scenarios: ScenarioSet, path) -> None:
    """Write samples as load = nominal load + deviation, pv = nominal pv."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_HEADER)
        for pid, sc in scenarios.prosumers.items():
            for i, day in enumerate(scenarios.days):
                load = sc.nominal_load + sc.samples[i]
                for h in range(sc.horizon):
                    w.writerow([pid, day, h, f"{load[h]:.12g}", f"{sc.nominal_pv[h]:.12g}"])


def split_train_test(s: ScenarioSet, train_fraction: float, seed: int):
    """Random disjoint split of sample indices.

    Nominals and scales are recomputed from the training part; the test part
    is expressed as deviations from the training nominal.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    I = s.sample_count
    n_train = int(round(I * train_fraction))
    if n_train < 1 or n_train >= I:
        raise ValueError(f"degenerate split: {n_train} train / {I - n_train} test samples")
    perm = np.random.default_rng(seed).permutation(I)
    train_idx, test_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])

    train, test = {}, {}
    for pid, sc in s.prosumers.items():
        shift = sc.samples[train_idx].mean(axis=0)
        nominal_load = sc.nominal_load + shift
        scale = scale_for(nominal_load - sc.nominal_pv)
        train[pid] = ProsumerScenarios(nominal_load, sc.nominal_pv, sc.samples[train_idx] - shift, scale)
        test[pid] = ProsumerScenarios(nominal_load, sc.nominal_pv, sc.samples[test_idx] - shift, scale)
    days = np.array(s.days, dtype=object)
    return (
        ScenarioSet(train, tuple(days[train_idx])),
        ScenarioSet(test, tuple(days[test_idx])),
    )
