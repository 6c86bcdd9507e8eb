"""Reproducible synthetic communities.

Load shapes follow four consumption archetypes (evening-peaked residential,
midday commercial, flat industrial, evening public buildings); PV is a
daylight bell with day-level cloud factors and hourly noise. Device limits
and prices are drawn inside typical ranges for small prosumers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytics import ARCHETYPES
from .config import (
    AdmmConfig,
    AmbiguitySpec,
    CommunityConfig,
    ConfigError,
    PriceSchedule,
    ProsumerConfig,
    RiskSpec,
)
from .scenarios import ProsumerScenarios, ScenarioSet

ARCHETYPE_NAMES = tuple(ARCHETYPES)

# hourly shape parameters: (night, morning, business, evening) levels, bump hour, height, width
_SHAPES = {
    "Residential": ((1.35, 0.3, 0.6, 0.3), 18, 3.4, 1.0),
    "Commercial": ((0.95, 0.25, 1.35, 0.1), 11, 1.7, 2.0),
    "Industrial": ((2.2, 0.4, 1.65, 0.4), 17, 0.9, 1.5),
    "Public": ((0.75, 0.2, 0.95, 0.2), 18, 2.1, 1.0),
}
NIGHT, MORNING, BUSINESS = set(range(22, 24)) | set(range(0, 6)), {6, 7}, set(range(8, 18))


def archetype_template(name: str) -> np.ndarray:
    """Unit-energy 24-hour profile of an archetype."""
    (night, morning, business, evening), peak, height, width = _SHAPES[name]
    h = np.arange(24)
    base = np.where(
        np.isin(h, list(NIGHT)), night,
        np.where(np.isin(h, list(MORNING)), morning, np.where(np.isin(h, list(BUSINESS)), business, evening)),
    )
    bump = height * np.exp(-0.5 * ((h - peak) / width) ** 2)
    shape = base + bump
    return shape / shape.sum()


def tou_prices(T: int) -> np.ndarray:
    """Day-ahead price steps in $/kWh: off-peak 6, shoulder 9, peak 12 cents."""
    h = np.arange(T) % 24
    return np.where((h >= 17) & (h <= 21), 0.12, np.where((h >= 7) & (h <= 16), 0.09, 0.06))


@dataclass(frozen=True)
class GeneratorSpec:
    """Size and composition of a synthetic community.

    ``shares`` gives the fraction of prosumers per archetype in the order
    Residential, Commercial, Industrial, Public. Neighbors form a ring
    lattice of the given degree (capped at ``prosumers - 1``).
    """

    prosumers: int = 10
    shares: tuple = (0.4, 0.3, 0.2, 0.1)
    samples: int = 30
    horizon: int = 24
    degree: int = 4
    load_scale: float = 10.0
    rho: float = 0.03
    epsilon: float = 0.05
    cyclic_storage: bool = True

    def __post_init__(self):
        if self.prosumers < 1:
            raise ConfigError("prosumer count must be at least 1")
        if len(self.shares) != len(ARCHETYPE_NAMES) or any(s < 0 for s in self.shares):
            raise ConfigError("shares must be four nonnegative fractions")
        if abs(sum(self.shares) - 1.0) > 1e-9:
            raise ConfigError(f"shares must sum to 1 (got {sum(self.shares)})")
        if self.samples < 1 or self.horizon < 1:
            raise ConfigError("samples and horizon must be positive")
        if self.degree < 0 or self.load_scale <= 0:
            raise ConfigError("degree must be nonnegative and load_scale positive")


def archetype_counts(shares, N: int) -> list:
    """Largest-remainder rounding of ``shares * N``."""
    raw = np.asarray(shares, dtype=float) * N
    counts = np.floor(raw).astype(int)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: N - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def ring_neighbors(N: int, degree: int) -> list:
    half = min(degree, N - 1) // 2
    nbrs = [set() for _ in range(N)]
    for n in range(N):
        for step in range(1, half + 1):
            m = (n + step) % N
            if m != n:
                nbrs[n].add(m)
                nbrs[m].add(n)
    if degree >= N - 1:
        nbrs = [set(range(N)) - {n} for n in range(N)]
    return [sorted(s) for s in nbrs]


def _day_profiles(rng, name, energy, kwp, I, T):
    shape = archetype_template(name)
    h = np.arange(T) % 24
    base = energy * shape[h]
    day_level = rng.lognormal(0.0, 0.08, size=(I, 1))
    load = base * day_level * rng.lognormal(0.0, 0.1, size=(I, T))
    sun = np.clip(np.sin(np.pi * (h - 6) / 12), 0.0, None) ** 1.5
    cloud = rng.uniform(0.6, 1.0, size=(I, 1))
    pv = kwp * sun * cloud * rng.lognormal(0.0, 0.05, size=(I, T))
    return load, pv


def generate_synthetic_community(spec: GeneratorSpec = GeneratorSpec(), seed: int = 0):
    """Return ``(CommunityConfig, ScenarioSet)``, a pure function of its arguments."""
    rng = np.random.default_rng(seed)
    N, T, I = spec.prosumers, spec.horizon, spec.samples
    kinds = [name for name, c in zip(ARCHETYPE_NAMES, archetype_counts(spec.shares, N)) for _ in range(c)]
    kinds = [kinds[i] for i in rng.permutation(N)]
    ids = [f"p{n + 1:02d}" for n in range(N)]
    nbrs = ring_neighbors(N, spec.degree)
    h = np.arange(T) % 24

    prosumers, scenarios = [], {}
    for n, (pid, kind) in enumerate(zip(ids, kinds)):
        energy = ARCHETYPES[kind]["dtc"] * rng.uniform(0.8, 1.2) * spec.load_scale
        kwp = rng.uniform(0.3, 1.0) * energy / 7.0
        load, pv = _day_profiles(rng, kind, energy, kwp, I, T)
        scenarios[pid] = ProsumerScenarios.from_days(load, pv)

        p_bar, pb_bar, ps_bar = rng.uniform(40, 60), rng.uniform(10, 40), rng.uniform(10, 40)
        q_bar = rng.uniform(1, 3) * spec.load_scale
        shift = rng.uniform(0.2, 0.5) * energy / 24
        ps_ref = shift * np.select([np.isin(h, [18, 21]), np.isin(h, [19, 20])], [0.5, 1.0], 0.0)
        prosumers.append(
            ProsumerConfig(
                id=pid,
                neighbors=tuple(ids[m] for m in nbrs[n]),
                p_min=-p_bar, p_max=p_bar,
                q_min=-q_bar, q_max=q_bar,
                pe_min=-5.0, pe_max=5.0,
                pb_min=-pb_bar, pb_max=pb_bar,
                ps_max=ps_bar,
                E_min=-200.0, E_max=200.0,
                S_min=0.0, S_max=200.0,
                E_init=0.0, S_init=0.0,
                eta=rng.uniform(0.85, 0.95),
                gamma_b=rng.uniform(0.005, 0.02),
                gamma_s=rng.uniform(0.001, 0.005),
                ps_ref=ps_ref,
                E_final=0.0 if spec.cyclic_storage else None,
                S_final=0.0 if spec.cyclic_storage else None,
                archetype=kind,
            )
        )

    c_p = tou_prices(T)
    c_q = np.minimum(c_p * rng.uniform(1.3, 1.8, size=T), 0.25)
    c_nm = {}
    for n in range(N):
        for m in nbrs[n]:
            if m < n:
                continue
            # each undirected pair gets a cheap and a dear direction
            lo, hi = rng.uniform(0.85, 0.95), rng.uniform(1.05, 1.15)
            if rng.random() < 0.5:
                lo, hi = hi, lo
            c_nm[(ids[n], ids[m])] = np.clip(lo * c_p, 0.04, 0.16)
            c_nm[(ids[m], ids[n])] = np.clip(hi * c_p, 0.04, 0.16)

    config = CommunityConfig(
        prosumers=tuple(prosumers),
        prices=PriceSchedule(c_p, c_q, c_nm),
        horizon=T,
        dt=1.0,
        admm=AdmmConfig(),
        risk=RiskSpec(spec.epsilon),
        ambiguity=AmbiguitySpec(spec.rho),
    )
    days = tuple(f"d{i:03d}" for i in range(I))
    return config, ScenarioSet(scenarios, days)


BUNDLED_SEED = 7


def bundled_community():
    """The reference 10-prosumer, 24-hour, 30-sample community (seed 7)."""
    return generate_synthetic_community(GeneratorSpec(), BUNDLED_SEED)
