"""Static community data: prosumer limits, prices, and solver settings.

The community file is JSON with top-level keys ``horizon``, ``dt``,
``prices``, ``prosumers``, ``admm``, ``risk`` and ``ambiguity`` (see the
README for the full schema). Every loader validates the invariants and
raises :class:`ConfigError` naming the offending prosumer and field.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

RECOURSE_STRUCTURES = ("diagonal", "lower", "full")


class ConfigError(ValueError):
    """Raised when a configuration violates a documented invariant."""


def _frozen_array(values, length: Optional[int] = None, what: str = "") -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim == 0:
        if length is None:
            raise ConfigError(f"{what}: expected a vector")
        arr = np.full(length, float(arr))
    if length is not None and arr.shape != (length,):
        raise ConfigError(f"{what}: expected length {length}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what}: non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ProsumerConfig:
    """Limits and cost coefficients of one prosumer (kW, kWh, $)."""

    id: str
    neighbors: tuple = ()
    p_min: float = -50.0
    p_max: float = 50.0
    q_min: float = -5.0
    q_max: float = 5.0
    pe_min: float = -5.0
    pe_max: float = 5.0
    pb_min: float = -20.0
    pb_max: float = 20.0
    ps_max: float = 20.0
    E_min: float = -200.0
    E_max: float = 200.0
    S_min: float = 0.0
    S_max: float = 200.0
    E_init: float = 0.0
    S_init: float = 0.0
    eta: float = 0.9
    gamma_b: float = 0.01
    gamma_s: float = 0.002
    ps_ref: np.ndarray = field(default_factory=lambda: np.zeros(24))
    E_final: Optional[float] = None
    S_final: Optional[float] = None
    archetype: str = ""  # informational only, set by the synthetic generator

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "neighbors", tuple(str(m) for m in self.neighbors))
        object.__setattr__(self, "ps_ref", _frozen_array(self.ps_ref, what=f"{self.id}.ps_ref"))
        self.validate()

    def _fail(self, msg: str):
        raise ConfigError(f"prosumer {self.id!r}: {msg}")

    def validate(self) -> None:
        for lo, hi in (("p_min", "p_max"), ("q_min", "q_max"), ("pe_min", "pe_max"),
                       ("pb_min", "pb_max"), ("E_min", "E_max"), ("S_min", "S_max")):
            if getattr(self, lo) > getattr(self, hi):
                self._fail(f"{lo} > {hi} ({getattr(self, lo)} > {getattr(self, hi)})")
        if self.ps_max < 0:
            self._fail("ps_max must be nonnegative")
        if not self.gamma_b > 0:
            self._fail(f"gamma_b must be positive (got {self.gamma_b})")
        if not self.gamma_s > 0:
            self._fail(f"gamma_s must be positive (got {self.gamma_s})")
        if not 0 < self.eta <= 1:
            self._fail(f"eta must lie in (0, 1] (got {self.eta})")
        if not self.E_min <= self.E_init <= self.E_max:
            self._fail("E_init outside [E_min, E_max]")
        if not self.S_min <= self.S_init <= self.S_max:
            self._fail("S_init outside [S_min, S_max]")
        for name, lo, hi in (("E_final", self.E_min, self.E_max), ("S_final", self.S_min, self.S_max)):
            val = getattr(self, name)
            if val is not None and not lo <= val <= hi:
                self._fail(f"{name} outside its bounds")
        if np.any(self.ps_ref < 0) or np.any(self.ps_ref > self.ps_max):
            self._fail("ps_ref must lie within [0, ps_max]")
        if self.id in self.neighbors:
            self._fail("a prosumer cannot neighbor itself")
        if len(set(self.neighbors)) != len(self.neighbors):
            self._fail("duplicate neighbors")


@dataclass(frozen=True, eq=False)
class PriceSchedule:
    """Day-ahead (c_p), real-time (c_q) and directed P2P (c_nm) prices in $/kWh."""

    c_p: np.ndarray
    c_q: np.ndarray
    c_nm: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "c_p", _frozen_array(self.c_p, what="c_p"))
        T = len(self.c_p)
        object.__setattr__(self, "c_q", _frozen_array(self.c_q, T, what="c_q"))
        pairs = {}
        for (n, m), price in self.c_nm.items():
            pairs[(str(n), str(m))] = _frozen_array(price, T, what=f"c_nm[{n}->{m}]")
        object.__setattr__(self, "c_nm", pairs)
        for name, arr in (("c_p", self.c_p), ("c_q", self.c_q), *((f"c_nm{k}", v) for k, v in pairs.items())):
            if np.any(arr <= 0):
                raise ConfigError(f"prices must be positive: {name}")

    @property
    def horizon(self) -> int:
        return len(self.c_p)

    def p2p(self, n: str, m: str) -> np.ndarray:
        try:
            return self.c_nm[(n, m)]
        except KeyError:
            raise ConfigError(f"no P2P price for directed pair {n}->{m}") from None


@dataclass(frozen=True)
class AdmmConfig:
    sigma: float = 0.1
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    max_iter: int = 500
    parallel: bool = False
    # tolerances are multiplied by the number of directed edges
    scale_tol_by_edges: bool = True

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError("admm.sigma must be positive")
        if not (self.tol_primal > 0 and self.tol_dual > 0):
            raise ConfigError("admm tolerances must be positive")
        if self.max_iter < 1:
            raise ConfigError("admm.max_iter must be at least 1")


@dataclass(frozen=True, eq=False)
class RiskSpec:
    """Joint violation tolerance and the weights of its per-prosumer split."""

    epsilon: float = 0.05
    weights: Optional[tuple] = None

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ConfigError(f"risk.epsilon must lie in (0, 1) (got {self.epsilon})")
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
            if any(not w > 0 for w in self.weights):
                raise ConfigError("risk.weights must be positive")


@dataclass(frozen=True, eq=False)
class AmbiguitySpec:
    """Wasserstein ball of radius ``rho`` (1-norm ground metric) on support {C xi <= d}.

    Rows of C that are identically zero with d >= 0 constrain nothing and are
    dropped, so ``C = 0, d = 0`` means unbounded support.
    """

    rho: float = 0.0
    C: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.rho >= 0:
            raise ConfigError(f"ambiguity.rho must be nonnegative (got {self.rho})")
        if self.C is None:
            C, d = np.zeros((0, 0)), np.zeros(0)
        else:
            C = np.atleast_2d(np.array(self.C, dtype=float))
            d = np.array(self.d if self.d is not None else np.zeros(C.shape[0]), dtype=float).ravel()
            if C.shape[0] != len(d):
                raise ConfigError("ambiguity: C row count must equal len(d)")
            vacuous = ~np.any(C != 0, axis=1)
            if np.any(vacuous & (d < 0)):
                raise ConfigError("ambiguity: support is empty (0 <= d violated)")
            C, d = C[~vacuous], d[~vacuous]
        C.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "d", d)

    @property
    def bounded(self) -> bool:
        return self.C.shape[0] > 0

    def with_rho(self, rho: float) -> "AmbiguitySpec":
        return AmbiguitySpec(rho, self.C if self.bounded else None, self.d if self.bounded else None)


@dataclass(frozen=True, eq=False)
class CommunityConfig:
    prosumers: tuple
    prices: PriceSchedule
    horizon: int = 24
    dt: float = 1.0
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    risk: RiskSpec = field(default_factory=RiskSpec)
    ambiguity: AmbiguitySpec = field(default_factory=AmbiguitySpec)
    recourse: str = "diagonal"

    def __post_init__(self):
        object.__setattr__(self, "prosumers", tuple(self.prosumers))
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.prosumers:
            raise ConfigError("community needs at least one prosumer")
        if self.recourse not in RECOURSE_STRUCTURES:
            raise ConfigError(f"recourse must be one of {RECOURSE_STRUCTURES}")
        if self.prices.horizon != self.horizon:
            raise ConfigError("price vectors must have length horizon")
        ids = [p.id for p in self.prosumers]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate prosumer ids")
        known = set(ids)
        for pc in self.prosumers:
            if len(pc.ps_ref) != self.horizon:
                raise ConfigError(f"prosumer {pc.id!r}: ps_ref must have length horizon")
            for m in pc.neighbors:
                if m not in known:
                    raise ConfigError(f"prosumer {pc.id!r}: unknown neighbor {m!r}")
                if pc.id not in self[m].neighbors:
                    raise ConfigError(f"prosumer {pc.id!r}: neighbor relation with {m!r} is not symmetric")
                self.prices.p2p(pc.id, m)
        if self.risk.weights is not None and len(self.risk.weights) != len(ids):
            raise ConfigError("risk.weights must have one entry per prosumer")

    def __getitem__(self, pid: str) -> ProsumerConfig:
        for pc in self.prosumers:
            if pc.id == pid:
                return pc
        raise KeyError(pid)

    @property
    def ids(self) -> list:
        return [p.id for p in self.prosumers]

    def edges(self) -> list:
        """Directed neighbor pairs (n, m) in prosumer order."""
        return [(pc.id, m) for pc in self.prosumers for m in pc.neighbors]

    def isolated(self) -> "CommunityConfig":
        """Same community with every neighbor relation removed (no trading)."""
        loners = tuple(replace(pc, neighbors=()) for pc in self.prosumers)
        return replace(self, prosumers=loners)


# ---------------------------------------------------------------- JSON I/O

def _prosumer_from_dict(raw: dict, horizon: int) -> ProsumerConfig:
    known = {f.name for f in fields(ProsumerConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"prosumer {raw.get('id')!r}: unknown keys {sorted(unknown)}")
    if "id" not in raw:
        raise ConfigError("prosumer entry without id")
    data = dict(raw)
    data.setdefault("ps_ref", np.zeros(horizon))
    try:
        return ProsumerConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"prosumer {raw.get('id')!r}: {exc}") from None


def community_from_dict(raw: dict) -> CommunityConfig:
    try:
        horizon = int(raw.get("horizon", 24))
        dt = float(raw.get("dt", 1.0))
        pr = raw["prices"]
        c_nm = {}
        for entry in pr.get("p2p", []):
            c_nm[(entry["from"], entry["to"])] = entry["price"]
        default = pr.get("p2p_default")
        prosumer_raw = raw["prosumers"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed community document: missing {exc}") from None
    prosumers = [_prosumer_from_dict(p, horizon) for p in prosumer_raw]
    if default is not None:
        for pc in prosumers:
            for m in pc.neighbors:
                c_nm.setdefault((pc.id, m), default)
    prices = PriceSchedule(pr["c_p"], pr["c_q"], c_nm)
    admm = AdmmConfig(**raw.get("admm", {}))
    risk_raw = dict(raw.get("risk", {}))
    risk = RiskSpec(**risk_raw)
    amb_raw = dict(raw.get("ambiguity", {}))
    ambiguity = AmbiguitySpec(**amb_raw)
    return CommunityConfig(
        prosumers=prosumers,
        prices=prices,
        horizon=horizon,
        dt=dt,
        admm=admm,
        risk=risk,
        ambiguity=ambiguity,
        recourse=raw.get("recourse", "diagonal"),
    )


def load_community_config(path) -> CommunityConfig:
    """Parse and validate a community JSON file."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return community_from_dict(raw)


def _num(x):
    return float(f"{x:.12g}")


def _vec(a):
    return [_num(v) for v in np.asarray(a).ravel()]


def community_to_dict(cfg: CommunityConfig) -> dict:
    prosumers = []
    for pc in cfg.prosumers:
        d = {}
        for f in fields(ProsumerConfig):
            v = getattr(pc, f.name)
            if f.name == "ps_ref":
                v = _vec(v)
            elif f.name == "neighbors":
                v = list(v)
            elif isinstance(v, float):
                v = _num(v)
            d[f.name] = v
        prosumers.append(d)
    amb = {"rho": _num(cfg.ambiguity.rho)}
    if cfg.ambiguity.bounded:
        amb["C"] = [_vec(row) for row in cfg.ambiguity.C]
        amb["d"] = _vec(cfg.ambiguity.d)
    risk = {"epsilon": _num(cfg.risk.epsilon)}
    if cfg.risk.weights is not None:
        risk["weights"] = list(cfg.risk.weights)
    return {
        "horizon": cfg.horizon,
        "dt": _num(cfg.dt),
        "recourse": cfg.recourse,
        "prices": {
            "c_p": _vec(cfg.prices.c_p),
            "c_q": _vec(cfg.prices.c_q),
            "p2p": [
                {"from": n, "to": m, "price": _vec(v)} for (n, m), v in sorted(cfg.prices.c_nm.items())
            ],
        },
        "prosumers": prosumers,
        "admm": asdict(cfg.admm),
        "risk": risk,
        "ambiguity": amb,
    }


def save_community_config(cfg: CommunityConfig, path) -> None:
    Path(path).write_text(json.dumps(community_to_dict(cfg), indent=2) + "\n")
