"""Synthetic point-in-time ESG world.

Generates correlated price/event/macro streams, assembles the structured
per-asset evidence context (micro event memory, sector peers, macro regime,
anchor confirmation, portfolio context, signed weight change) and computes
deterministic weak-supervision targets from it.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError
from .market_env import N_ASSETS, N_SECTORS, PortfolioState, PriceSeries

DAY_CAP = 365          # sentinel for "no such event yet"
SEVERE_THRESHOLD = 0.7

# feature vector layout: name -> (index, group)
FEATURE_LAYOUT = [
    ("last_event_severity", "micro"),
    ("days_since_severe", "micro"),
    ("repeat_flag", "micro"),
    ("unresolved_fraction", "firm_memory"),
    ("event_count_90d", "firm_memory"),
    ("mean_severity_90d", "firm_memory"),
    ("peer_mean_pressure", "meso"),
    ("peer_highsev_rate_30d", "meso"),
    ("vol_regime", "macro"),
    ("stress_flag", "macro"),
    ("anchored_frac_90d", "anchor"),
    ("days_since_anchored", "anchor"),
    ("last_severe_anchored", "anchor"),
    ("weight", "portfolio"),
    ("sector_exposure", "portfolio"),
    ("cash_weight", "portfolio"),
    ("delta_w", "action"),
]
FEATURE_NAMES = [n for n, _ in FEATURE_LAYOUT]
N_FEATURES = len(FEATURE_LAYOUT)
N_STATIC = 13  # evidence features independent of portfolio/action

FEATURE_GROUPS: dict[str, list[int]] = {}
for _i, (_n, _g) in enumerate(FEATURE_LAYOUT):
    FEATURE_GROUPS.setdefault(_g, []).append(_i)
FEATURE_GROUPS["all_dynamic"] = (
    FEATURE_GROUPS["micro"] + FEATURE_GROUPS["firm_memory"]
    + FEATURE_GROUPS["meso"] + FEATURE_GROUPS["macro"] + FEATURE_GROUPS["anchor"])


@dataclass
class EventRecord:
    asset: int
    date: int
    severity: float
    pillar: str              # "E" | "S" | "G"
    anchored: bool
    resolved: bool           # whether the event ever resolves
    persistence_days: int

    def __post_init__(self):
        if not (0.0 <= self.severity <= 1.0):
            raise StructuralError("severity outside [0,1]")
        if not (0 <= self.persistence_days <= DAY_CAP):
            raise StructuralError("persistence outside [0,365]")


@dataclass(frozen=True)
class WorldConfig:
    n_assets: int = N_ASSETS
    days: int = 1000
    event_rate: float = 0.02       # events per asset per day
    anchor_prob: float = 0.6
    seed: int = 0
    severe_drift: float = -0.003   # per-day return drift while a severe event persists
    base_drift: float = 0.0003
    market_vol: float = 0.008
    sector_vol: float = 0.004
    idio_vol: float = 0.010

    def validate(self):
        if self.days < 60:
            raise StructuralError("need at least 60 days")
        for r in (self.event_rate, self.anchor_prob):
            if not (0.0 <= r < 1.0):
                raise StructuralError("rates must lie in [0,1)")


@dataclass
class World:
    config: WorldConfig
    prices: PriceSeries
    events: list[EventRecord]
    vol_regime: np.ndarray   # (days,) in {0,1,2}
    stress: np.ndarray       # (days,) in {0,1}
    _static_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_days(self) -> int:
        return self.prices.n_days

    def events_of(self, asset: int) -> list[EventRecord]:
        return [e for e in self.events if e.asset == asset]


def generate_world(config: WorldConfig) -> World:
    config.validate()
    rng = np.random.default_rng(config.seed)
    days, n = config.days, config.n_assets
    if n != N_ASSETS:
        raise StructuralError(f"world must have {N_ASSETS} assets")
    sector_of = np.repeat(np.arange(N_SECTORS), n // N_SECTORS)

    # macro regimes: independent sticky Markov chains
    stress = np.zeros(days, dtype=np.int64)
    vol_regime = np.zeros(days, dtype=np.int64)
    vol_trans = np.array([[0.96, 0.04, 0.00],
                          [0.05, 0.90, 0.05],
                          [0.00, 0.08, 0.92]])
    for t in range(1, days):
        if stress[t - 1] == 0:
            stress[t] = 1 if rng.random() < 0.03 else 0
        else:
            stress[t] = 0 if rng.random() < 0.12 else 1
        vol_regime[t] = rng.choice(3, p=vol_trans[vol_regime[t - 1]])

    # event stream (Bernoulli thinning of a per-asset-day Poisson process)
    events: list[EventRecord] = []
    occur = rng.random((days, n)) < config.event_rate
    for t in range(days):
        for i in range(n):
            if not occur[t, i]:
                continue
            sev = float(np.clip(rng.beta(2.0, 2.0) + 0.1 * stress[t], 0.0, 1.0))
            events.append(EventRecord(
                asset=i, date=t, severity=sev,
                pillar=str(rng.choice(["E", "S", "G"])),
                anchored=bool(rng.random() < config.anchor_prob),
                resolved=bool(rng.random() < 0.8),
                persistence_days=int(min(rng.geometric(0.1), DAY_CAP)),
            ))

    # returns: market + sector + idiosyncratic + severe-event drag
    vol_scale = np.array([1.0, 1.5, 2.2])[vol_regime]
    market = config.base_drift + config.market_vol * vol_scale * rng.standard_normal(days)
    sector_shock = config.sector_vol * rng.standard_normal((days, N_SECTORS))
    idio = config.idio_vol * rng.standard_normal((days, n))
    rets = market[:, None] + sector_shock[:, sector_of] + idio
    for e in events:
        if e.severity > SEVERE_THRESHOLD:
            lo = e.date + 1
            hi = min(days, lo + e.persistence_days)
            rets[lo:hi, e.asset] += config.severe_drift
    rets = np.maximum(rets, -0.5)

    prices = PriceSeries(dates=np.arange(days), simple_returns=rets,
                         sector_of=sector_of)
    return World(config=config, prices=prices, events=events,
                 vol_regime=vol_regime, stress=stress)


# ---------------------------------------------------------------------------
# Point-in-time features
# ---------------------------------------------------------------------------

def _asset_day_features(evts: list[EventRecord], date: int) -> np.ndarray:
    """Micro / firm-memory / anchor features from the visible event prefix."""
    visible = [e for e in evts if e.date <= date]
    out = np.zeros(9)
    out[1] = DAY_CAP   # days_since_severe
    out[7] = DAY_CAP   # days_since_anchored
    if not visible:
        return out
    last = max(visible, key=lambda e: e.date)
    out[0] = last.severity
    severe = [e for e in visible if e.severity > SEVERE_THRESHOLD]
    if severe:
        last_sev = max(severe, key=lambda e: e.date)
        out[1] = min(date - last_sev.date, DAY_CAP)
        out[8] = 1.0 if last_sev.anchored else 0.0
    window = [e for e in visible if e.date > date - 90]
    severe_90 = [e for e in window if e.severity > SEVERE_THRESHOLD]
    out[2] = 1.0 if len(severe_90) >= 2 else 0.0
    unresolved = [e for e in visible
                  if (not e.resolved) or date < e.date + e.persistence_days]
    out[3] = min(1.0, len(unresolved) / 3.0)
    out[4] = float(len(window))
    out[5] = float(np.mean([e.severity for e in window])) if window else 0.0
    anchored = [e for e in window if e.anchored]
    out[6] = len(anchored) / len(window) if window else 0.0
    anchored_all = [e for e in visible if e.anchored]
    if anchored_all:
        out[7] = min(date - max(e.date for e in anchored_all), DAY_CAP)
    return out


def _pressure(f: np.ndarray) -> float:
    # f is an _asset_day_features vector; hold-style evidence pressure
    return float(np.clip(0.5 * f[3] + 0.5 * f[5], 0.0, 1.0))


def _severe_within(evts: list[EventRecord], date: int, window: int) -> bool:
    return any(e.severity > SEVERE_THRESHOLD and date - window < e.date <= date
               for e in evts)


def static_features(world: World) -> np.ndarray:
    """(days, assets, N_STATIC) evidence slab, cached per event-list length."""
    key = len(world.events)
    if key in world._static_cache:
        return world._static_cache[key]
    days, n = world.n_days, world.config.n_assets
    by_asset = [[] for _ in range(n)]
    for e in world.events:
        by_asset[e.asset].append(e)
    slab = np.zeros((days, n, N_STATIC))
    sector_of = world.prices.sector_of
    own = np.zeros((days, n, 9))
    for i in range(n):
        for t in range(days):
            own[t, i] = _asset_day_features(by_asset[i], t)
    for t in range(days):
        pressures = np.array([_pressure(own[t, j]) for j in range(n)])
        sev30 = np.array([_severe_within(by_asset[j], t, 30) for j in range(n)],
                         dtype=float)
        for i in range(n):
            peers = (sector_of == sector_of[i]) & (np.arange(n) != i)
            f = own[t, i]
            slab[t, i] = [
                f[0], f[1], f[2],            # micro
                f[3], f[4], f[5],            # firm memory
                float(pressures[peers].mean()), float(sev30[peers].mean()),
                float(world.vol_regime[t]), float(world.stress[t]),
                f[6], f[7], f[8],            # anchor
            ]
    world._static_cache[key] = slab
    return slab


@dataclass
class EvidenceContext:
    micro: np.ndarray       # (3,)
    firm_memory: np.ndarray  # (3,)
    meso: np.ndarray        # (2,)
    macro: np.ndarray       # (2,)
    anchor: np.ndarray      # (3,)
    portfolio: np.ndarray   # (3,) weight, sector exposure, cash
    delta_w: float

    def vector(self) -> np.ndarray:
        return np.concatenate([self.micro, self.firm_memory, self.meso,
                               self.macro, self.anchor, self.portfolio,
                               [self.delta_w]])

    @staticmethod
    def from_vector(v: np.ndarray) -> "EvidenceContext":
        v = np.asarray(v, dtype=np.float64)
        return EvidenceContext(v[0:3], v[3:6], v[6:8], v[8:10], v[10:13],
                               v[13:16], float(v[16]))


def build_context(world: World, asset: int, date: int,
                  portfolio: PortfolioState, delta_w: float) -> EvidenceContext:
    if not (0 <= asset < world.config.n_assets):
        raise StructuralError(f"unknown asset {asset}")
    if not (0 <= date < world.n_days):
        raise StructuralError(f"date {date} outside world range")
    by_asset = world.events_of(asset)
    f = _asset_day_features(by_asset, date)
    sector_of = world.prices.sector_of
    n = world.config.n_assets
    peers = np.flatnonzero((sector_of == sector_of[asset])
                           & (np.arange(n) != asset))
    peer_f = [_asset_day_features(world.events_of(int(j)), date) for j in peers]
    peer_mean_pressure = float(np.mean([_pressure(pf) for pf in peer_f]))
    peer_sev30 = float(np.mean([
        _severe_within(world.events_of(int(j)), date, 30) for j in peers]))
    sector_exp = float(portfolio.w[sector_of == sector_of[asset]].sum())
    return EvidenceContext(
        micro=f[0:3].copy(),
        firm_memory=f[3:6].copy(),
        meso=np.array([peer_mean_pressure, peer_sev30]),
        macro=np.array([float(world.vol_regime[date]), float(world.stress[date])]),
        anchor=f[6:9].copy(),
        portfolio=np.array([float(portfolio.w[asset]), sector_exp,
                            float(portfolio.w_cash)]),
        delta_w=float(delta_w),
    )


# ---------------------------------------------------------------------------
# Weak supervision
# ---------------------------------------------------------------------------

@dataclass
class WeakLabels:
    y_add: float
    y_hold: float
    y_spill: float
    u_add: float
    u_hold: float
    u_spill: float

    def targets(self) -> np.ndarray:
        return np.array([self.y_add, self.y_hold, self.y_spill])

    def uncertainties(self) -> np.ndarray:
        return np.array([self.u_add, self.u_hold, self.u_spill])


def buy_gate(delta_w: float) -> float:
    return min(1.0, max(0.0, delta_w) / 0.05)


def weak_labels(ctx: EvidenceContext) -> WeakLabels:
    s_last, d_sev, repeat_flag = ctx.micro
    unresolved_frac, count_90d, mean_sev_90d = ctx.firm_memory
    peer_pressure, peer_sev30 = ctx.meso
    _, stress_flag = ctx.macro
    anchored_frac, _, last_severe_anchored = ctx.anchor

    # recency factors vanish at the no-severe-event sentinel
    rec30 = np.exp(-d_sev / 30.0) if d_sev < DAY_CAP else 0.0
    rec60 = np.exp(-d_sev / 60.0) if d_sev < DAY_CAP else 0.0

    gate = buy_gate(ctx.delta_w)
    y_add = np.clip(
        gate * (s_last * rec30 * (1.0 + 0.5 * last_severe_anchored)
                + 0.1 * repeat_flag), 0.0, 1.0)
    y_hold = np.clip(0.5 * unresolved_frac + 0.3 * mean_sev_90d + 0.2 * rec60,
                     0.0, 1.0)
    y_spill = np.clip(0.6 * peer_pressure + 0.3 * peer_sev30
                      + 0.1 * stress_flag, 0.0, 1.0)
    coverage = min(1.0, count_90d / 5.0)
    u = float(np.clip(0.7 * (1.0 - coverage) + 0.3 * (1.0 - anchored_frac),
                      0.05, 1.0))
    return WeakLabels(float(y_add), float(y_hold), float(y_spill), u, u, u)


def weak_labels_from_vector(v: np.ndarray) -> WeakLabels:
    return weak_labels(EvidenceContext.from_vector(v))


# ---------------------------------------------------------------------------
# CSV export / import
# ---------------------------------------------------------------------------

def save_world(world: World, events_path: str, macro_path: str):
    with open(events_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["asset", "date", "severity", "pillar", "anchored",
                    "resolved", "persistence_days"])
        for e in world.events:
            w.writerow([e.asset, e.date, repr(e.severity), e.pillar,
                        int(e.anchored), int(e.resolved), e.persistence_days])
    with open(macro_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "vol_regime", "stress"])
        for t in range(world.n_days):
            w.writerow([t, int(world.vol_regime[t]), int(world.stress[t])])


def load_world(config: WorldConfig, prices: PriceSeries,
               events_path: str, macro_path: str) -> World:
    events = []
    with open(events_path) as fh:
        for row in list(csv.reader(fh))[1:]:
            events.append(EventRecord(
                asset=int(row[0]), date=int(row[1]), severity=float(row[2]),
                pillar=row[3], anchored=bool(int(row[4])),
                resolved=bool(int(row[5])), persistence_days=int(row[6])))
    with open(macro_path) as fh:
        rows = list(csv.reader(fh))[1:]
    vol = np.array([int(r[1]) for r in rows])
    stress = np.array([int(r[2]) for r in rows])
    return World(config=config, prices=prices, events=events,
                 vol_regime=vol, stress=stress)
