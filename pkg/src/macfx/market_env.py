"""Daily long-only portfolio environment.

Action conversion enforces the invested-fraction band, single-name and sector
caps, and a no-trade deadband; the reward is log portfolio return minus
turnover cost and a thresholded drawdown penalty.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, NumericError, StructuralError

N_ASSETS = 30
N_SECTORS = 6

CAP_TOL = 1e-9


@dataclass(frozen=True)
class EnvConfig:
    c_tx: float = 0.0005
    lambda_dd: float = 0.02
    d0: float = 0.05
    alpha_min: float = 0.85
    alpha_max: float = 1.0
    name_cap: float = 0.15
    sector_cap: float = 0.35
    deadband: float = 0.002


@dataclass
class PriceSeries:
    dates: np.ndarray            # (T,) int day indices
    simple_returns: np.ndarray   # (T, N) simple daily returns
    sector_of: np.ndarray        # (N,) sector index

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype=np.int64)
        self.simple_returns = np.asarray(self.simple_returns, dtype=np.float64)
        self.sector_of = np.asarray(self.sector_of, dtype=np.int64)
        t, n = self.simple_returns.shape
        if n != N_ASSETS:
            raise StructuralError(f"expected {N_ASSETS} assets, got {n}")
        if self.dates.shape != (t,):
            raise StructuralError("dates/returns length mismatch")
        counts = np.bincount(self.sector_of, minlength=N_SECTORS)
        if len(counts) != N_SECTORS or not np.all(counts == N_ASSETS // N_SECTORS):
            raise StructuralError("sector map must have 6 sectors of 5 assets")
        if np.any(self.simple_returns <= -1.0):
            raise StructuralError("returns must be > -1")

    @property
    def n_days(self) -> int:
        return len(self.dates)


@dataclass
class PortfolioState:
    w: np.ndarray
    w_cash: float
    nav: float = 1.0
    peak_nav: float = 1.0
    dd: float = 0.0
    t: int = 0

    def validate(self, cfg: EnvConfig, sector_of: np.ndarray):
        total = float(self.w.sum()) + self.w_cash
        if abs(total - 1.0) > 1e-9:
            raise ContractError(f"weights sum to {total}, not 1")
        if self.w_cash < -CAP_TOL or self.w_cash > (1 - cfg.alpha_min) + CAP_TOL:
            raise ContractError(f"cash weight {self.w_cash} outside band")
        if np.any(self.w > cfg.name_cap + CAP_TOL) or np.any(self.w < -CAP_TOL):
            raise ContractError("single-name cap violated")
        for s in range(N_SECTORS):
            if self.w[sector_of == s].sum() > cfg.sector_cap + CAP_TOL:
                raise ContractError(f"sector {s} cap violated")
        if self.dd > CAP_TOL or self.peak_nav < self.nav - CAP_TOL:
            raise ContractError("drawdown bookkeeping inconsistent")


def initial_state(cfg: EnvConfig = EnvConfig()) -> PortfolioState:
    w = np.full(N_ASSETS, cfg.alpha_min / N_ASSETS)
    return PortfolioState(w=w, w_cash=1.0 - float(w.sum()))


@dataclass
class StepResult:
    reward: float
    r_port: float
    turnover: float
    dd: float
    next_state: PortfolioState


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def _distribute(p: np.ndarray, amount: float, eligible: np.ndarray,
                cfg: EnvConfig, sector_of: np.ndarray) -> tuple[np.ndarray, float]:
    """Add `amount` to eligible names pro-rata, respecting name and sector caps.

    Returns (new weights, undistributed remainder).
    """
    p = p.copy()
    for _ in range(100):
        if amount <= 1e-15:
            break
        room = np.where(eligible, cfg.name_cap - p, 0.0)
        room = np.maximum(room, 0.0)
        # also bound per-name room by its sector's remaining room
        for s in range(N_SECTORS):
            mask = sector_of == s
            sector_room = max(cfg.sector_cap - p[mask].sum(), 0.0)
            room[mask] = np.minimum(room[mask], sector_room)
        if room.sum() <= 1e-15:
            break
        share = room  # room-proportional shares converge in a few rounds
        add = np.minimum(amount * share / share.sum(), room)
        # keep each sector's collective addition within its remaining room
        for s in range(N_SECTORS):
            mask = sector_of == s
            sector_room = max(cfg.sector_cap - p[mask].sum(), 0.0)
            tot = add[mask].sum()
            if tot > sector_room:
                add[mask] *= 0.0 if tot <= 1e-15 else sector_room / tot
        if add.sum() <= 1e-15:
            break
        p += add
        amount -= add.sum()
    return p, max(amount, 0.0)


def _apply_caps(p: np.ndarray, alpha: float, cfg: EnvConfig,
                sector_of: np.ndarray) -> np.ndarray:
    """Clip-and-renormalize toward sum(p)=alpha under name and sector caps.

    Excess from capped names is redistributed pro-rata to uncapped names; if
    no capacity remains, the residual stays in cash (callers keep the alpha
    band by construction since caps sum to 4.5 > 1).
    """
    p = np.minimum(p.copy(), cfg.name_cap)
    for s in range(N_SECTORS):
        mask = sector_of == s
        tot = p[mask].sum()
        if tot > cfg.sector_cap:
            p[mask] *= cfg.sector_cap / tot
    deficit = alpha - p.sum()
    if deficit > 1e-12:
        p, _ = _distribute(p, deficit, np.ones(N_ASSETS, dtype=bool), cfg,
                           sector_of)
    return p


def convert_action(raw: np.ndarray, prev: PortfolioState,
                   cfg: EnvConfig = EnvConfig(),
                   sector_of: np.ndarray | None = None):
    """Map a raw policy action to feasible target weights.

    Returns (target_weights, invested_fraction, delta_w).
    """
    target, invested, delta, _ = convert_action_verbose(raw, prev, cfg, sector_of)
    return target, invested, delta


def convert_action_verbose(raw: np.ndarray, prev: PortfolioState,
                           cfg: EnvConfig = EnvConfig(),
                           sector_of: np.ndarray | None = None):
    """convert_action plus the no-trade mask applied by the deadband."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (N_ASSETS + 1,):
        raise StructuralError(f"raw action must have length {N_ASSETS + 1}")
    if not np.all(np.isfinite(raw)):
        raise StructuralError("non-finite raw action")
    if sector_of is None:
        sector_of = np.repeat(np.arange(N_SECTORS), N_ASSETS // N_SECTORS)

    alpha = cfg.alpha_min + (cfg.alpha_max - cfg.alpha_min) / (1.0 + np.exp(-raw[-1]))
    target = _softmax(raw[:-1]) * alpha
    target = _apply_caps(target, alpha, cfg, sector_of)

    # deadband: sub-threshold changes are no trades
    delta = target - prev.w
    small = np.abs(delta) < cfg.deadband
    target = np.where(small, prev.w, target)

    # restoring previous weights can re-breach a sector cap; shave traded
    # names in the offending sector (untraded names must stay untouched)
    for s in range(N_SECTORS):
        mask = sector_of == s
        over = target[mask].sum() - cfg.sector_cap
        if over > 0:
            tmask = mask & ~small
            pool = target[tmask].sum()
            if pool > 1e-15:
                target[tmask] -= over * target[tmask] / pool

    # renormalize: residual to cash when inside the band, else pro-rata on
    # traded names (respecting caps)
    cash = 1.0 - target.sum()
    cash_max = 1.0 - cfg.alpha_min
    if cash > cash_max or cash < 0.0:
        excess = cash - np.clip(cash, 0.0, cash_max)
        traded = ~small
        if np.any(traded):
            if excess > 0:
                # push excess cash into traded names up to their caps
                target, _ = _distribute(target, excess, traded, cfg, sector_of)
            else:
                # scale traded names down to absorb negative cash
                need = -excess
                pool = target[traded].sum()
                if pool > 1e-15:
                    target[traded] -= need * target[traded] / pool
    delta = target - prev.w
    return target, float(target.sum()), delta, small


class MarketEnv:
    """Value-object environment over a PriceSeries window."""

    def __init__(self, prices: PriceSeries, cfg: EnvConfig = EnvConfig()):
        self.prices = prices
        self.cfg = cfg

    def convert(self, raw: np.ndarray, prev: PortfolioState):
        return convert_action(raw, prev, self.cfg, self.prices.sector_of)

    def step(self, state: PortfolioState, target: np.ndarray,
             day_returns: np.ndarray) -> StepResult:
        return step(state, target, day_returns, self.cfg, self.prices.sector_of)


def step(state: PortfolioState, target: np.ndarray, day_returns: np.ndarray,
         cfg: EnvConfig = EnvConfig(),
         sector_of: np.ndarray | None = None) -> StepResult:
    target = np.asarray(target, dtype=np.float64)
    day_returns = np.asarray(day_returns, dtype=np.float64)
    if sector_of is None:
        sector_of = np.repeat(np.arange(N_SECTORS), N_ASSETS // N_SECTORS)
    if np.any(target > cfg.name_cap + 1e-6) or np.any(target < -1e-6):
        raise ContractError("target violates single-name cap")
    for s in range(N_SECTORS):
        if target[sector_of == s].sum() > cfg.sector_cap + 1e-6:
            raise ContractError(f"target violates sector {s} cap")

    delta = target - state.w
    turnover = float(np.abs(delta).sum())
    r_port = float(target @ day_returns)  # cash earns zero
    if r_port <= -1.0:
        raise NumericError("portfolio wiped out")

    nav_next = state.nav * (1.0 + r_port - cfg.c_tx * turnover)
    peak_next = max(state.peak_nav, nav_next)
    dd_next = nav_next / peak_next - 1.0

    tx_cost = cfg.c_tx * turnover
    dd_pen = cfg.lambda_dd * max(0.0, abs(dd_next) - cfg.d0)
    reward = float(np.log1p(r_port) - tx_cost - dd_pen)
    # decomposition holds by construction; asserted to catch drift
    assert abs(reward + tx_cost + dd_pen - np.log1p(r_port)) < 1e-12

    next_state = PortfolioState(
        w=target.copy(), w_cash=1.0 - float(target.sum()),
        nav=nav_next, peak_nav=peak_next, dd=dd_next, t=state.t + 1)
    return StepResult(reward=reward, r_port=r_port, turnover=turnover,
                      dd=dd_next, next_state=next_state)


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

def save_prices_csv(prices: PriceSeries, returns_path: str, sectors_path: str):
    with open(returns_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["date"] + [f"asset_{i}" for i in range(N_ASSETS)])
        for d, row in zip(prices.dates, prices.simple_returns):
            w.writerow([int(d)] + [repr(float(x)) for x in row])
    with open(sectors_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["asset", "sector"])
        for i, s in enumerate(prices.sector_of):
            w.writerow([f"asset_{i}", int(s)])


def load_prices_csv(returns_path: str, sectors_path: str) -> PriceSeries:
    with open(returns_path) as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    if header[0] != "date" or len(header) != N_ASSETS + 1:
        raise StructuralError("bad returns CSV header")
    dates = np.array([int(r[0]) for r in body])
    rets = np.array([[float(x) for x in r[1:]] for r in body])
    with open(sectors_path) as f:
        srows = list(csv.reader(f))[1:]
    sector_of = np.zeros(N_ASSETS, dtype=np.int64)
    for name, s in srows:
        sector_of[int(name.split("_")[1])] = int(s)
    return PriceSeries(dates=dates, simple_returns=rets, sector_of=sector_of)
