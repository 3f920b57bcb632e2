"""Asset-to-portfolio constraint construction.

Centered softplus trade gate, head-wise cost/uncertainty aggregation,
quantile budget calibration from warm-start rollouts, the shared pressure
weight, and the realized cost-to-budget violation metric.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, StructuralError

HEADS = ("add", "hold", "spill")
N_HEADS = 3

DEFAULT_TAU = 50.0
DEFAULT_ETA = (0.0, 1.0, 1.0)
DEFAULT_QUANTILES = (0.90, 0.90, 0.90)
BUDGET_FLOOR = 1e-6


@dataclass
class CostBundle:
    c: np.ndarray      # (3,) per-step head costs >= 0
    u_bar: np.ndarray  # (3,) portfolio uncertainties in [0,1]

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        self.u_bar = np.asarray(self.u_bar, dtype=np.float64)
        if self.c.shape != (N_HEADS,) or self.u_bar.shape != (N_HEADS,):
            raise StructuralError("cost bundle must have 3 heads")
        if np.any(self.c < -1e-12):
            raise ContractError("negative head cost")


@dataclass
class Budgets:
    b: np.ndarray
    q: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        if np.any(self.b <= 0):
            raise StructuralError("budgets must be positive")


@dataclass
class PressureWeights:
    lam: np.ndarray
    inputs_snapshot: dict


def centered_softplus(x, tau: float = DEFAULT_TAU):
    """max(0, softplus(tau*x)/tau - log2/tau); linear asymptote for large tau*x."""
    if tau <= 0:
        raise StructuralError("tau must be positive")
    x = np.asarray(x, dtype=np.float64)
    tx = tau * x
    sp = np.where(tx > 30.0, tx, np.log1p(np.exp(np.minimum(tx, 30.0)))) / tau
    out = np.maximum(sp - np.log(2.0) / tau, 0.0)
    return float(out) if out.ndim == 0 else out


def aggregate_costs(rho_delta: np.ndarray, rho_w: np.ndarray, u: np.ndarray,
                    delta_w: np.ndarray, w_next: np.ndarray,
                    eta=DEFAULT_ETA, tau: float = DEFAULT_TAU) -> CostBundle:
    """Portfolio head costs c^k = sum_i [g(dw_i) rho_delta_ik + eta_k w_i rho_w_ik]."""
    rho_delta = np.asarray(rho_delta, dtype=np.float64)
    rho_w = np.asarray(rho_w, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    delta_w = np.asarray(delta_w, dtype=np.float64)
    w_next = np.asarray(w_next, dtype=np.float64)
    n = delta_w.shape[0]
    for arr in (rho_delta, rho_w, u):
        if arr.shape != (n, N_HEADS):
            raise StructuralError("per-asset outputs must be (N, 3)")
    if w_next.shape != (n,):
        raise StructuralError("w_next length mismatch")
    if np.any(w_next < -1e-12):
        raise ContractError("negative post-trade weight")
    gate = centered_softplus(delta_w, tau)
    eta = np.asarray(eta, dtype=np.float64)
    c = gate @ rho_delta + eta * (w_next @ rho_w)
    u_bar = w_next @ u
    return CostBundle(c=c, u_bar=u_bar)


def calibrate_budgets(warm_costs: list[CostBundle], q=DEFAULT_QUANTILES,
                      source: str = "") -> Budgets:
    if len(warm_costs) == 0:
        raise StructuralError("empty warm-cost sequence")
    if len(warm_costs) < 50:
        raise StructuralError("warm sequence shorter than 50 steps")
    q = np.asarray(q, dtype=np.float64)
    if np.any(q <= 0) or np.any(q > 1):
        raise StructuralError("quantiles must lie in (0,1]")
    mat = np.stack([cb.c for cb in warm_costs])  # (T, 3)
    b = np.array([np.quantile(mat[:, k], q[k], method="linear")
                  for k in range(N_HEADS)])
    return Budgets(b=np.maximum(b, BUDGET_FLOOR), q=q, source=source)


def pressure_weights(c_hat: np.ndarray, u_hat: np.ndarray, budgets: Budgets,
                     beta, lambda_u: float, eps_safe: float,
                     lambda_max: float) -> PressureWeights:
    if eps_safe <= 0:
        raise StructuralError("eps_safe must be positive")
    c_hat = np.asarray(c_hat, dtype=np.float64)
    u_hat = np.asarray(u_hat, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    slack = np.maximum(eps_safe, budgets.b - c_hat)
    lam = np.clip(beta * (1.0 + lambda_u * u_hat) / slack, 0.0, lambda_max)
    return PressureWeights(
        lam=lam,
        inputs_snapshot={"c_hat": c_hat.tolist(), "u_hat": u_hat.tolist(),
                         "b": budgets.b.tolist()})


def rollout_cost_stats(costs: list[CostBundle]):
    """Per-head means of (cost, uncertainty) over a rollout."""
    if len(costs) == 0:
        raise StructuralError("empty cost sequence")
    c_hat = np.mean([cb.c for cb in costs], axis=0)
    u_hat = np.mean([cb.u_bar for cb in costs], axis=0)
    return c_hat, u_hat


def esg_violation(costs: list[CostBundle], budgets: Budgets) -> float:
    """Largest realized cost-to-budget ratio across steps and heads."""
    if len(costs) == 0:
        raise StructuralError("empty cost sequence")
    mat = np.stack([cb.c for cb in costs])
    return float((mat / budgets.b).max())


def save_budgets(budgets: Budgets, path: str):
    with open(path, "w") as f:
        json.dump({"b": budgets.b.tolist(), "q": budgets.q.tolist(),
                   "source": budgets.source}, f, indent=2)


def load_budgets(path: str) -> Budgets:
    with open(path) as f:
        d = json.load(f)
    return Budgets(b=np.array(d["b"]), q=np.array(d["q"]), source=d["source"])
