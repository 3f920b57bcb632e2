"""Differentiable substrate for the small feedforward networks used everywhere else.

Forward evaluation runs in numpy (fast for tiny batches); gradients,
KL-based Fisher-vector products and the conjugate-gradient solver are backed
by torch autograd in float64. Parameters live in flat vectors so trust-region
updates can treat the policy as a point in R^n.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .errors import NumericError, StructuralError

torch.set_default_dtype(torch.float64)

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str  # "tanh" | "linear"

    @property
    def param_count(self) -> int:
        return (self.in_dim + 1) * self.out_dim


@dataclass(frozen=True)
class MLPSpec:
    layers: tuple[LayerSpec, ...]

    @property
    def param_count(self) -> int:
        return sum(l.param_count for l in self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim


def mlp_spec(dims: Sequence[int], hidden_activation: str = "tanh",
             out_activation: str = "linear") -> MLPSpec:
    layers = []
    for i in range(len(dims) - 1):
        act = out_activation if i == len(dims) - 2 else hidden_activation
        layers.append(LayerSpec(dims[i], dims[i + 1], act))
    return MLPSpec(tuple(layers))


@dataclass
class ParamVector:
    """Flat parameter vector plus the layer layout that gives it meaning."""
    spec: MLPSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.spec.param_count,):
            raise StructuralError(
                f"param vector length {self.values.size} != layout {self.spec.param_count}")
        if not np.all(np.isfinite(self.values)):
            raise NumericError("non-finite parameter values")

    def copy(self) -> "ParamVector":
        return ParamVector(self.spec, self.values.copy())


def init_params(spec: MLPSpec, rng: np.random.Generator,
                final_scale: float = 1.0) -> np.ndarray:
    """Orthogonal-ish scaled init; final layer optionally shrunk toward zero."""
    chunks = []
    n_layers = len(spec.layers)
    for idx, layer in enumerate(spec.layers):
        a = rng.standard_normal((layer.in_dim, layer.out_dim))
        # QR gives orthonormal columns when in_dim >= out_dim; otherwise rows.
        if layer.in_dim >= layer.out_dim:
            q, _ = np.linalg.qr(a)
        else:
            q, _ = np.linalg.qr(a.T)
            q = q.T
        gain = 1.0 if layer.activation == "linear" else np.sqrt(2.0)
        w = q[: layer.in_dim, : layer.out_dim] * gain
        if idx == n_layers - 1:
            w = w * final_scale
        b = np.zeros(layer.out_dim)
        chunks.append(w.reshape(-1))
        chunks.append(b)
    return np.concatenate(chunks)


def _split(spec: MLPSpec, flat):
    """Yield (W, b) views of a flat vector (numpy or torch)."""
    out = []
    off = 0
    for layer in spec.layers:
        n_w = layer.in_dim * layer.out_dim
        w = flat[off:off + n_w].reshape(layer.in_dim, layer.out_dim)
        off += n_w
        b = flat[off:off + layer.out_dim]
        off += layer.out_dim
        out.append((w, b))
    return out


def mlp_forward(params: ParamVector, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass. `x` is (in_dim,) or (batch, in_dim)."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != params.spec.in_dim:
        raise StructuralError(
            f"input width {h.shape[1]} != first layer in_dim {params.spec.in_dim}")
    for (w, b), layer in zip(_split(params.spec, params.values), params.spec.layers):
        h = h @ w + b
        if layer.activation == "tanh":
            h = np.tanh(h)
    return h[0] if squeeze else h


def mlp_forward_t(spec: MLPSpec, flat: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Torch twin of mlp_forward, differentiable through `flat`."""
    h = x if x.ndim == 2 else x.unsqueeze(0)
    for (w, b), layer in zip(_split(spec, flat), spec.layers):
        h = h @ w + b
        if layer.activation == "tanh":
            h = torch.tanh(h)
    return h if x.ndim == 2 else h.squeeze(0)


def grad(objective: Callable[[torch.Tensor], torch.Tensor],
         at: ParamVector) -> np.ndarray:
    """Reverse-mode gradient of a torch scalar objective at a flat point."""
    theta = torch.tensor(at.values, requires_grad=True)
    val = objective(theta)
    if not torch.isfinite(val):
        raise NumericError(f"objective evaluated to {float(val)}")
    (g,) = torch.autograd.grad(val, theta)
    return g.detach().numpy()


# ---------------------------------------------------------------------------
# Diagonal Gaussian policy head
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianPolicy:
    """MLP mean head plus state-independent per-dimension log-std parameters.

    Flat layout: [mlp params | log_std (action_dim)].
    """
    mean_spec: MLPSpec

    @property
    def action_dim(self) -> int:
        return self.mean_spec.out_dim

    @property
    def param_count(self) -> int:
        return self.mean_spec.param_count + self.action_dim

    def init(self, rng: np.random.Generator, log_std_init: float = -0.5) -> np.ndarray:
        mlp = init_params(self.mean_spec, rng, final_scale=0.01)
        return np.concatenate([mlp, np.full(self.action_dim, log_std_init)])

    def split(self, flat):
        return flat[: self.mean_spec.param_count], flat[self.mean_spec.param_count:]

    # ---- numpy path (sampling / rollout) ----

    def mean_std(self, flat: np.ndarray, obs: np.ndarray):
        mlp, log_std = self.split(flat)
        mean = mlp_forward(ParamVector(self.mean_spec, mlp), obs)
        log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
        return mean, np.exp(log_std)

    def sample(self, flat: np.ndarray, obs: np.ndarray, rng: np.random.Generator):
        mean, std = self.mean_std(flat, obs)
        action = mean + std * rng.standard_normal(mean.shape)
        return action, self.log_prob_np(flat, obs, action)

    def log_prob_np(self, flat: np.ndarray, obs: np.ndarray, action: np.ndarray) -> float:
        mean, std = self.mean_std(flat, obs)
        z = (action - mean) / std
        return float(-0.5 * np.sum(z * z) - np.sum(np.log(std))
                     - 0.5 * self.action_dim * np.log(2 * np.pi))

    # ---- torch path (updates) ----

    def dist_t(self, theta: torch.Tensor, obs: torch.Tensor):
        mlp, log_std = theta[: self.mean_spec.param_count], theta[self.mean_spec.param_count:]
        mean = mlp_forward_t(self.mean_spec, mlp, obs)
        log_std = torch.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def log_prob_t(self, theta: torch.Tensor, obs: torch.Tensor,
                   actions: torch.Tensor) -> torch.Tensor:
        mean, log_std = self.dist_t(theta, obs)
        std = torch.exp(log_std)
        z = (actions - mean) / std
        return (-0.5 * (z * z).sum(-1) - log_std.sum()
                - 0.5 * self.action_dim * np.log(2 * np.pi))

    def kl_t(self, theta_old: torch.Tensor, theta_new: torch.Tensor,
             obs: torch.Tensor) -> torch.Tensor:
        """Mean KL(pi_old || pi_new) over an observation batch."""
        mean_o, ls_o = self.dist_t(theta_old, obs)
        mean_n, ls_n = self.dist_t(theta_new, obs)
        var_o, var_n = torch.exp(2 * ls_o), torch.exp(2 * ls_n)
        kl = (ls_n - ls_o + (var_o + (mean_o - mean_n) ** 2) / (2 * var_n) - 0.5)
        return kl.sum(-1).mean()

    def kl_np(self, flat_old: np.ndarray, flat_new: np.ndarray, obs: np.ndarray) -> float:
        with torch.no_grad():
            return float(self.kl_t(torch.tensor(flat_old), torch.tensor(flat_new),
                                   torch.tensor(np.atleast_2d(obs))))


def fisher_vector_product(policy: GaussianPolicy, policy_params: np.ndarray,
                          states: np.ndarray, v: np.ndarray,
                          damping: float = 0.0) -> np.ndarray:
    """(F + damping*I) v with F the policy Fisher matrix averaged over states.

    Computed as the Hessian-vector product of the mean self-KL at the current
    parameters (double backprop).
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if states.shape[0] == 0:
        raise StructuralError("empty state batch")
    if v.shape != policy_params.shape:
        raise StructuralError("v layout does not match policy params")
    if damping < 0:
        raise StructuralError("damping must be nonnegative")
    theta = torch.tensor(policy_params, requires_grad=True)
    theta_old = torch.tensor(policy_params)
    obs = torch.tensor(states)
    kl = policy.kl_t(theta_old, theta, obs)
    (g,) = torch.autograd.grad(kl, theta, create_graph=True)
    gv = (g * torch.tensor(v)).sum()
    (hv,) = torch.autograd.grad(gv, theta)
    return hv.detach().numpy() + damping * v


@dataclass
class CGResult:
    x: np.ndarray
    residual: float
    iterations: int


def conjugate_gradient(matvec: Callable[[np.ndarray], np.ndarray],
                       rhs: np.ndarray, max_iters: int = 50,
                       residual_tol: float = 1e-8) -> CGResult:
    """Solve matvec(x)=rhs for symmetric positive definite matvec."""
    rhs = np.asarray(rhs, dtype=np.float64)
    x = np.zeros_like(rhs)
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return CGResult(x, 0.0, 0)
    r = rhs.copy()
    p = rhs.copy()
    rs = float(r @ r)
    for it in range(max_iters):
        ap = matvec(p)
        if not np.all(np.isfinite(ap)):
            raise NumericError(f"non-finite matvec output at CG iteration {it}")
        alpha = rs / float(p @ ap)
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(r @ r)
        if not np.isfinite(rs_new):
            raise NumericError(f"non-finite residual at CG iteration {it}")
        if np.sqrt(rs_new) <= residual_tol * rhs_norm:
            return CGResult(x, np.sqrt(rs_new) / rhs_norm, it + 1)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return CGResult(x, np.sqrt(rs) / rhs_norm, max_iters)
