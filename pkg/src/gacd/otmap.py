"""Transport maps between latent codes and the noise domain [0,1]^d.

Two maps live here.  The forward map is a small feedforward network h_psi
squashing latent codes into the unit box.  The reverse map is semi-discrete
optimal transport: the box is carved into power-diagram cells, one per code,
sized so each cell's uniform mass matches the code's target mass.  Cell i is

    W_i = { x : i = argmin_j [ c(x, z_j) - phi_j ] }

with dual potentials phi fitted by stochastic ascent (the dual gradient in
phi_i is nu_i - mass(W_i), so underweight cells get their potential raised,
which grows them).  A piecewise extension interpolates between the d+1
best-scoring codes with softmin weights, snapping to the single nearest code
whenever those codes are mutually farther apart than a threshold theta -- that
is the singularity-avoidance rule.

Costs come in two flavours: squared Euclidean (default), or the fused
graph distance between decoded graphs for callers that supply a decoder.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.spatial.distance import pdist

from .fgw import MeasuredGraph, fgw_distance
from .neural import (
    ParamStore,
    Tape,
    Tensor,
    backward,
    constant,
    glorot,
    matmul,
    relu,
    sigmoid,
    sqrt,
    square,
    tsum,
)

DUPLICATE_TOL = 1e-12
DEFAULT_BETA_EXT = 50.0
MSE_EPS = 1e-12


class CostKind(enum.Enum):
    SQUARED_EUCLIDEAN = "squared_euclidean"
    DECODED_FGW = "decoded_fgw"


@dataclass(frozen=True)
class LatentCodes:
    """Code matrix with one mass per row; duplicate rows are disallowed."""

    z: np.ndarray  # (T, d)
    nu: np.ndarray  # (T,)

    def __post_init__(self):
        if abs(self.nu.sum() - 1.0) > 1e-9 or (self.nu < 0).any():
            raise ValueError("code masses must form a probability vector")
        if self.t > 1:
            if pdist(self.z).min() <= DUPLICATE_TOL:
                raise ValueError("duplicate code rows; merge them first")

    @property
    def t(self) -> int:
        return int(self.z.shape[0])

    @property
    def d(self) -> int:
        return int(self.z.shape[1])

    @classmethod
    def from_rows(cls, z: np.ndarray, nu: np.ndarray | None = None) -> "LatentCodes":
        """Build codes from raw rows, merging duplicates and summing their mass."""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] == 0:
            raise ValueError("need a nonempty T x d code matrix")
        if nu is None:
            nu = np.full(z.shape[0], 1.0 / z.shape[0])
        nu = np.asarray(nu, dtype=np.float64)
        keep_rows: list[np.ndarray] = []
        keep_mass: list[float] = []
        for row, mass in zip(z, nu):
            for i, kept in enumerate(keep_rows):
                if np.abs(row - kept).max() <= DUPLICATE_TOL:
                    keep_mass[i] += mass
                    break
            else:
                keep_rows.append(row)
                keep_mass.append(float(mass))
        total = sum(keep_mass)
        return cls(
            z=np.array(keep_rows), nu=np.array(keep_mass, dtype=np.float64) / total
        )


@dataclass(frozen=True)
class SdotMap:
    """Fitted semi-discrete transport: codes, dual potentials, mass report."""

    codes: LatentCodes
    potentials: np.ndarray  # (T,)
    cost_kind: CostKind
    fitted_masses: np.ndarray  # (T,) fresh MC estimate from fitting
    decoder: Callable[[np.ndarray], MeasuredGraph] | None = None
    fgw_alpha: float = 0.5

    def with_potentials(self, phi: np.ndarray) -> "SdotMap":
        return replace(self, potentials=np.asarray(phi, dtype=np.float64))


@dataclass(frozen=True)
class SimplicialExtension:
    """Continuous extension of a fitted map; snaps across singularities."""

    base: SdotMap
    theta: float
    beta_ext: float = DEFAULT_BETA_EXT


def _cost_matrix(x: np.ndarray, m: SdotMap, code_graphs=None) -> np.ndarray:
    """(n, T) transport costs from sample rows to each code."""
    z = m.codes.z
    if m.cost_kind is CostKind.SQUARED_EUCLIDEAN:
        sq = (x * x).sum(axis=1)[:, None] - 2.0 * x @ z.T + (z * z).sum(axis=1)[None, :]
        return np.maximum(sq, 0.0)
    if code_graphs is None:
        code_graphs = [m.decoder(row) for row in z]
    out = np.empty((x.shape[0], len(code_graphs)))
    for i, row in enumerate(x):
        gx = m.decoder(row)
        for j, gz in enumerate(code_graphs):
            out[i, j] = fgw_distance(gx, gz, m.fgw_alpha, fast=True).cost
    return out


def assign_cell(x: np.ndarray, m: SdotMap) -> int:
    """Index of the cell containing x; ties break to the lowest index."""
    scores = _cost_matrix(np.asarray(x, dtype=np.float64)[None, :], m) - m.potentials
    return int(np.argmin(scores[0]))


def assign_cells(x: np.ndarray, m: SdotMap) -> np.ndarray:
    """Row-wise cell assignment for a batch of sample points."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected an (n, d) batch of rows")
    scores = _cost_matrix(x, m) - m.potentials
    return np.argmin(scores, axis=1)


def _mass_estimate(m: SdotMap, n_samples: int, rng, code_graphs=None) -> np.ndarray:
    d = m.codes.d
    total = np.zeros(m.codes.t)
    chunk = 20_000 if m.cost_kind is CostKind.SQUARED_EUCLIDEAN else 500
    remaining = n_samples
    while remaining > 0:
        take = min(chunk, remaining)
        x = rng.random((take, d))
        idx = np.argmin(_cost_matrix(x, m, code_graphs) - m.potentials, axis=1)
        total += np.bincount(idx, minlength=m.codes.t)
        remaining -= take
    return total / n_samples


def fit_sdot(
    codes: LatentCodes,
    cost_kind: CostKind = CostKind.SQUARED_EUCLIDEAN,
    mc_samples: int = 4096,
    iters: int = 3000,
    seed: int = 0,
    *,
    lr: float | None = None,
    eps_mass: float = 0.01,
    verify_samples: int = 100_000,
    attempts: int = 3,
    decoder: Callable[[np.ndarray], MeasuredGraph] | None = None,
    fgw_alpha: float = 0.5,
) -> SdotMap:
    """Fit dual potentials until a fresh mass estimate matches nu per cell."""
    if mc_samples < 10 * codes.t:
        raise ValueError(f"need mc_samples >= 10*T = {10 * codes.t}")
    if cost_kind is CostKind.DECODED_FGW and decoder is None:
        raise ValueError("decoded-graph cost needs a decoder")
    if lr is None:
        lr = max(1.0, codes.d / 2.0)

    m = SdotMap(
        codes=codes,
        potentials=np.zeros(codes.t),
        cost_kind=cost_kind,
        fitted_masses=np.ones(codes.t) / codes.t,
        decoder=decoder,
        fgw_alpha=fgw_alpha,
    )
    code_graphs = (
        [decoder(row) for row in codes.z]
        if cost_kind is CostKind.DECODED_FGW
        else None
    )
    train_rng = np.random.default_rng([seed, 0xA5CE])
    verify_rng = np.random.default_rng([seed, 0x5D07])

    phi = np.zeros(codes.t)
    err = math.inf
    cur_iters, cur_mc, cur_lr = iters, mc_samples, lr
    for _ in range(max(attempts, 1)):
        phi = _dual_ascent(
            m, phi, m.codes.nu, cur_mc, cur_iters, cur_lr, train_rng, code_graphs
        )
        m = m.with_potentials(phi)
        masses = _mass_estimate(m, verify_samples, verify_rng, code_graphs)
        err = np.abs(masses - codes.nu).max()
        if err <= eps_mass:
            return replace(m, fitted_masses=masses)
        cur_iters *= 3
        cur_mc *= 2
        cur_lr *= 0.5
    raise RuntimeError(
        f"semi-discrete fit did not converge: mass error {err:.4f} "
        f"exceeds {eps_mass} after {attempts} attempts"
    )


def _dual_ascent(m, phi, nu, mc, iters, lr, rng, code_graphs):
    phi = phi.copy()
    acc = np.zeros_like(phi)
    n_acc = 0
    for t in range(iters):
        x = rng.random((mc, m.codes.d))
        cost = _cost_matrix(x, m, code_graphs)
        idx = np.argmin(cost - phi[None, :], axis=1)
        mhat = np.bincount(idx, minlength=len(nu)) / mc
        step = lr / math.sqrt(1.0 + 0.1 * t)
        phi = phi + step * (nu - mhat)
        phi -= phi.mean()
        if 2 * t >= iters:
            acc += phi
            n_acc += 1
    return acc / n_acc if n_acc else phi


def cell_centroids(m: SdotMap, samples: int = 50_000, seed: int = 0) -> np.ndarray:
    """MC estimate of each cell's barycenter; empty cells fall back to the code."""
    rng = np.random.default_rng([seed, 0xCE27])
    d, t = m.codes.d, m.codes.t
    sums = np.zeros((t, d))
    counts = np.zeros(t)
    remaining = samples
    while remaining > 0:
        take = min(20_000, remaining)
        x = rng.random((take, d))
        idx = np.argmin(_cost_matrix(x, m) - m.potentials, axis=1)
        np.add.at(sums, idx, x)
        counts += np.bincount(idx, minlength=t)
        remaining -= take
    out = np.empty((t, d))
    for i in range(t):
        if counts[i] > 0:
            out[i] = sums[i] / counts[i]
        else:
            out[i] = np.clip(m.codes.z[i], 0.0, 1.0)
    return out


def extend(
    m: SdotMap, theta: float | None = None, beta_ext: float = DEFAULT_BETA_EXT
) -> SimplicialExtension:
    """Wrap a fitted map with the piecewise-interpolating continuous extension."""
    if theta is None:
        theta = (
            2.0 * float(np.median(pdist(m.codes.z))) if m.codes.t > 1 else math.inf
        )
    if theta <= 0:
        raise ValueError("snap threshold must be positive")
    return SimplicialExtension(base=m, theta=theta, beta_ext=beta_ext)


def apply_extension(ext: SimplicialExtension, x: np.ndarray) -> np.ndarray:
    """Map points of the box to latent space; convex blends or snapped codes."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xs = x[None, :] if single else x
    m = ext.base
    z = m.codes.z
    t, d = m.codes.t, m.codes.d
    k = min(t, d + 1)
    scores = _cost_matrix(xs, m) - m.potentials
    out = np.empty((xs.shape[0], z.shape[1]))
    for row in range(xs.shape[0]):
        s = scores[row]
        sel = np.argpartition(s, k - 1)[:k] if k < t else np.arange(t)
        diameter = float(np.max(pdist(z[sel]))) if len(sel) > 1 else 0.0
        if diameter > ext.theta:
            out[row] = z[int(np.argmin(s))]
        else:
            s_sel = s[sel]
            w = np.exp(-ext.beta_ext * (s_sel - s_sel.min()))
            w /= w.sum()
            out[row] = w @ z[sel]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# forward map h_psi


@dataclass(frozen=True)
class ForwardMap:
    """Two-layer network z -> [0,1]^d with the training-loss history."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    history: tuple[float, ...]


def mse_objective(w1, b1, w2, b2, codes: np.ndarray, targets: np.ndarray):
    """Sum over rows of the Euclidean norm ||h_psi(z_i) - x_i|| as a Tensor."""
    zt = constant(np.asarray(codes, dtype=np.float64))
    hidden = relu(matmul(zt, w1) + b1)
    out = sigmoid(matmul(hidden, w2) + b2)
    diff = out - constant(np.asarray(targets, dtype=np.float64))
    row_sq = tsum(square(diff), axis=1)
    return tsum(sqrt(row_sq + MSE_EPS))


def train_forward_map(
    codes: np.ndarray,
    targets: np.ndarray,
    *,
    hidden: int = 64,
    epochs: int = 1000,
    lr: float = 1e-2,
    seed: int = 0,
    loss_threshold: float | None = None,
) -> ForwardMap:
    """Fit h_psi to carry each code to its target point inside the box."""
    codes = np.asarray(codes, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    d_in, d_out = codes.shape[1], targets.shape[1]
    rng = np.random.default_rng([seed, 0xF0A1])
    store = ParamStore()
    w1 = store.add("w1", glorot(rng, d_in, hidden))
    b1 = store.add("b1", np.zeros(hidden))
    w2 = store.add("w2", glorot(rng, hidden, d_out))
    b2 = store.add("b2", np.zeros(d_out))

    def current_loss() -> float:
        return mse_objective(w1, b1, w2, b2, codes, targets).item()

    # the sum-of-norms loss keeps unit-scale gradients arbitrarily close to
    # the optimum, so a fixed Adam step bounces at a floor that scales with
    # the step; sweep the rate down four decades and keep the best iterate
    warm = max(epochs // 5, 1)
    history: list[float] = []
    best_value = current_loss()
    best = store.snapshot()
    for t in range(epochs):
        store.zero_grad()
        with Tape() as tape:
            loss = mse_objective(w1, b1, w2, b2, codes, targets)
        if not math.isfinite(loss.item()):
            raise RuntimeError("forward map training diverged (non-finite loss)")
        backward(tape, loss)
        if t < warm:
            cur_lr = lr
        else:
            cur_lr = lr * 1e-4 ** ((t - warm) / max(epochs - warm, 1))
        store.adam_step(lr=cur_lr)
        value = current_loss()
        if value < best_value:
            best_value = value
            best = store.snapshot()
        history.append(best_value)
    store.restore(best)
    if loss_threshold is not None and history and history[-1] > loss_threshold:
        raise RuntimeError(
            f"final loss {history[-1]:.3e} above threshold {loss_threshold:.3e}"
        )
    return ForwardMap(
        w1=w1.data.copy(),
        b1=b1.data.copy(),
        w2=w2.data.copy(),
        b2=b2.data.copy(),
        history=tuple(history),
    )


def forward_map_apply(fm: ForwardMap, z: np.ndarray) -> np.ndarray:
    """Evaluate h_psi; output lands componentwise in [0,1]."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zs = z[None, :] if single else z
    hidden = np.maximum(zs @ fm.w1 + fm.b1, 0.0)
    out = 1.0 / (1.0 + np.exp(-(hidden @ fm.w2 + fm.b2)))
    return out[0] if single else out
