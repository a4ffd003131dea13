"""The truncated Euler-Maruyama integrator and moment diagnostics.

One step from state ``X_k`` is

    X_hat_{k+1} = X_k + b(X_k) h + sigma Z_{k+1},   Z_{k+1} ~ N(0, h I)
    X_{k+1}     = truncate(X_hat_{k+1})

with the radial truncation of :mod:`temcouple.calibrate`.  Ensembles are
driven by one counter-based stream per path keyed ``(seed, path_index)``, so
results are reproducible and independent of how work is scheduled, and a
path's trajectory does not change when more paths are added.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibrate import TruncationParams, truncate, truncation_radius
from .errors import InputError, NumericalError
from .model import DriftModel, eval_drift
from .rng import path_streams

# |X_hat| beyond this means the step size is above its ceiling or the model
# is wrong; erroring beats silently projecting garbage back into the ball.
OVERFLOW_GUARD = 1e8


@dataclass(frozen=True)
class TemState:
    """State after ``k`` steps; ``x_hat`` is the pre-truncation point (None at k=0)."""

    k: int
    x: np.ndarray
    x_hat: np.ndarray | None = None


@dataclass(frozen=True)
class PathEnsemble:
    """States of ``n_paths`` trajectories stored at checkpoint step indices."""

    n_paths: int
    checkpoints: np.ndarray  # shape (n_checkpoints,), int step indices
    states: np.ndarray  # shape (n_checkpoints, n_paths, dim)
    seed: int
    h: float
    truncation_count: int  # steps on which the projection actually moved a point
    full_paths: np.ndarray | None = None  # (n_steps+1, n_paths, dim) when requested

    @property
    def times(self) -> np.ndarray:
        return self.checkpoints * self.h


def initial_state(x0: np.ndarray, h: float, trunc: TruncationParams) -> TemState:
    return TemState(k=0, x=truncate(np.asarray(x0, dtype=float), h, trunc))


def tem_step(
    state: TemState,
    model: DriftModel,
    h: float,
    trunc: TruncationParams,
    gaussian_increment: np.ndarray,
) -> TemState:
    """Advance one step with a caller-supplied ``N(0, h I)`` increment."""
    z = np.asarray(gaussian_increment, dtype=float)
    x_hat = state.x + h * eval_drift(model, state.x) + model.sigma * z
    if not np.all(np.isfinite(x_hat)) or np.linalg.norm(x_hat) > OVERFLOW_GUARD:
        raise NumericalError(f"state blew up at step {state.k + 1}: |x_hat| not finite/bounded")
    return TemState(k=state.k + 1, x=truncate(x_hat, h, trunc), x_hat=x_hat)


def simulate_ensemble(
    model: DriftModel,
    trunc: TruncationParams,
    h: float,
    n_paths: int,
    n_steps: int,
    checkpoints,
    initial,
    seed: int,
    store_full: bool = False,
    stream_prefix: tuple = (),
) -> PathEnsemble:
    """Simulate ``n_paths`` independent trajectories, recording checkpoints.

    ``initial`` is a single point shared by all paths or an array of shape
    ``(n_paths, dim)``.  Checkpoint ``k`` records the state after ``k`` steps
    (0 is the truncated initial condition).  ``stream_prefix`` extends the
    per-path stream key so several ensembles under one seed stay independent.
    """
    if n_paths < 1:
        raise InputError("n_paths must be >= 1")
    checkpoints = np.unique(np.asarray(checkpoints, dtype=int))
    if checkpoints.size and (checkpoints[0] < 0 or checkpoints[-1] > n_steps):
        raise InputError("checkpoints must lie in [0, n_steps]")
    x0 = np.asarray(initial, dtype=float)
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (n_paths, model.dim)).copy()
    if x0.shape != (n_paths, model.dim):
        raise InputError(f"initial has shape {x0.shape}, expected ({n_paths}, {model.dim})")

    radius = truncation_radius(h, trunc)
    x = truncate(x0, h, trunc)
    sqrt_h = np.sqrt(h)
    states = np.empty((checkpoints.size, n_paths, model.dim))
    full = np.empty((n_steps + 1, n_paths, model.dim)) if store_full else None
    if full is not None:
        full[0] = x
    ckpt_pos = {int(k): i for i, k in enumerate(checkpoints)}
    if 0 in ckpt_pos:
        states[ckpt_pos[0]] = x

    gens = path_streams(seed, n_paths, *stream_prefix)
    chunk = max(1, min(n_steps, 4_000_000 // max(1, n_paths * model.dim)))
    truncation_count = 0
    k = 0
    z = np.empty((n_paths, chunk, model.dim))
    while k < n_steps:
        span = min(chunk, n_steps - k)
        for i, g in enumerate(gens):
            z[i, :span] = g.standard_normal((span, model.dim))
        for j in range(span):
            x_hat = x + h * model.drift(x) + (model.sigma * sqrt_h) * z[:, j]
            if not np.all(np.isfinite(x_hat)):
                raise NumericalError(f"non-finite state at step {k + j + 1}")
            norms = np.linalg.norm(x_hat, axis=-1)
            if norms.max() > OVERFLOW_GUARD:
                raise NumericalError(
                    f"state blew up at step {k + j + 1}: |x_hat| = {norms.max():g}"
                )
            over = norms > radius
            truncation_count += int(np.count_nonzero(over))
            x = x_hat.copy()
            if np.any(over):
                x[over] *= (radius / norms[over])[:, None]
            pos = ckpt_pos.get(k + j + 1)
            if pos is not None:
                states[pos] = x
            if full is not None:
                full[k + j + 1] = x
        k += span

    return PathEnsemble(
        n_paths=n_paths,
        checkpoints=checkpoints,
        states=states,
        seed=seed,
        h=h,
        truncation_count=truncation_count,
        full_paths=full,
    )


@dataclass(frozen=True)
class MomentEstimates:
    checkpoints: np.ndarray
    q: float
    values: np.ndarray
    stderrs: np.ndarray


def moment_estimate(ensemble: PathEnsemble, q: float) -> MomentEstimates:
    """Monte Carlo estimate of ``E |X_k|^q`` at each checkpoint."""
    if q <= 0:
        raise InputError("q must be positive")
    norms_q = np.linalg.norm(ensemble.states, axis=-1) ** q
    values = norms_q.mean(axis=1)
    stderrs = norms_q.std(axis=1, ddof=1) / np.sqrt(ensemble.n_paths)
    return MomentEstimates(ensemble.checkpoints, q, values, stderrs)
