"""Action-chunk denoising with optional safety-gradient guidance.

Chunks are ``(n, d)`` float arrays laid out per :class:`~.geometry.ArmPair`.
Step index ``k`` runs from ``K`` (pure noise) down to 1; ``alpha_bar[0] == 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Literal, Protocol

import numpy as np

from .errors import (
    ContractError,
    GuidedStepError,
    NumericError,
    SamplingError,
    ScheduleCorruptionError,
)

Mode = Literal["ddpm", "ddim"]


class Denoiser(Protocol):
    def __call__(self, chunk: np.ndarray, obs: Any, k: int) -> np.ndarray: ...


class CostFn(Protocol):
    """Returns an object with ``value`` and ``gradient`` (same shape as the chunk)."""

    def __call__(self, chunk: np.ndarray): ...


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray
    eta: float = 0.0  # DDIM stochasticity; 0 is deterministic
    alpha_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.array(self.betas, dtype=float).reshape(-1)
        if betas.size == 0 or np.any(betas <= 0) or np.any(betas >= 1):
            raise ContractError("every beta must lie in (0, 1)")
        if self.eta < 0:
            raise ContractError("eta must be >= 0")
        ab = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        betas.setflags(write=False)
        ab.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bar", ab)

    @classmethod
    def cosine(cls, steps: int, s: float = 0.008, max_beta: float = 0.999, eta: float = 0.0):
        """Squared-cosine schedule evaluated on ``steps`` points."""

        def f(t):
            return math.cos((t / steps + s) / (1 + s) * math.pi / 2) ** 2

        betas = [min(1 - f(i + 1) / f(i), max_beta) for i in range(steps)]
        return cls(np.array(betas), eta)

    @classmethod
    def linear(cls, steps: int, beta_start: float = 1e-4, beta_end: float = 0.02, eta: float = 0.0):
        return cls(np.linspace(beta_start, beta_end, steps), eta)

    @property
    def K(self) -> int:
        return self.betas.size

    def abar(self, k: int) -> float:
        if not 0 <= k <= self.K:
            raise ContractError(f"step {k} outside [0, {self.K}]")
        return float(self.alpha_bar[k])

    def sigma(self, k: int, mode: Mode) -> float:
        ab, ab_prev = self.abar(k), self.abar(k - 1)
        var = (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)
        if mode == "ddpm":
            return math.sqrt(max(var, 0.0))
        if mode == "ddim":
            return self.eta * math.sqrt(max(var, 0.0))
        raise ContractError(f"unknown sampler mode {mode!r}")


@dataclass(frozen=True)
class GuidanceConfig:
    rho0: float = 1.0
    guided_steps: int | None = None  # M; None means max(3, ceil(0.3 K)) capped at K
    grad_clip: float | None = None  # None means 10 * sqrt(n * d)
    rho_schedule: Literal["scaled", "constant"] = "scaled"
    guide_grippers: tuple[bool, bool] = (False, False)

    def __post_init__(self):
        if self.rho0 < 0:
            raise ContractError("rho0 must be >= 0")
        if self.guided_steps is not None and self.guided_steps < 0:
            raise ContractError("guided_steps must be >= 0")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ContractError("grad_clip must be > 0")

    def steps_for(self, K: int) -> int:
        if self.guided_steps is None:
            return min(K, max(3, math.ceil(0.3 * K)))
        if self.guided_steps > K:
            raise ContractError(f"guided_steps={self.guided_steps} exceeds K={K}")
        return self.guided_steps

    def rho(self, k: int, schedule: NoiseSchedule) -> float:
        if self.rho_schedule == "constant":
            return self.rho0
        return self.rho0 * math.sqrt(1.0 - schedule.abar(k))

    def clip_for(self, shape) -> float:
        if self.grad_clip is not None:
            return self.grad_clip
        return 10.0 * math.sqrt(shape[0] * shape[1])


def estimate_clean(chunk: np.ndarray, eps: np.ndarray, schedule: NoiseSchedule, k: int) -> np.ndarray:
    """Tweedie estimate of the clean chunk from ``chunk`` at step ``k``."""
    if not 1 <= k <= schedule.K:
        raise ContractError(f"step {k} outside [1, {schedule.K}]")
    if chunk.shape != eps.shape:
        raise ContractError(f"shape mismatch {chunk.shape} vs {eps.shape}")
    ab = schedule.abar(k)
    if not ab > 0:
        raise ScheduleCorruptionError(f"alpha_bar[{k}] = {ab} is not positive")
    return (chunk - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)


def forward_noise(clean: np.ndarray, eps: np.ndarray, schedule: NoiseSchedule, k: int) -> np.ndarray:
    ab = schedule.abar(k)
    return math.sqrt(ab) * clean + math.sqrt(1.0 - ab) * eps


def _predict(denoiser, chunk, obs, k) -> np.ndarray:
    eps = np.asarray(denoiser(chunk, obs, k), dtype=float)
    if eps.shape != chunk.shape:
        raise NumericError(f"denoiser returned shape {eps.shape}, expected {chunk.shape}", k)
    if not np.all(np.isfinite(eps)):
        raise NumericError("denoiser returned non-finite values", k)
    return eps


def _reverse_mean(chunk, eps, schedule: NoiseSchedule, k: int, mode: Mode):
    """Mean of p(A^{k-1} | A^k), the std of its noise, and the clean estimate."""
    clean = estimate_clean(chunk, eps, schedule, k)
    sigma = schedule.sigma(k, mode)
    ab, ab_prev = schedule.abar(k), schedule.abar(k - 1)
    if mode == "ddpm":
        beta = float(schedule.betas[k - 1])
        c_clean = math.sqrt(ab_prev) * beta / (1.0 - ab)
        c_chunk = math.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab)
        mean = c_clean * clean + c_chunk * chunk
    else:
        mean = math.sqrt(ab_prev) * clean + math.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps
    return mean, sigma, clean


def _add_noise(mean, sigma, rng: np.random.Generator):
    if sigma > 0:
        return mean + sigma * rng.standard_normal(mean.shape)
    return mean


def unguided_step(chunk, obs, k, denoiser, schedule, rng, mode: Mode = "ddim") -> np.ndarray:
    if k < 1:
        raise ContractError("reverse steps need k >= 1")
    eps = _predict(denoiser, chunk, obs, k)
    mean, sigma, _ = _reverse_mean(chunk, eps, schedule, k, mode)
    return _add_noise(mean, sigma, rng)


def guided_step(
    chunk,
    obs,
    k,
    denoiser,
    schedule: NoiseSchedule,
    cost: CostFn | None,
    cfg: GuidanceConfig,
    rng,
    mode: Mode = "ddim",
    trace: list | None = None,
) -> np.ndarray:
    """One reverse step shifted by ``-rho_k * grad`` of the cost at the clean estimate.

    The clean-estimate Jacobian is taken as ``I / sqrt(alpha_bar_k)``. Gripper
    columns (the last two) are zeroed unless enabled in ``cfg.guide_grippers``;
    the shift is L2-clipped before the noise term is added.
    """
    if k < 1:
        raise ContractError("reverse steps need k >= 1")
    eps = _predict(denoiser, chunk, obs, k)
    mean, sigma, clean = _reverse_mean(chunk, eps, schedule, k, mode)
    rho = cfg.rho(k, schedule)
    if cost is not None and rho > 0:
        try:
            cv = cost(clean)
            grad = np.array(cv.gradient, dtype=float)
            if grad.shape != chunk.shape or not np.all(np.isfinite(grad)):
                raise NumericError(f"bad cost gradient (shape {grad.shape})", k)
        except GuidedStepError:
            raise
        except Exception as exc:
            raise GuidedStepError(k, exc) from exc
        grad /= math.sqrt(schedule.abar(k))
        d = chunk.shape[1]
        for col, on in zip((d - 2, d - 1), cfg.guide_grippers):
            if not on:
                grad[:, col] = 0.0
        norm = float(np.linalg.norm(grad))
        limit = cfg.clip_for(chunk.shape)
        if norm > limit:
            grad *= limit / norm
        mean = mean - rho * grad
        if trace is not None:
            trace.append({"k": k, "value": float(cv.value), "rho": rho, "grad_norm": norm,
                          "terms": dict(getattr(cv, "terms", {}) or {})})
    return _add_noise(mean, sigma, rng)


def sample_guided(
    obs,
    denoiser,
    schedule: NoiseSchedule,
    cost: CostFn | None,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
    shape: tuple[int, int],
    mode: Mode = "ddim",
    trace: list | None = None,
) -> np.ndarray:
    """Run k = K..1; guidance applies only on the final ``M`` steps (k <= M)."""
    M = cfg.steps_for(schedule.K)
    chunk = rng.standard_normal(shape)
    log: list = [] if trace is None else trace
    k = schedule.K
    try:
        for k in range(schedule.K, 0, -1):
            if k <= M:
                chunk = guided_step(chunk, obs, k, denoiser, schedule, cost, cfg, rng, mode, log)
            else:
                chunk = unguided_step(chunk, obs, k, denoiser, schedule, rng, mode)
    except (NumericError, GuidedStepError, ContractError, ScheduleCorruptionError) as exc:
        last = log[-1]["value"] if log else None
        raise SamplingError(k, last, exc) from exc
    return chunk


def sample(obs, denoiser, schedule, rng, shape, mode: Mode = "ddim") -> np.ndarray:
    """Plain reverse sampling; shares the random stream layout of :func:`sample_guided`."""
    chunk = rng.standard_normal(shape)
    for k in range(schedule.K, 0, -1):
        chunk = unguided_step(chunk, obs, k, denoiser, schedule, rng, mode)
    return chunk


class ScriptedGaussianDenoiser:
    """Exact noise predictor for data distributed as ``N(nominal, spread**2 I)``.

    With ``x_k = sqrt(ab) x0 + sqrt(1 - ab) eps`` the posterior mean of ``eps`` is
    ``sqrt(1 - ab) (x_k - sqrt(ab) m) / (1 - ab + ab s**2)``. ``spread`` may be a
    scalar or broadcast per column; ``spread == 0`` is the point-mass limit.
    """

    def __init__(self, nominal, spread, schedule: NoiseSchedule):
        self.nominal = np.array(nominal, dtype=float)
        self.spread = np.broadcast_to(np.asarray(spread, dtype=float), self.nominal.shape[-1:]).copy()
        if np.any(self.spread < 0) or not np.all(np.isfinite(self.spread)):
            raise ContractError("spread must be finite and non-negative")
        self.schedule = schedule

    def __call__(self, chunk, obs, k):
        if k < 1:
            raise ContractError("the denoiser is undefined at k = 0")
        ab = self.schedule.abar(k)
        var = 1.0 - ab + ab * self.spread**2
        return math.sqrt(1.0 - ab) * (chunk - math.sqrt(ab) * self.nominal) / var

    def posterior_mean(self, chunk, k):
        """Closed-form E[x0 | x_k] for the Gaussian model."""
        ab = self.schedule.abar(k)
        s2 = self.spread**2
        gain = math.sqrt(ab) * s2 / (1.0 - ab + ab * s2)
        return self.nominal + gain * (chunk - math.sqrt(ab) * self.nominal)


def scripted_gaussian_denoiser(nominal, spread, schedule: NoiseSchedule) -> ScriptedGaussianDenoiser:
    return ScriptedGaussianDenoiser(nominal, spread, schedule)

