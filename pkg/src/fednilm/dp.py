"""Gaussian-mechanism differential privacy for federated training.

Two injection points: server-side noise on the averaged model (global mode)
and client-side noise on every clipped batch gradient (local mode). Spend is
tracked with basic composition of a per-round Gaussian-mechanism epsilon.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .nn import Gradient, ModelParams

MODES = ("none", "global", "local")


@dataclass
class PrivacyConfig:
    mode: str = "none"
    epsilon_budget: float | None = None
    delta: float = 1e-5
    clip_norm: float = 4.0
    sigma: float | None = None
    max_rounds: int = 10

    def validate(self) -> "PrivacyConfig":
        if self.mode not in MODES:
            raise ConfigError(f"privacy mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "none":
            return self
        if self.epsilon_budget is None or not self.epsilon_budget > 0:
            raise ConfigError(f"privacy mode {self.mode!r} needs epsilon > 0")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)")
        if not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive")
        # sigma == 0 is accepted as an explicit "noise off" override
        if self.sigma is not None and self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        return self

    @property
    def noise_disabled(self) -> bool:
        return self.sigma is not None and self.sigma == 0.0

    def resolved_sigma(self) -> float:
        """Explicit sigma, or the smallest sigma whose ``max_rounds`` spends fit the budget."""
        if self.sigma is not None:
            return float(self.sigma)
        return calibrate_sigma(self.epsilon_budget, self.delta, self.max_rounds)


@dataclass
class PrivacyLedger:
    budget: float
    delta: float
    max_rounds: int
    spends: list = field(default_factory=list)
    cumulative: list = field(default_factory=list)
    exhausted: bool = False
    heuristic: bool = False
    disabled: bool = False

    @property
    def epsilon_spent(self) -> float:
        return self.cumulative[-1] if self.cumulative else 0.0

    def records(self):
        return [
            {"round": r + 1, "delta_eps": d, "cumulative_eps": c, "exhausted": c > self.budget}
            for r, (d, c) in enumerate(zip(self.spends, self.cumulative))
        ]


def clip(grad, C: float):
    """Project onto the L2 ball of radius C; vectors already inside are returned as-is."""
    values = grad.values if isinstance(grad, Gradient) else np.asarray(grad, dtype=np.float64)
    norm = float(np.linalg.norm(values))
    if norm > C:
        values = values * (C / norm)
        # guard the rare 1-ulp overshoot of norm(g * C/|g|)
        while np.linalg.norm(values) > C:
            values = values * (1.0 - 2.0 ** -52)
    if isinstance(grad, Gradient):
        return Gradient(values, grad.sample_count)
    return values


def sigma_for(epsilon: float, delta: float) -> float:
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive")
    if not 0.0 < delta < 1.0:
        raise ConfigError("delta must lie in (0, 1)")
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def round_epsilon(delta: float, sigma: float, max_rounds: int) -> float:
    """Per-round spend of the Gaussian mechanism with delta split over ``max_rounds``."""
    return math.sqrt(2.0 * math.log(1.25 * max_rounds / delta)) / sigma


def calibrate_sigma(epsilon: float, delta: float, max_rounds: int) -> float:
    sigma = sigma_for(epsilon / max_rounds, delta / max_rounds)
    while max_rounds * round_epsilon(delta, sigma, max_rounds) > epsilon:
        sigma = math.nextafter(sigma, math.inf)
    return sigma


def gaussian_perturb(vec, noise_std: float, seed):
    vec = np.asarray(vec, dtype=np.float64)
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    if noise_std == 0:
        return vec.copy()
    rng = np.random.default_rng(seed)
    return vec + noise_std * rng.standard_normal(vec.shape)


def gdpfl_aggregate_hook(aggregated: ModelParams, cfg: PrivacyConfig, seed) -> ModelParams:
    if cfg.mode != "global":
        raise ConfigError("gdpfl_aggregate_hook needs privacy mode 'global'")
    std = cfg.clip_norm * cfg.resolved_sigma()
    return ModelParams(gaussian_perturb(aggregated.values, std, seed), aggregated.manifest)


def ldpfl_gradient_hook(grad: Gradient, cfg: PrivacyConfig, N: int, seed) -> Gradient:
    if cfg.mode != "local":
        raise ConfigError("ldpfl_gradient_hook needs privacy mode 'local'")
    clipped = clip(grad, cfg.clip_norm)
    std = cfg.clip_norm * cfg.resolved_sigma() / math.sqrt(N)
    return Gradient(gaussian_perturb(clipped.values, std, seed), clipped.sample_count)


def new_ledger(cfg: PrivacyConfig) -> PrivacyLedger:
    return PrivacyLedger(budget=cfg.epsilon_budget or math.inf, delta=cfg.delta,
                         max_rounds=cfg.max_rounds, heuristic=cfg.mode == "local",
                         disabled=cfg.noise_disabled or cfg.mode == "none")


def privacy_account(ledger: PrivacyLedger, delta: float, sigma: float, round: int) -> float:
    """Charge round ``round`` (1-based) and return the cumulative epsilon."""
    if round != len(ledger.spends) + 1:
        raise ValueError(f"ledger holds {len(ledger.spends)} rounds, cannot charge round {round}")
    step = round_epsilon(delta, sigma, ledger.max_rounds)
    total = round * step
    ledger.spends.append(step)
    ledger.cumulative.append(total)
    ledger.exhausted = total > ledger.budget
    return total


def halting_round(epsilon: float, delta: float, sigma: float, max_rounds: int) -> int:
    """First round whose cumulative spend exceeds ``epsilon``."""
    step = round_epsilon(delta, sigma, max_rounds)
    r = max(1, math.ceil(epsilon / step))
    if r * step <= epsilon:
        r += 1
    return r


def run_with_privacy(config, spec, init_params, clients, privacy: PrivacyConfig, **kwargs):
    """Federated run with the privacy hooks wired in; see :func:`fednilm.fl.run_federated`."""
    from .fl import run_federated

    if privacy.mode not in ("global", "local"):
        raise ConfigError("run_with_privacy needs mode 'global' or 'local'")
    state, ledger, report = run_federated(config, spec, init_params, clients, dp=privacy, **kwargs)
    return state, ledger, report
