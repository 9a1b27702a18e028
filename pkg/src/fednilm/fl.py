"""Federated training loop: broadcast, local SGD on every client, aggregate.

FedAvg and FedProx share the client loop; FedProx adds ``mu * (w - w_round)``
to each batch gradient. Local-only and centralized baselines reuse the same
loop on one dataset.

Clients may train on a thread pool between the broadcast and the aggregation;
every client owns its parameters and RNG streams, so the result is identical
to sequential execution.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dp as dpmod
from .data import ClientDataset, pool_datasets
from .errors import ConfigError, DataError
from .metrics import average_scores, evaluate
from .nn import ModelParams, NetworkSpec, OptimState, loss_and_grad, per_record_losses, sgd_step

log = logging.getLogger(__name__)


@dataclass
class FLConfig:
    global_rounds: int = 10
    local_epochs: int = 8
    batch_size: int = 32
    client_count: int = 9
    lr: float = 1e-4
    momentum: float = 0.5
    mu: float = 0.01
    aggregation: str = "uniform"
    strategy: str = "fedavg"
    centralized_epochs: int = 80

    def validate(self) -> "FLConfig":
        if self.global_rounds < 1:
            raise ConfigError("global_rounds must be >= 1")
        if self.local_epochs < 1 or self.batch_size < 1 or self.client_count < 1:
            raise ConfigError("local_epochs, batch_size and client_count must be >= 1")
        if self.mu < 0:
            raise ConfigError("mu must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.aggregation not in ("uniform", "weighted"):
            raise ConfigError(f"aggregation must be 'uniform' or 'weighted', got {self.aggregation!r}")
        if self.strategy not in ("fedavg", "fedprox"):
            raise ConfigError(f"strategy must be 'fedavg' or 'fedprox', got {self.strategy!r}")
        if self.centralized_epochs < 1:
            raise ConfigError("centralized_epochs must be >= 1")
        return self


@dataclass
class ClientState:
    client_id: int
    params: ModelParams
    opt: OptimState
    dataset: ClientDataset
    seed: int
    spec: NetworkSpec
    last_loss: float = math.nan


@dataclass
class GlobalState:
    round: int
    params: ModelParams
    history: list = field(default_factory=list)


def make_clients(spec, init_params, datasets, seeds, lr=1e-4, momentum=0.5) -> list[ClientState]:
    return [
        ClientState(d.client_id, init_params.copy(), OptimState.zeros_like(init_params, lr, momentum),
                    d, int(seeds[d.client_id]), spec)
        for d in sorted(datasets, key=lambda d: d.client_id)
    ]


def broadcast(global_state: GlobalState, clients) -> list[ClientState]:
    """Copy the global model into every client and zero its momentum buffer."""
    for c in clients:
        global_state.params.check_compatible(c.params)
        c.params = global_state.params.copy()
        c.opt = OptimState(np.zeros(len(c.params)), c.opt.lr, c.opt.momentum)
    return clients


def _train_loop(params, opt, spec, dataset, seed, epochs, batch_size, round_idx,
                mu=0.0, anchor=None, noise_hook=None):
    X, Y = dataset.part("train")
    n = X.shape[0]
    if n == 0:
        raise DataError(f"client {dataset.client_id} has no training windows")
    losses = []
    for epoch in range(epochs):
        order = np.random.default_rng([seed, round_idx, epoch]).permutation(n)
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            loss, g = loss_and_grad(params, spec, X[idx], Y[idx], train_mode=True,
                                    seed=[seed, round_idx, epoch, b, 1])
            if noise_hook is not None:
                g = noise_hook(g, (round_idx, epoch, b))
            if mu:
                g.values = g.values + mu * (params.values - anchor.values)
            params = sgd_step(params, g, opt)
            losses.append(loss)
    return params, float(np.mean(losses))


def local_train_fedavg(client: ClientState, E: int, B_L: int, noise_hook=None, round_idx=0):
    params, loss = _train_loop(client.params, client.opt, client.spec, client.dataset, client.seed,
                               E, B_L, round_idx, noise_hook=noise_hook)
    client.params = params
    client.last_loss = loss
    return params


def local_train_fedprox(client: ClientState, E: int, B_L: int, mu: float, anchor: ModelParams,
                        noise_hook=None, round_idx=0):
    """Local SGD on ``loss + mu/2 * |w - anchor|^2``.

    A noise hook sees only the data gradient; the proximal term is added after.
    """
    anchor.check_compatible(client.params)
    params, loss = _train_loop(client.params, client.opt, client.spec, client.dataset, client.seed,
                               E, B_L, round_idx, mu=mu, anchor=anchor, noise_hook=noise_hook)
    client.params = params
    client.last_loss = loss
    return params


def aggregate(global_state: GlobalState, client_params, weights="uniform") -> GlobalState:
    """Average client models into a new global state.

    ``weights`` is ``"uniform"`` or a sequence of per-client sample counts.
    The mean is formed as ``w_0 + sum_n p_n (w_n - w_0)`` so that identical
    client models average back to themselves bit-for-bit.
    """
    client_params = list(client_params)
    if not client_params:
        raise ValueError("cannot aggregate an empty client list")
    ref = client_params[0]
    for p in client_params[1:]:
        ref.check_compatible(p)
    global_state.params.check_compatible(ref)
    N = len(client_params)
    if isinstance(weights, str):
        if weights != "uniform":
            raise ValueError(f"unknown weighting {weights!r}")
        coef = np.full(N, 1.0 / N)
    else:
        counts = np.asarray(weights, dtype=np.float64)
        if counts.shape != (N,) or np.any(counts < 0) or counts.sum() <= 0:
            raise ValueError("weights must be one non-negative count per client")
        coef = counts / counts.sum()
    acc = np.zeros_like(ref.values)
    for c, p in zip(coef, client_params):
        acc += c * (p.values - ref.values)
    new = ModelParams(ref.values + acc, ref.manifest)
    return GlobalState(global_state.round + 1, new, global_state.history)


def _validation(params, spec, datasets):
    losses, tables = [], []
    for d in datasets:
        X, Y = d.part("val")
        if X.shape[0] == 0:
            continue
        losses.append(float(per_record_losses(params, spec, X, Y).mean()))
        tables.append(evaluate(params, spec, d, "val"))
    if not tables:
        return math.nan, math.nan
    avg = average_scores(tables)
    return float(np.mean(losses)), float(np.mean([avg[a]["f1"] for a in avg]))


def _map(fn, items, workers):
    if workers is None or workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_federated(config: FLConfig, spec: NetworkSpec, init_params: ModelParams, datasets,
                  dp: dpmod.PrivacyConfig | None = None, client_seeds=None, dp_seed=0,
                  workers=None, validate_each_round=True, round_callback=None):
    """Run ``config.global_rounds`` rounds of federated training.

    Returns ``(GlobalState, PrivacyLedger | None, records)`` where ``records``
    are per-round dicts (one per client plus one ``"global"`` row).
    ``round_callback(round, global_params, {client_id: params})`` is invoked
    after each aggregation.
    """
    config.validate()
    datasets = sorted(datasets, key=lambda d: d.client_id)
    if not datasets:
        raise DataError("no clients")
    ids = [d.client_id for d in datasets]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate client ids")
    if client_seeds is None:
        client_seeds = {cid: cid for cid in ids}
    dp = dp or dpmod.PrivacyConfig()
    dp.validate()
    N = len(datasets)
    clients = make_clients(spec, init_params, datasets, client_seeds, config.lr, config.momentum)
    state = GlobalState(0, init_params.copy())
    ledger = dpmod.new_ledger(dp) if dp.mode != "none" else None
    sigma = dp.resolved_sigma() if dp.mode != "none" else None
    noisy = dp.mode != "none" and not dp.noise_disabled
    weights = "uniform" if config.aggregation == "uniform" else None
    records = []

    for r in range(1, config.global_rounds + 1):
        if noisy:
            spent = dpmod.privacy_account(ledger, dp.delta, sigma, r)
            if ledger.exhausted:
                log.info("privacy budget exhausted before round %d (eps=%.4g)", r, spent)
                break
        anchor = state.params
        broadcast(state, clients)

        def work(client, r=r, anchor=anchor):
            # both private modes clip every batch gradient at C; local mode also adds noise
            hook = None
            if dp.mode == "local" and not dp.noise_disabled:
                def hook(g, key, cid=client.client_id):
                    return dpmod.ldpfl_gradient_hook(g, dp, N, [dp_seed, 2, cid, *key])
            elif dp.mode != "none":
                def hook(g, key):
                    return dpmod.clip(g, dp.clip_norm)
            if config.strategy == "fedprox":
                local_train_fedprox(client, config.local_epochs, config.batch_size, config.mu,
                                    anchor, hook, round_idx=r)
            else:
                local_train_fedavg(client, config.local_epochs, config.batch_size, hook, round_idx=r)
            return client

        clients = _map(work, clients, workers)
        if weights is None:
            w = [c.dataset.train_size for c in clients]
        else:
            w = weights
        state = aggregate(state, [c.params for c in clients], w)
        if noisy and dp.mode == "global":
            state.params = dpmod.gdpfl_aggregate_hook(state.params, dp, [dp_seed, 1, r])
        eps = ledger.epsilon_spent if ledger is not None else 0.0
        for c in clients:
            records.append({"round": r, "client_id": c.client_id, "train_loss": c.last_loss,
                            "val_loss": math.nan, "val_f1": math.nan, "epsilon_spent": eps})
        val_loss, val_f1 = (_validation(state.params, spec, datasets)
                            if validate_each_round else (math.nan, math.nan))
        records.append({"round": r, "client_id": "global",
                        "train_loss": float(np.mean([c.last_loss for c in clients])),
                        "val_loss": val_loss, "val_f1": val_f1, "epsilon_spent": eps})
        state.history.append(records[-1])
        if round_callback is not None:
            round_callback(r, state.params, {c.client_id: c.params for c in clients})
    return state, ledger, records


def run_centralized(config: FLConfig, spec: NetworkSpec, init_params: ModelParams, datasets,
                    seed=0, epochs=None) -> ModelParams:
    """Single model trained on the pooled training splits for ``centralized_epochs`` epochs."""
    config.validate()
    pooled = pool_datasets(list(datasets))
    if pooled.train_size == 0:
        raise DataError("pooled dataset has no training windows")
    opt = OptimState.zeros_like(init_params, config.lr, config.momentum)
    params, _ = _train_loop(init_params.copy(), opt, spec, pooled, int(seed),
                            epochs or config.centralized_epochs, config.batch_size, round_idx=0)
    return params


def run_local(config: FLConfig, spec: NetworkSpec, init_params: ModelParams, dataset,
              seed=0, epochs=None) -> ModelParams:
    """Train on one client's data alone."""
    return run_centralized(config, spec, init_params, [dataset], seed, epochs)
