"""Loss-threshold membership inference.

A record is flagged as a training member when the model's loss on it is
strictly below the mean loss over the known members. The attack success risk
is TPR - FPR.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import per_record_losses


@dataclass(frozen=True)
class AttackResult:
    tpr: float
    fpr: float
    asr: float
    member_count: int
    nonmember_count: int
    avg_train_loss: float


def per_record_loss(params, spec, record) -> float:
    window, states = record
    return float(per_record_losses(params, spec, np.asarray(window)[None, :],
                                   np.asarray(states)[None, ...])[0])


def balance(n_members: int, n_nonmembers: int, seed):
    """Index subsets of equal size, subsampling whichever pool is larger."""
    n = min(n_members, n_nonmembers)
    rng = np.random.default_rng(seed)
    m = np.sort(rng.choice(n_members, n, replace=False)) if n_members > n else np.arange(n)
    nm = np.sort(rng.choice(n_nonmembers, n, replace=False)) if n_nonmembers > n else np.arange(n)
    return m, nm


def attack_from_losses(member_losses, nonmember_losses) -> AttackResult:
    member_losses = np.asarray(member_losses, dtype=np.float64)
    nonmember_losses = np.asarray(nonmember_losses, dtype=np.float64)
    if member_losses.size == 0 or nonmember_losses.size == 0:
        raise ValueError("member and non-member sets must be non-empty")
    threshold = float(member_losses.mean())
    tpr = float(np.count_nonzero(member_losses < threshold)) / member_losses.size
    fpr = float(np.count_nonzero(nonmember_losses < threshold)) / nonmember_losses.size
    return AttackResult(tpr, fpr, tpr - fpr, member_losses.size, nonmember_losses.size, threshold)


def membership_attack(params, spec, members, nonmembers, seed=0) -> AttackResult:
    """``members`` / ``nonmembers`` are ``(windows, states)`` array pairs."""
    Xm, Ym = members
    Xn, Yn = nonmembers
    if len(Xm) == 0 or len(Xn) == 0:
        raise ValueError("member and non-member sets must be non-empty")
    mi, ni = balance(len(Xm), len(Xn), seed)
    lm = per_record_losses(params, spec, np.asarray(Xm)[mi], np.asarray(Ym)[mi])
    ln = per_record_losses(params, spec, np.asarray(Xn)[ni], np.asarray(Yn)[ni])
    return attack_from_losses(lm, ln)


def attack_client(params, spec, dataset, seed=0) -> AttackResult:
    """Training windows as members, held-out test windows as non-members."""
    return membership_attack(params, spec, dataset.part("train"), dataset.part("test"), seed)


def mean_attack(results) -> dict[str, float]:
    results = list(results)
    return {
        "asr": float(np.mean([r.asr for r in results])),
        "tpr": float(np.mean([r.tpr for r in results])),
        "fpr": float(np.mean([r.fpr for r in results])),
    }
