"""MDP file format (JSON, or YAML with the same fields)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import yaml

from .errors import ValidationError
from .mdp import ROW_SUM_TOL, Mdp

REQUIRED = ("num_states", "num_actions", "transitions", "reward_means")


def _array(doc, key, shape):
    try:
        arr = np.array(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{key}: not a numeric nested array ({exc})") from exc
    if arr.shape != shape:
        raise ValidationError(f"{key}: expected shape {shape}, got {arr.shape}")
    return arr


def mdp_from_dict(doc: dict) -> Mdp:
    if not isinstance(doc, dict):
        raise ValidationError("MDP document must be a mapping")
    for key in REQUIRED:
        if key not in doc:
            raise ValidationError(f"missing field '{key}'")
    dist = doc.get("reward_distribution", "bernoulli")
    if str(dist).lower() != "bernoulli":
        raise ValidationError(f"reward_distribution '{dist}' is not supported (only bernoulli)")
    S, A = int(doc["num_states"]), int(doc["num_actions"])
    if S < 1 or A < 1:
        raise ValidationError("num_states and num_actions must be >= 1")
    p = _array(doc, "transitions", (S, A, S))
    r = _array(doc, "reward_means", (S, A))
    for x in range(S):
        for a in range(A):
            row = p[x, a]
            bad = np.flatnonzero((row < 0) | (row > 1) | ~np.isfinite(row))
            if bad.size:
                y = int(bad[0])
                raise ValidationError(f"transitions[{x}][{a}][{y}] = {row[y]!r} outside [0, 1]")
            if abs(row.sum() - 1.0) > ROW_SUM_TOL:
                raise ValidationError(f"transitions[{x}][{a}] sums to {row.sum()!r}, not 1")
            if not 0 <= r[x, a] <= 1:
                raise ValidationError(f"reward_means[{x}][{a}] = {r[x, a]!r} outside [0, 1]")
    se = doc.get("state_embedding")
    ae = doc.get("action_embedding")
    if se is not None:
        se = np.array(se, dtype=float)
        if se.ndim == 1:
            se = se.reshape(-1, 1)
        if se.ndim != 2 or se.shape[0] != S:
            raise ValidationError(f"state_embedding: expected {S} rows of equal dimension, got shape {se.shape}")
    if ae is not None:
        ae = np.array(ae, dtype=float)
        if ae.ndim == 1:
            ae = ae.reshape(-1, 1)
        if ae.ndim != 2 or ae.shape[0] != A:
            raise ValidationError(f"action_embedding: expected {A} rows of equal dimension, got shape {ae.shape}")
    return Mdp(p, r, se, ae)


def load_mdp(path) -> Mdp:
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: cannot parse ({exc})") from exc
    return mdp_from_dict(doc)


def mdp_to_dict(mdp: Mdp) -> dict:
    doc = {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "transitions": mdp.transitions.tolist(),
        "reward_means": mdp.reward_means.tolist(),
    }
    if mdp.state_embedding is not None:
        doc["state_embedding"] = mdp.state_embedding.tolist()
    if mdp.action_embedding is not None:
        doc["action_embedding"] = mdp.action_embedding.tolist()
    return doc


def save_mdp(mdp: Mdp, path) -> None:
    Path(path).write_text(json.dumps(mdp_to_dict(mdp), indent=1) + "\n")
