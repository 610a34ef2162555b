"""Shared-trunk policy/value MLP in plain numpy.

Two tanh hidden layers feed a masked categorical policy head and a scalar
value head.  Backpropagation is written out by hand; ``loss_and_grads``
returns the gradient of

    clip_loss + value_coef * value_loss - entropy_coef * entropy - guide_coef * guide

where ``guide`` is the mean log-probability of the teacher's actions.
Masking restricts the softmax to legal entries, so illegal actions get a
probability of exactly zero and no gradient.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wp", "bp", "Wv", "bv")
CHECKPOINT_VERSION = 1


@dataclass
class PolicyOutput:
    log_probs: np.ndarray  # -inf on illegal actions
    value: float
    entropy: float

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


@dataclass
class Minibatch:
    obs: np.ndarray
    mask: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    teacher_actions: np.ndarray

    def __len__(self):
        return len(self.actions)

    def subset(self, idx) -> "Minibatch":
        return Minibatch(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


@dataclass
class LossSpec:
    clip_eps: float = 0.2
    clip_coef: float = 1.0
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    guide_coef: float = 0.0


def orthogonal(shape, gain, rng) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class PolicyNet:
    """Parameters plus Adam state.  ``params`` maps names in PARAM_NAMES to arrays."""

    def __init__(self, obs_dim: int, action_dim: int, hidden: int = 128, seed: int = 0,
                 params: dict | None = None):
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self.hidden = int(hidden)
        if params is None:
            rng = np.random.default_rng(seed)
            h = self.hidden
            params = {
                "W1": orthogonal((obs_dim, h), 1.0, rng), "b1": np.zeros(h),
                "W2": orthogonal((h, h), 1.0, rng), "b2": np.zeros(h),
                "Wp": orthogonal((h, action_dim), 0.01, rng), "bp": np.zeros(action_dim),
                "Wv": orthogonal((h, 1), 1.0, rng), "bv": np.zeros(1),
            }
        self.params = params
        self.adam_m = {k: np.zeros_like(v) for k, v in params.items()}
        self.adam_v = {k: np.zeros_like(v) for k, v in params.items()}
        self.adam_t = 0

    # -- forward -------------------------------------------------------------

    def _check(self, obs, mask):
        if obs.shape[-1] != self.obs_dim:
            raise ShapeMismatch(f"observation width {obs.shape[-1]} != network input {self.obs_dim}")
        if mask.shape[-1] != self.action_dim:
            raise ShapeMismatch(f"mask width {mask.shape[-1]} != action width {self.action_dim}")

    def forward_batch(self, obs, mask):
        """Return (log_probs, values, entropy, cache) for a batch."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        mask = np.atleast_2d(np.asarray(mask, dtype=bool))
        self._check(obs, mask)
        if not mask.any(axis=1).all():
            raise ValueError("every mask needs at least one legal action")
        p = self.params
        h1 = np.tanh(obs @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        logits = h2 @ p["Wp"] + p["bp"]
        values = (h2 @ p["Wv"] + p["bv"])[:, 0]
        z = np.where(mask, logits, -np.inf)
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
        logp = z - lse
        probs = np.exp(logp)
        safe = np.where(mask, logp, 0.0)
        entropy = -(probs * safe).sum(axis=1)
        cache = (obs, mask, h1, h2, probs, safe, entropy)
        return logp, values, entropy, cache

    def forward(self, obs, mask) -> PolicyOutput:
        logp, values, entropy, _ = self.forward_batch(obs, mask)
        return PolicyOutput(logp[0], float(values[0]), float(entropy[0]))

    def sample(self, obs, mask, rng):
        """Draw a legal action; returns (action, log_prob, value)."""
        out = self.forward(obs, mask)
        cdf = np.cumsum(out.probs)
        a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        # first index with cdf > u always has positive mass; clamp the u == cdf[-1] rounding edge
        a = min(a, int(np.flatnonzero(out.probs)[-1]))
        return a, float(out.log_probs[a]), out.value

    def greedy(self, obs, mask) -> int:
        return int(np.argmax(self.forward(obs, mask).log_probs))

    # -- losses and gradients --------------------------------------------------

    def loss_and_grads(self, batch: Minibatch, spec: LossSpec, forward=None):
        """Total loss, per-term statistics and parameter gradients for ``batch``.

        ``forward`` may carry the result of ``forward_batch`` on the same batch
        and parameters to avoid recomputing it.
        """
        if forward is None:
            forward = self.forward_batch(batch.obs, batch.mask)
        logp, values, entropy, cache = forward
        obs, mask, h1, h2, probs, safe, _ = cache
        B = len(batch)
        rows = np.arange(B)
        acts = batch.actions.astype(int)
        teach = batch.teacher_actions.astype(int)

        new_lp = logp[rows, acts]
        ratio = np.exp(new_lp - batch.old_log_probs)
        adv = batch.advantages
        s1 = ratio * adv
        s2 = np.clip(ratio, 1.0 - spec.clip_eps, 1.0 + spec.clip_eps) * adv
        clip_loss = -np.mean(np.minimum(s1, s2))
        value_loss = np.mean((values - batch.returns) ** 2)
        mean_entropy = np.mean(entropy)
        teacher_lp = logp[rows, teach]
        guide = np.mean(teacher_lp)

        total = (spec.clip_coef * clip_loss + spec.value_coef * value_loss
                 - spec.entropy_coef * mean_entropy - spec.guide_coef * guide)

        # d total / d logits (B, A); illegal columns stay zero because probs = 0 there
        g = np.zeros_like(probs)
        active = s1 <= s2
        dlp = np.where(active, -ratio * adv, 0.0) * spec.clip_coef / B
        g[rows, acts] += dlp
        g -= dlp[:, None] * probs
        g += (spec.entropy_coef / B) * probs * (safe + entropy[:, None])
        coef = -spec.guide_coef / B
        g[rows, teach] += coef
        g -= coef * probs
        g = np.where(mask, g, 0.0)
        dv = spec.value_coef * 2.0 * (values - batch.returns) / B

        p = self.params
        grads = {
            "Wp": h2.T @ g, "bp": g.sum(axis=0),
            "Wv": h2.T @ dv[:, None], "bv": np.array([dv.sum()]),
        }
        dh2 = g @ p["Wp"].T + dv[:, None] @ p["Wv"].T
        da2 = dh2 * (1.0 - h2 ** 2)
        grads["W2"] = h1.T @ da2
        grads["b2"] = da2.sum(axis=0)
        da1 = (da2 @ p["W2"].T) * (1.0 - h1 ** 2)
        grads["W1"] = obs.T @ da1
        grads["b1"] = da1.sum(axis=0)

        log_ratio = new_lp - batch.old_log_probs
        stats = {
            "loss": float(total),
            "policy_loss": float(clip_loss),
            "value_loss": float(value_loss),
            "entropy": float(mean_entropy),
            "guide_loss": float(guide),
            "c_teacher": float(np.mean(np.exp(teacher_lp))),
            "kl": float(np.mean(np.expm1(log_ratio) - log_ratio)),
            "clip_frac": float(np.mean(np.abs(ratio - 1.0) > spec.clip_eps)),
        }
        return total, stats, grads

    # -- optimisation ----------------------------------------------------------

    def optimizer_step(self, grads: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
        """One Adam update with bias correction."""
        self.adam_t += 1
        t = self.adam_t
        for k in PARAM_NAMES:
            g = grads[k]
            self.adam_m[k] = beta1 * self.adam_m[k] + (1 - beta1) * g
            self.adam_v[k] = beta2 * self.adam_v[k] + (1 - beta2) * g * g
            m_hat = self.adam_m[k] / (1 - beta1 ** t)
            v_hat = self.adam_v[k] / (1 - beta2 ** t)
            self.params[k] = self.params[k] - lr * m_hat / (np.sqrt(v_hat) + eps)

    def copy(self) -> "PolicyNet":
        net = PolicyNet(self.obs_dim, self.action_dim, self.hidden,
                        params={k: v.copy() for k, v in self.params.items()})
        net.adam_m = {k: v.copy() for k, v in self.adam_m.items()}
        net.adam_v = {k: v.copy() for k, v in self.adam_v.items()}
        net.adam_t = self.adam_t
        return net

    # -- persistence -----------------------------------------------------------

    def save(self, path, **meta) -> None:
        """Write parameters, Adam state and ``meta`` (JSON-serialisable) to an .npz file."""
        header = {"version": CHECKPOINT_VERSION, "obs_dim": self.obs_dim,
                  "action_dim": self.action_dim, "hidden": self.hidden,
                  "adam_t": self.adam_t, "meta": meta}
        arrays = {f"param_{k}": v for k, v in self.params.items()}
        arrays.update({f"adam_m_{k}": v for k, v in self.adam_m.items()})
        arrays.update({f"adam_v_{k}": v for k, v in self.adam_v.items()})
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        arrays["header"] = np.array(json.dumps(header, sort_keys=True))
        # fixed entry timestamps keep identical checkpoints byte-identical
        with zipfile.ZipFile(tmp, "w", zipfile.ZIP_STORED) as zf:
            for name in sorted(arrays):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)),
                            buf.getvalue())
        tmp.replace(path)

    @classmethod
    def load(cls, path, obs_dim: int | None = None, action_dim: int | None = None):
        """Read a checkpoint; returns (net, meta).  Validates dims when given."""
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header.get("version") != CHECKPOINT_VERSION:
                raise ShapeMismatch(f"unsupported checkpoint version {header.get('version')}")
            if obs_dim is not None and header["obs_dim"] != obs_dim:
                raise ShapeMismatch(
                    f"checkpoint expects {header['obs_dim']} observation features, scenario has {obs_dim}")
            if action_dim is not None and header["action_dim"] != action_dim:
                raise ShapeMismatch(
                    f"checkpoint has {header['action_dim']} actions, scenario needs {action_dim}")
            params = {k: data[f"param_{k}"].copy() for k in PARAM_NAMES}
            net = cls(header["obs_dim"], header["action_dim"], header["hidden"], params=params)
            net.adam_m = {k: data[f"adam_m_{k}"].copy() for k in PARAM_NAMES}
            net.adam_v = {k: data[f"adam_v_{k}"].copy() for k in PARAM_NAMES}
            net.adam_t = int(header["adam_t"])
        return net, header["meta"]


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))


def clip_by_global_norm(grads: dict, max_norm: float) -> dict:
    norm = global_norm(grads)
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        return {k: g * scale for k, g in grads.items()}
    return grads
