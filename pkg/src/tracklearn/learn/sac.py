"""Soft actor-critic with a squashed Gaussian policy and gSDE exploration.

The policy mean comes from a tanh MLP. Exploration noise is a linear map of
the actor's last hidden features, ``eps = phi(s) @ W_noise``, with
``W_noise`` drawn once per episode; the induced per-state std is
``sigma(s) = sqrt(sum_j phi_j(s)^2 exp(log_std_j)^2 + 1e-6)``.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import LoadError
from .nn import Adam, Mlp
from .replay import Batch

LOG_2PI = math.log(2.0 * math.pi)
VAR_EPS = 1e-6
SQUASH_EPS = 1e-6
CHECKPOINT_FORMAT = "tracklearn-sac/1"


@dataclass(frozen=True)
class SacConfig:
    obs_dim: int = 16
    gamma: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    batch_size: int = 256
    buffer_size: int = 300_000
    warmup_steps: int = 5000
    target_entropy: float = -1.0
    actor_hidden: tuple = (64, 64, 64, 64)
    critic_hidden: tuple = (64, 64, 64)
    log_std_init: float = -3.0
    init_alpha: float = 0.1
    learn_alpha: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "actor_hidden", tuple(int(h) for h in self.actor_hidden))
        object.__setattr__(self, "critic_hidden", tuple(int(h) for h in self.critic_hidden))


@dataclass
class LossReport:
    q1_loss: float
    q2_loss: float
    actor_loss: float
    alpha_loss: float
    alpha: float
    mean_q: float


@dataclass
class PolicyOutput:
    mean: np.ndarray  # pre-squash mean, shape (N,)
    phi: np.ndarray  # last hidden features, shape (N, H)
    sigma: np.ndarray  # induced std, shape (N,)
    cache: object = field(repr=False, default=None)


def gaussian_log_prob(u, mean, sigma):
    z = (u - mean) / sigma
    return -0.5 * z * z - np.log(sigma) - 0.5 * LOG_2PI


def squash_correction(a):
    return np.log(1.0 - a * a + SQUASH_EPS)


class SacAgent:
    def __init__(self, cfg: SacConfig = SacConfig()):
        self.cfg = cfg
        init_seq, run_seq = np.random.SeedSequence(cfg.seed).spawn(2)
        init_rng = np.random.default_rng(init_seq)
        self.rng = np.random.default_rng(run_seq)
        self.actor = Mlp((cfg.obs_dim, *cfg.actor_hidden, 1), init_rng)
        self.log_std = np.full((cfg.actor_hidden[-1], 1), float(cfg.log_std_init))
        self.q1 = Mlp((cfg.obs_dim + 1, *cfg.critic_hidden, 1), init_rng)
        self.q2 = Mlp((cfg.obs_dim + 1, *cfg.critic_hidden, 1), init_rng)
        self.q1_target = copy.deepcopy(self.q1)
        self.q2_target = copy.deepcopy(self.q2)
        self.log_alpha = np.array([math.log(cfg.init_alpha)]) if cfg.init_alpha > 0 else np.array([-math.inf])
        self.actor_opt = Adam(self.actor.params + [self.log_std])
        self.critic_opt = Adam(self.q1.params + self.q2.params)
        self.alpha_opt = Adam([self.log_alpha])
        self.noise_W = np.zeros_like(self.log_std)
        self.updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    # policy -----------------------------------------------------------------

    def policy(self, obs) -> PolicyOutput:
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        mu, cache = self.actor.forward(obs)
        phi = cache.activations[-1]
        var = (phi * phi) @ np.exp(2.0 * self.log_std)
        return PolicyOutput(mu[:, 0], phi, np.sqrt(var[:, 0] + VAR_EPS), cache)

    def noise_reset(self, rng: np.random.Generator):
        """Draw the exploration matrix held for the coming episode."""
        self.noise_W = rng.standard_normal(self.log_std.shape) * np.exp(self.log_std)

    def policy_sample(self, obs, deterministic: bool = False):
        """Action in (-1, 1) and its log-density, for one or many observations."""
        single = np.asarray(obs).ndim == 1
        p = self.policy(obs)
        u = p.mean if deterministic else p.mean + (p.phi @ self.noise_W)[:, 0]
        a = np.tanh(u)
        logp = gaussian_log_prob(u, p.mean, p.sigma) - squash_correction(a)
        if single:
            return float(a[0]), float(logp[0])
        return a, logp

    def act(self, obs, deterministic: bool = False) -> float:
        return self.policy_sample(obs, deterministic)[0]

    def rsample(self, obs, xi):
        """Reparameterised draw ``u = mean + sigma * xi`` from the marginal policy."""
        p = self.policy(obs)
        u = p.mean + p.sigma * xi
        a = np.tanh(u)
        logp = gaussian_log_prob(u, p.mean, p.sigma) - squash_correction(a)
        return a, logp, u, p

    # losses -----------------------------------------------------------------

    def critic_targets(self, batch: Batch, xi_next) -> np.ndarray:
        a2, logp2, _, _ = self.rsample(batch.next_obs, xi_next)
        x2 = np.column_stack([batch.next_obs, a2])
        q_next = np.minimum(self.q1_target(x2)[:, 0], self.q2_target(x2)[:, 0])
        return batch.reward + self.cfg.gamma * (1.0 - batch.done) * (q_next - self.alpha * logp2)

    def critic_loss_grads(self, batch: Batch, y):
        """Half mean-squared TD error of each critic, with gradients for both."""
        x = np.column_stack([batch.obs, batch.action])
        n = x.shape[0]
        losses, grads, qs = [], [], []
        for q in (self.q1, self.q2):
            out, cache = q.forward(x)
            err = out[:, 0] - y
            losses.append(0.5 * float(np.mean(err * err)))
            g, _ = q.backward(cache, (err / n)[:, None])
            grads += g
            qs.append(out[:, 0])
        return losses, grads, qs

    def actor_loss_grads(self, obs, xi, alpha: float):
        """``mean(alpha * logp - min(Q1, Q2))`` for reparameterised actions.

        Returns ``(loss, grads, logp)`` where grads cover the actor weights
        followed by ``log_std``.
        """
        obs = np.atleast_2d(obs)
        n = obs.shape[0]
        a, logp, u, p = self.rsample(obs, xi)
        x = np.column_stack([obs, a])
        q1, c1 = self.q1.forward(x)
        q2, c2 = self.q2.forward(x)
        use1 = q1[:, 0] <= q2[:, 0]
        qmin = np.where(use1, q1[:, 0], q2[:, 0])
        loss = float(np.mean(alpha * logp - qmin))

        w1 = use1.astype(float) / n
        _, dx1 = self.q1.backward(c1, -w1[:, None], param_grads=False)
        _, dx2 = self.q2.backward(c2, (w1 - 1.0 / n)[:, None], param_grads=False)
        dL_da = dx1[:, -1] + dx2[:, -1]
        one_m_a2 = 1.0 - a * a
        # d/du of -log(1 - tanh(u)^2 + eps)
        dsquash = 2.0 * a * one_m_a2 / (one_m_a2 + SQUASH_EPS)
        dL_du = dL_da * one_m_a2 + (alpha / n) * dsquash
        dL_dmean = dL_du
        dL_dsigma = dL_du * xi - (alpha / n) / p.sigma

        s2 = np.exp(2.0 * self.log_std)  # (H, 1)
        phi = p.phi
        coef = (dL_dsigma / p.sigma)[:, None]
        g_log_std = ((phi * phi) * coef).sum(axis=0)[:, None] * s2
        d_phi = coef * phi * s2[:, 0][None, :]
        grads, _ = self.actor.backward(p.cache, dL_dmean[:, None], d_last_hidden=d_phi)
        return loss, grads + [g_log_std], logp

    def alpha_loss_grad(self, logp):
        target = logp + self.cfg.target_entropy
        loss = float(-self.log_alpha[0] * np.mean(target))
        return loss, np.array([-np.mean(target)])

    # update -----------------------------------------------------------------

    def polyak_update(self, tau: float | None = None):
        tau = self.cfg.tau if tau is None else tau
        for net, tgt in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
            for p, pt in zip(net.params, tgt.params):
                pt *= 1.0 - tau
                pt += tau * p
            tgt.touch()

    def update(self, batch: Batch, lr: float) -> LossReport:
        n = batch.obs.shape[0]
        alpha = self.alpha
        y = self.critic_targets(batch, self.rng.standard_normal(n))
        (l1, l2), cgrads, qs = self.critic_loss_grads(batch, y)
        self.critic_opt.step(cgrads, lr)
        self.q1.touch()
        self.q2.touch()

        actor_loss, agrads, logp = self.actor_loss_grads(batch.obs, self.rng.standard_normal(n), alpha)
        self.actor_opt.step(agrads, lr)
        self.actor.touch()

        alpha_loss = 0.0
        if self.cfg.learn_alpha:
            alpha_loss, g = self.alpha_loss_grad(logp)
            self.alpha_opt.step([g], lr)

        self.polyak_update()
        self.updates += 1
        return LossReport(l1, l2, actor_loss, alpha_loss, self.alpha, float(np.mean(qs[0])))

    # snapshots --------------------------------------------------------------

    def clone(self) -> "SacAgent":
        return copy.deepcopy(self)

    def _named_arrays(self) -> dict:
        out = {}
        for name in ("actor", "q1", "q2", "q1_target", "q2_target"):
            for i, p in enumerate(getattr(self, name).params):
                out[f"{name}/{i}"] = p
        out["log_std"] = self.log_std
        out["log_alpha"] = self.log_alpha
        out["noise_W"] = self.noise_W
        for name in ("actor_opt", "critic_opt", "alpha_opt"):
            for i, p in enumerate(getattr(self, name).state_arrays()):
                out[f"{name}/{i}"] = p
        return out

    def same_weights(self, other: "SacAgent") -> bool:
        a, b = self._named_arrays(), other._named_arrays()
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def save_checkpoint(agent: SacAgent, path, obs_channels, extra: dict | None = None) -> None:
    """Write every parameter, optimizer moment and RNG state to one ``.npz``."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(agent.cfg),
        "obs_channels": list(obs_channels),
        "updates": agent.updates,
        "opt_steps": [agent.actor_opt.t, agent.critic_opt.t, agent.alpha_opt.t],
        "rng_state": agent.rng.bit_generator.state,
        "extra": extra or {},
    }
    arrays = {k.replace("/", "__"): v for k, v in agent._named_arrays().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def channel_diff(expected, found) -> str:
    expected, found = list(expected), list(found)
    missing = [c for c in expected if c not in found]
    extra = [c for c in found if c not in expected]
    parts = []
    if missing:
        parts.append(f"missing channels {missing}")
    if extra:
        parts.append(f"unexpected channels {extra}")
    if not parts:
        moved = [f"{c}@{found.index(c)}->{i}" for i, c in enumerate(expected) if found.index(c) != i]
        parts.append(f"reordered channels {moved}")
    return "; ".join(parts)


def load_checkpoint(path, obs_channels=None):
    """Load an agent saved by :func:`save_checkpoint`. Returns ``(agent, meta)``."""
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            arrays = {k.replace("__", "/"): data[k] for k in data.files if k != "__meta__"}
    except (OSError, ValueError, KeyError) as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise LoadError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    if obs_channels is not None and list(obs_channels) != meta["obs_channels"]:
        raise LoadError(f"{path}: observation layout mismatch: {channel_diff(obs_channels, meta['obs_channels'])}")
    cfg = SacConfig(**meta["config"])
    agent = SacAgent(cfg)
    named = agent._named_arrays()
    if named.keys() != arrays.keys():
        raise LoadError(f"{path}: parameter set does not match the configured network shapes")
    for k, dst in named.items():
        if dst.shape != arrays[k].shape:
            raise LoadError(f"{path}: shape mismatch for {k}: {arrays[k].shape} vs {dst.shape}")
        dst[...] = arrays[k]
    for net in (agent.actor, agent.q1, agent.q2, agent.q1_target, agent.q2_target):
        net.touch()
    agent.actor_opt.t, agent.critic_opt.t, agent.alpha_opt.t = meta["opt_steps"]
    agent.updates = meta["updates"]
    agent.rng.bit_generator.state = meta["rng_state"]
    return agent, meta
