"""Central finite-difference checks shared by the unit and acceptance suites."""

import numpy as np

from tracklearn.learn.nn import Mlp
from tracklearn.learn.replay import Batch
from tracklearn.learn.sac import SacAgent, SacConfig

H = 1e-5


def rel_error(analytic, numeric):
    a, n = np.ravel(analytic), np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-8))


def fd_error(loss, arrays, grads, rng, max_coords=12, touch=()):
    """Worst relative error over ``arrays``, probing up to ``max_coords`` entries each."""
    worst = 0.0
    for arr, g in zip(arrays, grads):
        flat = arr.reshape(-1)
        idx = rng.choice(flat.size, min(max_coords, flat.size), replace=False)
        num = np.empty(idx.size)
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + H
            for net in touch:
                net.touch()
            up = loss()
            flat[i] = old - H
            for net in touch:
                net.touch()
            down = loss()
            flat[i] = old
            for net in touch:
                net.touch()
            num[j] = (up - down) / (2 * H)
        worst = max(worst, rel_error(np.ravel(g)[idx], num))
    return worst


def random_agent(rng):
    obs_dim = int(rng.integers(2, 9))
    cfg = SacConfig(obs_dim=obs_dim,
                    actor_hidden=tuple(int(w) for w in rng.integers(2, 13, int(rng.integers(1, 5)))),
                    critic_hidden=tuple(int(w) for w in rng.integers(2, 13, int(rng.integers(1, 4)))),
                    gamma=float(rng.uniform(0.5, 0.999)), log_std_init=float(rng.uniform(-3, 0)),
                    init_alpha=float(rng.uniform(0.01, 1.0)), seed=int(rng.integers(2**31)))
    agent = SacAgent(cfg)
    agent.log_std += rng.normal(0, 0.3, agent.log_std.shape)
    return agent


def random_batch(rng, obs_dim, n):
    return Batch(rng.normal(size=(n, obs_dim)), rng.uniform(-0.99, 0.99, n), rng.normal(size=n),
                 rng.normal(size=(n, obs_dim)), (rng.random(n) < 0.3).astype(float))


def mlp_error(rng):
    sizes = [int(rng.integers(1, 10))] + [int(w) for w in rng.integers(1, 10, int(rng.integers(1, 5)))]
    net = Mlp(sizes, rng)
    n = int(rng.integers(1, 8))
    x = rng.normal(size=(n, sizes[0]))
    c = rng.normal(size=(n, sizes[-1]))
    has_side = len(sizes) > 2
    d = rng.normal(size=(n, sizes[-2])) if has_side else None

    def loss():
        y, cache = net.forward(x)
        out = float(np.sum(c * y))
        if has_side:
            out += float(np.sum(d * net.last_hidden(cache)))
        return out

    _, cache = net.forward(x)
    grads, dx = net.backward(cache, c, d_last_hidden=d)
    err = fd_error(loss, net.params, grads, rng, touch=(net,))
    return max(err, fd_error(loss, [x], [dx], rng))


def critic_error(rng):
    agent = random_agent(rng)
    batch = random_batch(rng, agent.cfg.obs_dim, int(rng.integers(1, 12)))
    y = agent.critic_targets(batch, rng.standard_normal(batch.obs.shape[0]))
    _, grads, _ = agent.critic_loss_grads(batch, y)

    def loss():
        return sum(agent.critic_loss_grads(batch, y)[0])

    params = agent.q1.params + agent.q2.params
    return fd_error(loss, params, grads, rng, touch=(agent.q1, agent.q2))


def actor_error(rng):
    agent = random_agent(rng)
    n = int(rng.integers(1, 12))
    obs = rng.normal(size=(n, agent.cfg.obs_dim))
    xi = rng.standard_normal(n)
    alpha = agent.alpha
    _, grads, _ = agent.actor_loss_grads(obs, xi, alpha)

    def loss():
        return agent.actor_loss_grads(obs, xi, alpha)[0]

    return fd_error(loss, agent.actor.params + [agent.log_std], grads, rng, touch=(agent.actor,))


def alpha_error(rng):
    agent = random_agent(rng)
    logp = rng.normal(size=int(rng.integers(1, 12)))
    _, g = agent.alpha_loss_grad(logp)
    return fd_error(lambda: agent.alpha_loss_grad(logp)[0], [agent.log_alpha], [g], rng)


CHECKS = {"mlp": mlp_error, "critic": critic_error, "actor": actor_error, "temperature": alpha_error}
