from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UsageError


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions.

    ``done`` marks true terminations only; episodes cut by a time limit or
    path end are stored with ``done=False`` so their values bootstrap.
    """

    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise UsageError("replay capacity must be positive")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros(capacity)
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.ptr = 0
        self.size = 0
        self.total_added = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, done):
        i = self.ptr
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.total_added += 1

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if batch_size > self.size:
            raise UsageError(f"batch of {batch_size} requested from a buffer holding {self.size}")
        return rng.integers(0, self.size, batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = self.sample_indices(batch_size, rng)
        return Batch(self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.done[idx])

    def __getstate__(self):
        state = self.__dict__.copy()
        n = self.size
        for k in ("obs", "next_obs", "action", "reward", "done"):
            state[k] = state[k][:n].copy()
        return state

    def __setstate__(self, state):
        n, cap = state["size"], state["capacity"]
        for k in ("obs", "next_obs"):
            full = np.zeros((cap, state["obs_dim"]))
            full[:n] = state[k]
            state[k] = full
        for k in ("action", "reward", "done"):
            full = np.zeros(cap)
            full[:n] = state[k]
            state[k] = full
        self.__dict__.update(state)
