"""Two-agent soft phase synchronization under clock drift and message delay."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

DT = 1.0 / 50.0


def phase_rate(phi_ego, phi_peer, k):
    """Nominal rate 1 nudged toward the peer's last known phase."""
    return 1.0 + k * (phi_peer - phi_ego)


@dataclass
class SyncAgent:
    phi: float = 0.0
    drift: float = 0.0       # clock runs at 1 + drift
    k: float = 0.2
    correct: bool = True     # apply the feedback law (False: open loop)
    peer_phi: float = None   # latest delivered peer phase
    peer_seq: int = -1       # send order of that message

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("gain must be non-negative")
        if abs(self.drift) >= 0.1:
            raise ValueError("|drift| must be below 0.1")


@dataclass(frozen=True)
class ChannelModel:
    delay_lo: float = 0.0    # s
    delay_hi: float = 0.0
    drop: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.delay_lo <= self.delay_hi:
            raise ValueError("need 0 <= delay_lo <= delay_hi")
        if not 0.0 <= self.drop < 1.0:
            raise ValueError("drop probability must lie in [0, 1)")


@dataclass
class SyncTrace:
    time: np.ndarray
    phi: np.ndarray          # (steps + 1, 2)
    error: np.ndarray        # phi_0 - phi_1

    def steady_state_error(self, window=5.0):
        n = max(1, int(round(window / (self.time[1] - self.time[0])))) if len(self.time) > 1 else 1
        return float(np.mean(np.abs(self.error[-n:])))

    def to_text(self):
        lines = ["t,phi0,phi1,error"]
        for t, (a, b), e in zip(self.time, self.phi, self.error):
            lines.append(f"{t:.4f},{a:.9f},{b:.9f},{e:.9e}")
        return "\n".join(lines) + "\n"


def simulate(agents, channel=ChannelModel(), duration=30.0, dt=DT):
    """Fixed-step simulation; each step every agent sends its phase to the other.

    A message sent at step n with delay d is readable from the first step at
    or after n*dt + d. Before anything arrives an agent assumes its peer is
    in step with itself.
    """
    agents = [SyncAgent(a.phi, a.drift, a.k, a.correct) for a in agents]
    if len(agents) != 2:
        raise ValueError("exactly two agents are supported")
    rng = np.random.default_rng(channel.seed)
    steps = int(round(duration / dt))
    phi = np.zeros((steps + 1, 2))
    phi[0] = [a.phi for a in agents]
    inbox = [[], []]   # heap of (arrival time, send step, phase) per receiver
    seq = 0
    for n in range(steps):
        now = n * dt
        for i, a in enumerate(agents):
            j = 1 - i
            if rng.random() >= channel.drop:
                d = rng.uniform(channel.delay_lo, channel.delay_hi) if channel.delay_hi > 0 else 0.0
                heapq.heappush(inbox[j], (now + d, seq, a.phi))
                seq += 1
        for i, a in enumerate(agents):
            box = inbox[i]
            while box and box[0][0] <= now + 1e-12:
                _, s, value = heapq.heappop(box)
                # a delayed older message must not overwrite a newer one
                if s > a.peer_seq:
                    a.peer_phi, a.peer_seq = value, s
        rates = []
        for a in agents:
            peer = a.peer_phi if a.peer_phi is not None else a.phi
            rates.append(phase_rate(a.phi, peer, a.k) if a.correct else 1.0)
        for a, r in zip(agents, rates):
            a.phi += (1.0 + a.drift) * r * dt
        phi[n + 1] = [a.phi for a in agents]
    time = np.arange(steps + 1) * dt
    return SyncTrace(time, phi, phi[:, 0] - phi[:, 1])


def fixed_point_error(drift_a, drift_b, k):
    """Steady |phi_a - phi_b| of the zero-delay continuous-time loop."""
    if k <= 0:
        return np.inf
    return abs(drift_a - drift_b) / (k * (2.0 + drift_a + drift_b))
