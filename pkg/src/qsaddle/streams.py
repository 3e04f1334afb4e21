"""Counter-based random streams keyed by (master seed, agent, iteration).

Each agent owns one Philox generator keyed by ``(master_seed, agent)``. The
counter is reset to ``(0, iteration, purpose, 0)`` before every draw, so the
numbers an agent sees at iteration ``k`` do not depend on how many draws were
made before, or on the order in which agents are processed.
"""

from __future__ import annotations

import numpy as np

MAX_SEED = 2**64 - 1

#: third counter word; keeps quantization draws disjoint from initialisation
QUANTIZE = 0
INIT = 1


class AgentStreams:
    """Per-agent Philox streams for one run."""

    def __init__(self, master_seed: int, n_agents: int):
        if not 0 <= int(master_seed) <= MAX_SEED:
            raise ValueError(f"master_seed must lie in [0, 2**64 - 1], got {master_seed}")
        self.master_seed = int(master_seed)
        self.n_agents = int(n_agents)
        self._bitgens = []
        self._generators = []
        self._states = []
        for agent in range(self.n_agents):
            key = np.array([self.master_seed, agent], dtype=np.uint64)
            bg = np.random.Philox(key=key)
            self._bitgens.append(bg)
            self._generators.append(np.random.Generator(bg))
            state = bg.state
            state["buffer_pos"] = 4
            state["has_uint32"] = 0
            state["uinteger"] = 0
            self._states.append(state)

    def generator(self, agent: int, iteration: int, purpose: int = QUANTIZE) -> np.random.Generator:
        """Return agent ``agent``'s generator positioned at ``iteration``."""
        state = self._states[agent]
        counter = state["state"]["counter"]
        counter[0] = 0
        counter[1] = iteration
        counter[2] = purpose
        counter[3] = 0
        self._bitgens[agent].state = state
        return self._generators[agent]


def stream(master_seed: int, agent: int, iteration: int, purpose: int = QUANTIZE) -> np.random.Generator:
    """One-off generator for ``(master_seed, agent, iteration)``.

    Produces the same numbers as ``AgentStreams(master_seed, n).generator(agent, iteration)``.
    """
    key = np.array([master_seed, agent], dtype=np.uint64)
    counter = np.array([0, iteration, purpose, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
