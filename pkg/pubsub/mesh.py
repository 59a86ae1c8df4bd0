"""
In-process deployments: one PubSubRuntime per machine over a MemoryNetwork, with tunnels
already established. Used by the benchmarks and the test suite.
"""
import itertools
import random
from typing import Iterable, Optional, Sequence

from overlay.endpoint import OverlayEndpoint
from overlay.keys import generate_keypair, seeded_entropy
from overlay.transport import MemoryNetwork
from provision.link import LinkModel

from .runtime import PubSubRuntime

__all__ = ["Mesh"]


class Mesh:
    """
    Usage:
        mesh = Mesh(["robot", "cloud"], links={"cloud": LinkModel(10e6, 6.1)})
        mesh["cloud"].add_node("sink")
        mesh.settle()

    The first machine is the hub; every other machine gets a tunnel to it. Extra tunnels
    between non-hub machines follow `edges` (or all pairs with topology="full").
    """

    def __init__(
        self,
        machines: Sequence[str],
        *,
        network: Optional[MemoryNetwork] = None,
        links: Optional[dict[str, LinkModel]] = None,
        edges: Iterable[tuple[str, str]] = (),
        topology: str = "hub",
        seed: int = 0,
        tick_period: float = 0.05,
        **runtime_options,
    ):
        if not machines:
            raise ValueError("a mesh needs at least one machine")
        self.network = network or MemoryNetwork(seed=seed)
        self.clock = self.network.clock
        self.tick_period = tick_period
        self._closed = False
        entropy = seeded_entropy(seed)
        self.endpoints: dict[str, OverlayEndpoint] = {}
        self.runtimes: dict[str, PubSubRuntime] = {}
        for i, name in enumerate(machines):
            transport = self.network.attach(name)
            endpoint = OverlayEndpoint(generate_keypair(entropy), transport, name=name,
                                       entropy=entropy)
            self.endpoints[name] = endpoint
            self.runtimes[name] = PubSubRuntime(name, endpoint, clock=self.clock,
                                                rng=random.Random(seed * 1000 + i),
                                                **runtime_options)

        hub = machines[0]
        for name, model in (links or {}).items():
            self.network.set_link(self.endpoints[hub].address, self.endpoints[name].address, model)
        pairs = [(hub, m) for m in machines[1:]]
        if topology == "full":
            pairs += list(itertools.combinations(machines[1:], 2))
        else:
            pairs += [tuple(e) for e in edges]
        for a, b in pairs:
            self.connect(a, b)
        for rt in self.runtimes.values():
            self._schedule(rt)

    def connect(self, initiator: str, responder: str) -> None:
        a, b = self.endpoints[initiator], self.endpoints[responder]
        b.authorize(a.keypair.public, a.address)
        a.connect(b.keypair.public, b.address)

    def _schedule(self, rt: PubSubRuntime) -> None:
        def fire():
            if self._closed:
                return
            rt.tick()
            self._schedule(rt)
        self.network.call_later(self.tick_period, fire)

    def __getitem__(self, machine: str) -> PubSubRuntime:
        return self.runtimes[machine]

    def public_key(self, machine: str) -> bytes:
        return self.endpoints[machine].keypair.public

    def run(self, seconds: float) -> None:
        self.network.run_until(self.clock.now() + seconds)

    def settle(self, intervals: float = 2.0) -> None:
        """Let beacons propagate."""
        interval = next(iter(self.runtimes.values())).announce_interval
        self.run(intervals * interval)

    def close(self) -> None:
        self._closed = True
        for rt in self.runtimes.values():
            rt.close()
