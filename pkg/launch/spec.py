"""
Launch documents: machines, nodes with placements and remaps, compression directives
and an optional monitor block, written as one YAML document.

    name: grasp-demo
    machines:
      - name: gpu
        backend: mock-cloud
        region: AUTO
        instance_type: {cpu_cores: 4, memory: 8192, gpu_units: 1}
        image: AUTO
    nodes:
      - name: camera
        behavior: image-source
        params: {rate_hz: 30}
        machine: robot
        publishes: [/camera]
      - name: grasp
        behavior: echo-ack
        machine: gpu
        subscribes: [/camera]
        publishes: [/grasp]
    compression:
      - {topic: /camera, mode: streaming}
    monitor:
      topics: [/camera, /diag/*]
      port: 8765

Unknown keys are rejected; errors carry the document line.
"""
import re
from dataclasses import dataclass, field
from typing import Any, Optional, Union

import yaml

from constants import (AUTO, BACKENDS, BRIDGE_DEFAULT_PORT, BRIDGE_MAX_CLIENTS, BRIDGE_RATE_CAP_HZ,
                       DEFAULT_IMAGE, ROBOT_MACHINE)
from errors import DanglingReference, DuplicateName, SpecError, TopicTooLong, UnknownBackend
from pubsub.envelope import check_topic

__all__ = ["ResourceSpec", "MachineSpec", "NodeSpec", "MonitorSpec", "LaunchSpec",
           "parse_launch_spec", "spec_from_dict", "BEHAVIORS", "COMPRESSION_MODES"]

BEHAVIORS = ("image-source", "echo-ack", "synthetic-compute", "sink", "custom-executable",
             "stream-encoder", "stream-decoder")
COMPRESSION_MODES = ("raw", "per-frame", "streaming")

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_.-]*$")


@dataclass(frozen=True)
class ResourceSpec:
    cpu_cores: int = 1
    memory: int = 0      # MiB
    gpu_units: int = 0

    def __post_init__(self):
        if self.cpu_cores < 1:
            raise ValueError("cpu_cores must be >= 1")
        if self.memory < 0 or self.gpu_units < 0:
            raise ValueError("memory and gpu_units must be >= 0")

    def to_dict(self) -> dict:
        return {"cpu_cores": self.cpu_cores, "memory": self.memory, "gpu_units": self.gpu_units}


@dataclass(frozen=True)
class MachineSpec:
    name: str
    backend: str
    region: str = AUTO
    instance_type: Union[str, ResourceSpec] = AUTO
    image: str = AUTO

    @property
    def requirements(self) -> Optional[ResourceSpec]:
        """Resource requirements to resolve against, None when a type id is pinned."""
        if isinstance(self.instance_type, ResourceSpec):
            return self.instance_type
        if self.instance_type == AUTO:
            return ResourceSpec()
        return None

    @property
    def unresolved(self) -> list[str]:
        out = []
        if self.region == AUTO:
            out.append("region")
        if not isinstance(self.instance_type, str) or self.instance_type == AUTO:
            out.append("instance_type")
        if self.image == AUTO:
            out.append("image")
        return out

    @property
    def uses_default_image(self) -> bool:
        return self.image == DEFAULT_IMAGE

    def to_dict(self) -> dict:
        it = self.instance_type
        return {"name": self.name, "backend": self.backend, "region": self.region,
                "instance_type": it.to_dict() if isinstance(it, ResourceSpec) else it,
                "image": self.image}


@dataclass(frozen=True)
class NodeSpec:
    name: str
    behavior: str
    machine: str = ROBOT_MACHINE
    publishes: tuple[str, ...] = ()
    subscribes: tuple[str, ...] = ()
    remaps: dict[str, str] = field(default_factory=dict)
    params: dict[str, Any] = field(default_factory=dict)

    def topic(self, name: str) -> str:
        return self.remaps.get(name, name)

    @property
    def effective_publishes(self) -> tuple[str, ...]:
        return tuple(self.topic(t) for t in self.publishes)

    @property
    def effective_subscribes(self) -> tuple[str, ...]:
        return tuple(self.topic(t) for t in self.subscribes)

    def to_dict(self) -> dict:
        return {"name": self.name, "behavior": self.behavior, "machine": self.machine,
                "publishes": list(self.publishes), "subscribes": list(self.subscribes),
                "remaps": dict(self.remaps), "params": dict(self.params)}

    @classmethod
    def from_dict(cls, doc: dict) -> "NodeSpec":
        return cls(doc["name"], doc["behavior"], doc.get("machine", ROBOT_MACHINE),
                   tuple(doc.get("publishes", ())), tuple(doc.get("subscribes", ())),
                   dict(doc.get("remaps", {})), dict(doc.get("params", {})))


@dataclass(frozen=True)
class MonitorSpec:
    topics: tuple[str, ...]
    port: int = BRIDGE_DEFAULT_PORT
    max_clients: int = BRIDGE_MAX_CLIENTS
    rate_cap_hz: float = BRIDGE_RATE_CAP_HZ

    def to_dict(self) -> dict:
        return {"topics": list(self.topics), "port": self.port,
                "max_clients": self.max_clients, "rate_cap_hz": self.rate_cap_hz}


@dataclass(frozen=True)
class LaunchSpec:
    name: str
    machines: tuple[MachineSpec, ...] = ()
    nodes: tuple[NodeSpec, ...] = ()
    compression_directives: tuple[tuple[str, str], ...] = ()
    monitor: Optional[MonitorSpec] = None

    def machine(self, name: str) -> MachineSpec:
        for m in self.machines:
            if m.name == name:
                return m
        raise DanglingReference(f"machine {name!r} is not declared", field="machine")

    def nodes_on(self, machine: str) -> list[NodeSpec]:
        return [n for n in self.nodes if n.machine == machine]

    @property
    def robot_nodes(self) -> list[NodeSpec]:
        return self.nodes_on(ROBOT_MACHINE)

    @property
    def cloud_nodes(self) -> list[NodeSpec]:
        return [n for n in self.nodes if n.machine != ROBOT_MACHINE]

    def publishers(self, topic: str) -> list[NodeSpec]:
        return [n for n in self.nodes if topic in n.effective_publishes]

    def subscribers(self, topic: str) -> list[NodeSpec]:
        return [n for n in self.nodes if topic in n.effective_subscribes]

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {
            "name": self.name,
            "machines": [m.to_dict() for m in self.machines],
            "nodes": [n.to_dict() for n in self.nodes],
            "compression": [{"topic": t, "mode": m} for t, m in self.compression_directives],
        }
        if self.monitor is not None:
            doc["monitor"] = self.monitor.to_dict()
        return doc

    def validate(self) -> "LaunchSpec":
        """Check the cross-reference invariants (used by programmatic construction too)."""
        names = set()
        for m in self.machines:
            if m.name == ROBOT_MACHINE:
                raise DuplicateName(f"{ROBOT_MACHINE!r} is reserved for the robot", field="machines")
            if m.name in names:
                raise DuplicateName(f"machine {m.name!r} declared twice", field="machines")
            if m.backend not in BACKENDS:
                raise UnknownBackend(f"unknown backend {m.backend!r} "
                                     f"(known: {', '.join(BACKENDS)})", field="backend")
            names.add(m.name)
        seen = set()
        for n in self.nodes:
            if n.name in seen:
                raise DuplicateName(f"node {n.name!r} declared twice", field="nodes")
            seen.add(n.name)
            if n.machine != ROBOT_MACHINE and n.machine not in names:
                raise DanglingReference(f"node {n.name!r} is placed on undeclared machine "
                                        f"{n.machine!r}", field="machine")
            extra = set(n.remaps) - set(n.publishes) - set(n.subscribes)
            if extra:
                raise SpecError(f"node {n.name!r} remaps topics it neither publishes nor "
                                f"subscribes: {sorted(extra)}", field="remaps")
        topics = [t for t, _ in self.compression_directives]
        dup = {t for t in topics if topics.count(t) > 1}
        if dup:
            raise DuplicateName(f"compression listed twice for {sorted(dup)}", field="compression")
        return self


# --- YAML with line numbers --------------------------------------------------

class _Map(dict):
    """Mapping that remembers where it and each of its keys sit in the document."""
    line: Optional[int] = None
    key_lines: dict


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_map(loader: _LineLoader, node: yaml.MappingNode) -> _Map:
    loader.flatten_mapping(node)
    pairs = loader.construct_pairs(node, deep=True)
    keys = [k for k, _ in pairs]
    for k in keys:
        if keys.count(k) > 1:
            line = [kn.start_mark.line + 1 for kn, _ in node.value if kn.value == str(k)][-1]
            raise DuplicateName(f"key {k!r} appears twice", line=line, field=str(k))
    out = _Map(pairs)
    out.line = node.start_mark.line + 1
    out.key_lines = {kn.value: kn.start_mark.line + 1 for kn, _ in node.value}
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)


def _line(doc: Any, key: Optional[str] = None) -> Optional[int]:
    if isinstance(doc, _Map):
        if key is not None and key in doc.key_lines:
            return doc.key_lines[key]
        return doc.line
    return None


def _mapping(doc: Any, where: str, allowed: set[str], required: set[str] = frozenset(),
             line: Optional[int] = None) -> dict:
    if not isinstance(doc, dict):
        raise SpecError("expected a mapping", line=line, field=where)
    for key in doc:
        if key not in allowed:
            raise SpecError(f"unknown key {key!r}", line=_line(doc, key), field=where)
    for key in required:
        if key not in doc:
            raise SpecError(f"missing required key {key!r}", line=_line(doc), field=where)
    return doc


def _ident(value: Any, doc: Any, key: str) -> str:
    if not isinstance(value, str) or not _IDENT.match(value):
        raise SpecError(f"{value!r} is not a valid name", line=_line(doc, key), field=key)
    return value


def _topics(value: Any, doc: Any, key: str) -> tuple[str, ...]:
    if value is None:
        return ()
    if not isinstance(value, list):
        raise SpecError("expected a list of topic names", line=_line(doc, key), field=key)
    out = []
    for t in value:
        if not isinstance(t, str) or not t.startswith("/"):
            raise SpecError(f"topic {t!r} must be a string starting with '/'",
                            line=_line(doc, key), field=key)
        try:
            check_topic(t)
        except TopicTooLong as e:
            raise SpecError(str(e), line=_line(doc, key), field=key) from None
        out.append(t)
    return tuple(out)


def _int(value: Any, doc: Any, key: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise SpecError(f"expected an integer >= {minimum}, got {value!r}",
                        line=_line(doc, key), field=key)
    return value


_MACHINE_KEYS = {"name", "backend", "region", "instance_type", "image"}
_RESOURCE_KEYS = {"cpu_cores", "memory", "gpu_units"}
_NODE_KEYS = {"name", "behavior", "machine", "publishes", "subscribes", "remaps", "params"}
_MONITOR_KEYS = {"topics", "port", "max_clients", "rate_cap_hz"}
_TOP_KEYS = {"name", "machines", "nodes", "compression", "monitor"}


def _machine(doc: Any) -> MachineSpec:
    _mapping(doc, "machines", _MACHINE_KEYS, {"name", "backend"})
    name = _ident(doc["name"], doc, "name")
    backend = doc["backend"]
    if backend not in BACKENDS:
        raise UnknownBackend(f"unknown backend {backend!r} (known: {', '.join(BACKENDS)})",
                             line=_line(doc, "backend"), field="backend")
    itype: Union[str, ResourceSpec] = doc.get("instance_type", AUTO)
    if isinstance(itype, dict):
        _mapping(itype, "instance_type", _RESOURCE_KEYS, line=_line(doc, "instance_type"))
        try:
            itype = ResourceSpec(
                cpu_cores=_int(itype.get("cpu_cores", 1), itype, "cpu_cores", 1),
                memory=_int(itype.get("memory", 0), itype, "memory"),
                gpu_units=_int(itype.get("gpu_units", 0), itype, "gpu_units"))
        except ValueError as e:
            raise SpecError(str(e), line=_line(doc, "instance_type"), field="instance_type") from None
    elif not isinstance(itype, str):
        raise SpecError("expected a type id, AUTO or a requirements mapping",
                        line=_line(doc, "instance_type"), field="instance_type")
    for key in ("region", "image"):
        if not isinstance(doc.get(key, AUTO), str):
            raise SpecError("expected a string", line=_line(doc, key), field=key)
    return MachineSpec(name, backend, doc.get("region", AUTO), itype, doc.get("image", AUTO))


def _node(doc: Any) -> NodeSpec:
    _mapping(doc, "nodes", _NODE_KEYS, {"name", "behavior"})
    name = _ident(doc["name"], doc, "name")
    behavior = doc["behavior"]
    if behavior not in BEHAVIORS:
        raise SpecError(f"unknown behavior {behavior!r} (known: {', '.join(BEHAVIORS)})",
                        line=_line(doc, "behavior"), field="behavior")
    machine = _ident(doc.get("machine", ROBOT_MACHINE), doc, "machine")
    remaps = doc.get("remaps") or {}
    if not isinstance(remaps, dict) or not all(
            isinstance(k, str) and isinstance(v, str) and v.startswith("/") for k, v in remaps.items()):
        raise SpecError("expected a mapping of topic names", line=_line(doc, "remaps"), field="remaps")
    params = doc.get("params") or {}
    if not isinstance(params, dict):
        raise SpecError("expected a mapping", line=_line(doc, "params"), field="params")
    node = NodeSpec(name, behavior, machine, _topics(doc.get("publishes"), doc, "publishes"),
                    _topics(doc.get("subscribes"), doc, "subscribes"), dict(remaps), dict(params))
    extra = set(node.remaps) - set(node.publishes) - set(node.subscribes)
    if extra:
        raise SpecError(f"remaps topics the node neither publishes nor subscribes: {sorted(extra)}",
                        line=_line(doc, "remaps"), field="remaps")
    return node


def _monitor(doc: Any, line: Optional[int]) -> MonitorSpec:
    _mapping(doc, "monitor", _MONITOR_KEYS, {"topics"}, line=line)
    topics = doc["topics"]
    if not isinstance(topics, list) or not all(isinstance(t, str) and t for t in topics):
        raise SpecError("expected a list of topic patterns", line=_line(doc, "topics"), field="topics")
    port = _int(doc.get("port", BRIDGE_DEFAULT_PORT), doc, "port")
    if port > 65535:
        raise SpecError(f"port {port} is out of range", line=_line(doc, "port"), field="port")
    rate = doc.get("rate_cap_hz", BRIDGE_RATE_CAP_HZ)
    if isinstance(rate, bool) or not isinstance(rate, (int, float)) or rate <= 0:
        raise SpecError("rate cap must be > 0", line=_line(doc, "rate_cap_hz"), field="rate_cap_hz")
    return MonitorSpec(tuple(topics), port,
                       _int(doc.get("max_clients", BRIDGE_MAX_CLIENTS), doc, "max_clients", 1),
                       float(rate))


def _list(doc: Any, key: str) -> list:
    value = doc.get(key) or []
    if not isinstance(value, list):
        raise SpecError("expected a list", line=_line(doc, key), field=key)
    return value


def spec_from_dict(doc: Any) -> LaunchSpec:
    _mapping(doc, "spec", _TOP_KEYS, {"name"})
    name = _ident(doc["name"], doc, "name")
    machines = []
    for m in _list(doc, "machines"):
        spec = _machine(m)
        if spec.name == ROBOT_MACHINE:
            raise DuplicateName(f"{ROBOT_MACHINE!r} is reserved for the robot",
                                line=_line(m, "name"), field="name")
        if any(x.name == spec.name for x in machines):
            raise DuplicateName(f"machine {spec.name!r} declared twice",
                                line=_line(m, "name"), field="name")
        machines.append(spec)
    declared = {m.name for m in machines}
    nodes = []
    for n in _list(doc, "nodes"):
        node = _node(n)
        if any(x.name == node.name for x in nodes):
            raise DuplicateName(f"node {node.name!r} declared twice",
                                line=_line(n, "name"), field="name")
        if node.machine != ROBOT_MACHINE and node.machine not in declared:
            raise DanglingReference(f"machine {node.machine!r} is not declared",
                                    line=_line(n, "machine"), field="machine")
        nodes.append(node)
    directives = []
    for d in _list(doc, "compression"):
        _mapping(d, "compression", {"topic", "mode"}, {"topic"})
        topic = _topics([d["topic"]], d, "topic")[0]
        mode = d.get("mode", "streaming")
        if mode not in COMPRESSION_MODES:
            raise SpecError(f"unknown compression mode {mode!r} "
                            f"(known: {', '.join(COMPRESSION_MODES)})",
                            line=_line(d, "mode"), field="mode")
        if any(t == topic for t, _ in directives):
            raise DuplicateName(f"compression listed twice for {topic}",
                                line=_line(d, "topic"), field="topic")
        directives.append((topic, mode))
    monitor = None
    if doc.get("monitor") is not None:
        monitor = _monitor(doc["monitor"], _line(doc, "monitor"))
    return LaunchSpec(name, tuple(machines), tuple(nodes), tuple(directives), monitor).validate()


def parse_launch_spec(text: str) -> LaunchSpec:
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark or e.context_mark
        raise SpecError(f"syntax error: {e.problem or e}",
                        line=mark.line + 1 if mark else None) from None
    except yaml.YAMLError as e:
        raise SpecError(f"syntax error: {e}") from None
    if doc is None:
        raise SpecError("empty document")
    return spec_from_dict(doc)
