"""
Transparent stream compression: rewrite the graph so a robot-side encoder feeds one decoder
per subscribing cloud machine.

    before:  camera(robot) --/camera--> processor(cloud)
    after:   camera(robot) --/camera/src--> encoder(robot) --/camera/enc--> decoder(cloud)
             --/camera (local)--> processor(cloud)

The encoder also republishes the original topic on the robot when a robot node or the
monitor bridge reads it.
"""
import logging
from dataclasses import replace

from codec.nodes import enc_topic, resync_topic, src_topic
from constants import ROBOT_MACHINE
from pubsub.peers import topic_matches

from .spec import LaunchSpec, NodeSpec

__all__ = ["insert_compression_nodes", "encoder_name", "decoder_name"]

log = logging.getLogger(__name__)


def _slug(topic: str) -> str:
    return topic.strip("/").replace("/", "_") or "root"


def encoder_name(topic: str) -> str:
    return f"{_slug(topic)}_encoder"


def decoder_name(topic: str, machine: str) -> str:
    return f"{_slug(topic)}_decoder_{machine}"


def insert_compression_nodes(spec: LaunchSpec) -> LaunchSpec:
    """Apply every compression directive. Applying twice is the same as applying once."""
    nodes = list(spec.nodes)
    kept = []
    for topic, mode in spec.compression_directives:
        if any(n.name == encoder_name(topic) and n.behavior == "stream-encoder" for n in nodes):
            kept.append((topic, mode))
            continue
        publishers = [n for n in nodes if n.machine == ROBOT_MACHINE and topic in n.effective_publishes]
        subscribers = [n for n in nodes if topic in n.effective_subscribes]
        cloud_machines = sorted({n.machine for n in subscribers if n.machine != ROBOT_MACHINE})
        if not publishers or not cloud_machines:
            log.warning("compression on %s dropped: no robot publisher with a cloud subscriber",
                        topic)
            continue
        kept.append((topic, mode))
        robot_subscribers = (any(n.machine == ROBOT_MACHINE for n in subscribers)
                             or _monitored(spec, topic))

        out = []
        for n in nodes:
            if n in publishers:
                declared = [t for t in n.publishes if n.topic(t) == topic]
                n = replace(n, remaps={**n.remaps, **{t: src_topic(topic) for t in declared}})
            out.append(n)
        out.append(NodeSpec(
            encoder_name(topic), "stream-encoder", ROBOT_MACHINE,
            publishes=(enc_topic(topic),) + ((topic,) if robot_subscribers else ()),
            subscribes=(src_topic(topic), resync_topic(topic)),
            params={"topic": topic, "mode": mode, "local_passthrough": robot_subscribers}))
        for machine in cloud_machines:
            out.append(NodeSpec(
                decoder_name(topic, machine), "stream-decoder", machine,
                publishes=(topic, resync_topic(topic)),
                subscribes=(enc_topic(topic),),
                params={"topic": topic, "mode": mode}))
        nodes = out
        log.info("compression on %s (%s): encoder on robot, decoders on %s", topic, mode,
                 ", ".join(cloud_machines))
    return replace(spec, nodes=tuple(nodes), compression_directives=tuple(kept))


def _monitored(spec: LaunchSpec, topic: str) -> bool:
    """The robot-side monitor bridge reads this topic."""
    return spec.monitor is not None and any(topic_matches(p, topic) for p in spec.monitor.topics)
