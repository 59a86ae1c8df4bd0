"""WireGuard-style INI export of a deployment's overlay. Text only; nothing is applied."""
from typing import Any

__all__ = ["export_wireguard_config", "render_peer"]


def render_peer(name: str, public_key: str, address: str, endpoint: Any = None) -> str:
    lines = ["[Peer]", f"# {name}", f"PublicKey = {public_key}", f"AllowedIPs = {address}/32"]
    if endpoint:
        host, port = endpoint[0], endpoint[1]
        lines.append(f"Endpoint = {host}:{port}")
    return "\n".join(lines)


def _interface(entry) -> str:
    lines = ["[Interface]", f"# {entry.name}", f"Address = {entry.overlay_address}/16",
             "# PrivateKey is kept in the state directory, never exported"]
    if entry.endpoint and isinstance(entry.endpoint[1], int):
        lines.append(f"ListenPort = {entry.endpoint[1]}")
    return "\n".join(lines)


def export_wireguard_config(deployment) -> dict[str, str]:
    """
    One config document per machine, keyed by machine name.
    Hub-and-spoke: the robot peers with every machine; machines peer with the robot and
    with each other only along `deployment.cloud_edges`.
    """
    robot = deployment.robot
    machines = {m.name: m for m in deployment.machines if m.public_key}
    neighbours: dict[str, list] = {robot.name: list(machines.values())}
    for m in machines.values():
        neighbours[m.name] = [robot]
    for a, b in getattr(deployment, "cloud_edges", []):
        if a in machines and b in machines:
            neighbours[a].append(machines[b])
            neighbours[b].append(machines[a])

    documents = {}
    for entry in [robot, *machines.values()]:
        sections = [_interface(entry)]
        for peer in neighbours[entry.name]:
            sections.append(render_peer(peer.name, peer.public_key, peer.overlay_address,
                                        peer.endpoint))
        documents[entry.name] = "\n\n".join(sections) + "\n"
    return documents
