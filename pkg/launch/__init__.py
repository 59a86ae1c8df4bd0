"""Launch documents, launch-time resolution, compression insertion and deployment planning."""
from .compression import decoder_name, encoder_name, insert_compression_nodes
from .plan import STEP_KINDS, DeploymentPlan, PlanStep, cloud_edges, plan_deployment
from .resolve import (Resolution, resolve_image, resolve_machine, resolve_region, resolve_spec,
                      select_instance_type)
from .spec import (BEHAVIORS, COMPRESSION_MODES, LaunchSpec, MachineSpec, MonitorSpec, NodeSpec,
                   ResourceSpec, parse_launch_spec, spec_from_dict)

__all__ = [
    "decoder_name", "encoder_name", "insert_compression_nodes",
    "STEP_KINDS", "DeploymentPlan", "PlanStep", "cloud_edges", "plan_deployment",
    "Resolution", "resolve_image", "resolve_machine", "resolve_region", "resolve_spec",
    "select_instance_type",
    "BEHAVIORS", "COMPRESSION_MODES", "LaunchSpec", "MachineSpec", "MonitorSpec", "NodeSpec",
    "ResourceSpec", "parse_launch_spec", "spec_from_dict",
]
