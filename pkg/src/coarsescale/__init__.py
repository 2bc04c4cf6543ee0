"""Coarse scaling experiments on nets in Sol-type groups and on glued flat spaces."""

from .coarse_space import NetSpace, ball, boundary, folner_box, folner_family, folner_ratio, growth
from .glued import GluedScalingMap, GluedSpace, GluedSpaceSpec, attachment_drift, attachment_point
from .group_model import GroupPoint, GroupSpec, multiply, quasi_distance
from .net import Box, NetIndex, NetSet, enumerate_net, net_index, net_point, round_to_net
from .qi import QiMap, compose, parse_stages
from .scaling import check_k_to_1, estimate_scaling, non_scaling_test

__all__ = [
    "Box", "GluedScalingMap", "GluedSpace", "GluedSpaceSpec", "GroupPoint", "GroupSpec", "NetIndex",
    "NetSet", "NetSpace", "QiMap", "attachment_drift", "attachment_point", "ball", "boundary",
    "check_k_to_1", "compose", "enumerate_net", "estimate_scaling", "folner_box", "folner_family",
    "folner_ratio", "growth", "multiply", "net_index", "net_point", "non_scaling_test", "parse_stages",
    "quasi_distance", "round_to_net",
]
