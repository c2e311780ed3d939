"""Peer-to-peer heterogeneous fusion with per-neighbor channel filters.

A channel filter (CF) tracks the pdf of the data two neighbors have in
common over their shared variables; dividing it out of an incoming
marginal prevents double counting.  Two exchange disciplines are
supported by the network layer: simultaneous symmetric exchange (both
sides fuse messages computed from pre-fusion marginals) and sequential
sweeps, where the CF content is simply the last marginal communicated on
the channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canonical import CanonicalGaussian, min_eigenvalue, sort_vars
from .errors import NegativeInformationError, StructuralError
from .factorgraph import FactorGraph, FactorKind
from .filtering import LinearDynamics


@dataclass(frozen=True)
class FusionMessage:
    """One robot's marginal over a channel's common variables."""

    sender: int
    receiver: int
    timestep: int
    payload: CanonicalGaussian

    def serialize(self) -> str:
        lines = [
            f"sender={self.sender} receiver={self.receiver} timestep={self.timestep}",
            f"vars={list(self.payload.vars)!r}",
            "zeta=" + " ".join(f"{x:.17g}" for x in self.payload.zeta),
        ]
        for row in self.payload.lam:
            lines.append("lam =" + " ".join(f"{x:.17g}" for x in row))
        return "\n".join(lines) + "\n"


class ChannelFilter:
    """Tracker of the common-data pdf on one communication channel."""

    def __init__(self, neighbor: int, common_subjects):
        self.neighbor = neighbor
        self.common_subjects = frozenset(common_subjects)
        self.graph = FactorGraph()

    def common_keys(self, variables):
        """The channel's variable keys among `variables`."""
        return [v for v in variables if v.subject in self.common_subjects]

    def joint(self) -> CanonicalGaussian:
        return self.graph.joint_canonical()

    def initialize(self, priors):
        """Seed the CF with the publicly known prior over common subjects.

        `priors` maps VariableKey -> CanonicalGaussian.  A shared prior is
        common information from the first exchange on.
        """
        for v, payload in priors.items():
            if v.subject not in self.common_subjects:
                continue
            if not self.graph.has_variable(v):
                self.graph.add_variable(v)
            self.graph.add_factor(FactorKind.PRIOR, payload)

    def predict(self, dynamics: dict, k: int):
        """Advance the CF one slice with the robot's dynamics, then filter.

        CF graphs carry no heterogeneous structure, so exact
        marginalization of the old slice is safe.
        """
        past = [v for v in self.graph.variables if v.timestep == k]
        if not past:
            return
        for v in past:
            model = dynamics.get(v.subject)
            if model is None:
                raise StructuralError(f"no dynamics for CF subject {v.subject}")
            v1 = type(v)(v.subject, k + 1, v.dim)
            self.graph.add_variable(v1)
            self.graph.add_factor(FactorKind.DYNAMIC_PREDICTION,
                                  model.prediction_factor(v, v1))
        self.graph.eliminate(past)

    def set_content(self, payload: CanonicalGaussian):
        """Replace the CF content with a single factor holding `payload`."""
        g = FactorGraph()
        for v in payload.vars:
            g.add_variable(v)
        g.add_factor(FactorKind.FUSION, payload)
        self.graph = g

    def update(self, own_marginal: CanonicalGaussian, incoming: FusionMessage):
        """Post-exchange common pdf for a simultaneous symmetric exchange.

        The common information after both sides fuse is the fused marginal
        itself: own + incoming - previous common.
        """
        fused = own_marginal.multiply(incoming.payload).divide(self.joint())
        self.set_content(fused)

    def deflate_factors(self, lam_min: float):
        """Scale every factor by the robot's deflation constant."""
        if not (0.0 < lam_min <= 1.0):
            raise StructuralError(f"deflation constant out of range: {lam_min}")
        if lam_min == 1.0:
            return
        old = list(self.graph.factors.values())
        for f in old:
            self.graph.remove_factor(f.id)
        for f in sorted(old, key=lambda f: f.id):
            self.graph.add_factor(f.kind, f.payload.scaled(lam_min))


def prepare_message(g: FactorGraph, channel: ChannelFilter, sender: int,
                    receiver: int, k: int) -> FusionMessage:
    """Marginal of the robot's joint over the channel's current common slice."""
    keys = [v for v in channel.common_keys(g.variables)
            if v.timestep in (k, None)]
    if not keys:
        raise StructuralError(
            f"no slice-{k} common variables for channel to {channel.neighbor}"
        )
    return FusionMessage(sender, receiver, k, g.marginal(keys))


def fuse(g: FactorGraph, channel: ChannelFilter, incoming: FusionMessage):
    """Apply the heterogeneous fusion rule for one incoming message.

    Adds a fusion factor holding incoming / CF over the common variables;
    the conditional of non-mutual given common variables is untouched.
    Raises NegativeInformationError if the update drives the robot's joint
    indefinite.
    """
    cf_joint = channel.joint()
    expected = sort_vars(incoming.payload.vars)
    if cf_joint.vars and sort_vars(cf_joint.vars) != expected:
        raise StructuralError("incoming message does not match the channel slice")
    factor = incoming.payload.divide(cf_joint) if cf_joint.vars else incoming.payload
    node = g.add_factor(FactorKind.FUSION, factor)
    joint = g.joint_canonical()
    if min_eigenvalue(joint.lam) <= 0.0:
        g.remove_factor(node.id)
        raise NegativeInformationError(
            f"fusion from robot {incoming.sender} made the joint indefinite"
        )
    return node
