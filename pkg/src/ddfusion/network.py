"""Robots and the communication network.

Each robot owns a two-slice factor graph over its task variables, a
channel filter per neighbor and the common/local structure needed by the
conservative filter.  The network schedules the per-tick sequence
(predict, measure, exchange, filter) and implements the two exchange
disciplines.
"""

from __future__ import annotations

import numpy as np

from .canonical import CanonicalGaussian, VariableKey, STATIC, sort_vars
from .errors import StructuralError
from .factorgraph import FactorGraph, FactorKind
from .filtering import (
    CommonStructure,
    LinearDynamics,
    exact_filter_step,
    filter_step,
    predict,
)
from .fusion import ChannelFilter, FusionMessage, fuse, prepare_message


class Robot:
    """One robot: local graph, dynamics, channel filters."""

    def __init__(self, rid: int, subjects: dict, dynamics: dict,
                 structure: CommonStructure):
        # subjects: subject -> (dim, dynamic: bool)
        self.id = rid
        self.subjects = dict(subjects)
        self.dynamics = dict(dynamics)
        self.structure = structure
        self.graph = FactorGraph()
        self.channels: dict[int, ChannelFilter] = {}
        self.step = 0
        self.fresh_ids: list[int] = []

    def key(self, subject: str, k: int) -> VariableKey:
        dim, dynamic = self.subjects[subject]
        return VariableKey(subject, k if dynamic else STATIC, dim)

    def init_priors(self, priors: dict):
        """Install slice-0 variables and prior factors.

        `priors` maps subject -> (mean, cov); shared subjects must carry
        identical entries across robots so channel filters can be seeded
        with the common prior.
        """
        cf_priors = {}
        for subject in sorted(self.subjects):
            v = self.key(subject, 0)
            mean, cov = priors[subject]
            self.graph.add_variable(v)
            payload = CanonicalGaussian.from_moment((v,), mean, cov)
            self.graph.add_factor(FactorKind.PRIOR, payload)
            cf_priors[v] = payload
        for cf in self.channels.values():
            cf.initialize(cf_priors)
        self.step = 0

    def add_channel(self, neighbor: int, common_subjects):
        self.channels[neighbor] = ChannelFilter(neighbor, common_subjects)

    def predict_tick(self):
        predict(self.graph, self.dynamics, self.step)
        for neighbor in sorted(self.channels):
            self.channels[neighbor].predict(self.dynamics, self.step)
        self.step += 1

    # -- measurement updates ------------------------------------------

    def update_biased_position(self, target: str, bias: str, y, r):
        """y = [n, e] of the target plus the robot's bias, noise cov r."""
        k = self.step
        vt = self.key(target, k)
        vb = self.key(bias, k)
        h = np.zeros((2, vt.dim + vb.dim))
        # ordering inside the factor is canonical-sorted; build H against it
        vars_ = sort_vars((vt, vb))
        zero = CanonicalGaussian.zero(vars_)
        st = zero.slice_of(vt)
        sb = zero.slice_of(vb)
        h[0, st.start + 0] = 1.0  # n
        h[1, st.start + 2] = 1.0  # e
        h[0, sb.start + 0] = 1.0
        h[1, sb.start + 1] = 1.0
        self._add_linear_measurement(vars_, h, np.asarray(y, dtype=float), r)

    def update_position(self, target: str, y, r):
        """y = [n, e] of the target, no bias term."""
        vt = self.key(target, self.step)
        h = np.zeros((2, vt.dim))
        h[0, 0] = 1.0
        h[1, 2] = 1.0
        self._add_linear_measurement((vt,), h, np.asarray(y, dtype=float), r)

    def update_bias(self, bias: str, m, r):
        """Direct observation of the robot's measurement bias."""
        vb = self.key(bias, self.step)
        h = np.eye(vb.dim)
        self._add_linear_measurement((vb,), h, np.asarray(m, dtype=float), r)

    def _add_linear_measurement(self, vars_, h, y, r):
        ri = np.linalg.inv(np.asarray(r, dtype=float))
        payload = CanonicalGaussian(sort_vars(vars_), h.T @ ri @ y, h.T @ ri @ h)
        node = self.graph.add_factor(FactorKind.LOCAL_MEASUREMENT, payload)
        self.fresh_ids.append(node.id)

    # -- fusion surface -----------------------------------------------

    def message_to(self, neighbor: int) -> FusionMessage:
        return prepare_message(self.graph, self.channels[neighbor],
                               self.id, neighbor, self.step)

    def receive_simultaneous(self, incoming: FusionMessage,
                             own_pre: CanonicalGaussian):
        cf = self.channels[incoming.sender]
        fuse(self.graph, cf, incoming)
        cf.update(own_pre, incoming)

    def receive_directed(self, incoming: FusionMessage):
        cf = self.channels[incoming.sender]
        fuse(self.graph, cf, incoming)
        cf.set_content(incoming.payload)

    # -- filtering -----------------------------------------------------

    def conservative_filter(self):
        report = filter_step(self.graph, self.structure, self.step - 1,
                             [self.channels[n] for n in sorted(self.channels)],
                             fresh_ids=self.fresh_ids)
        self.fresh_ids.clear()
        return report

    def exact_filter(self):
        self.fresh_ids.clear()
        return exact_filter_step(self.graph, self.step - 1)

    # -- queries -------------------------------------------------------

    def task_keys(self):
        return sort_vars(self.key(s, self.step) for s in self.subjects)

    def task_moment(self):
        """(mean, cov) over the robot's full current task vector."""
        return self.graph.marginal(self.task_keys()).to_moment()


class Network:
    """An acyclic set of robots with bidirectional channels."""

    def __init__(self, robots: dict, edges):
        self.robots = dict(robots)
        self.edges = [tuple(sorted(e)) for e in edges]
        ids = set(self.robots)
        for a, b in self.edges:
            if a not in ids or b not in ids:
                raise StructuralError(f"edge ({a},{b}) references unknown robot")
        self._check_acyclic_connected()

    def _check_acyclic_connected(self):
        parent = {r: r for r in self.robots}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in self.edges:
            ra, rb = find(a), find(b)
            if ra == rb:
                raise StructuralError(
                    "communication topology must be undirected and acyclic"
                )
            parent[ra] = rb
        if len(self.robots) > 1 and len(self.edges) != len(self.robots) - 1:
            raise StructuralError("communication topology must be connected")

    # -- exchange disciplines -----------------------------------------

    def exchange_simultaneous(self):
        """Every adjacent pair swaps messages computed from pre-fusion
        marginals; then both sides fuse and update their CFs."""
        messages = {}
        own_pre = {}
        for a, b in sorted(self.edges):
            messages[(a, b)] = self.robots[a].message_to(b)
            messages[(b, a)] = self.robots[b].message_to(a)
            own_pre[(a, b)] = messages[(a, b)].payload
            own_pre[(b, a)] = messages[(b, a)].payload
        for a, b in sorted(self.edges):
            self.robots[b].receive_simultaneous(messages[(a, b)], own_pre[(b, a)])
            self.robots[a].receive_simultaneous(messages[(b, a)], own_pre[(a, b)])

    def exchange_sweep(self):
        """Leaf-to-root then root-to-leaf sequential message passing.

        Processed sequentially, each robot's posterior after the downward
        pass contains every robot's data, which recovers the centralized
        estimate in the homogeneous linear-Gaussian setting.
        """
        root = min(self.robots)
        adjacency = {r: [] for r in self.robots}
        for a, b in self.edges:
            adjacency[a].append(b)
            adjacency[b].append(a)
        order = [root]
        parent = {root: None}
        for r in order:
            for n in sorted(adjacency[r]):
                if n not in parent:
                    parent[n] = r
                    order.append(n)
        for r in reversed(order):
            if parent[r] is None:
                continue
            msg = self.robots[r].message_to(parent[r])
            self.robots[parent[r]].receive_directed(msg)
            self.robots[r].channels[parent[r]].set_content(msg.payload)
        for r in order:
            for n in sorted(adjacency[r]):
                if parent.get(n) == r:
                    msg = self.robots[r].message_to(n)
                    self.robots[n].receive_directed(msg)
                    self.robots[r].channels[n].set_content(msg.payload)

    def filter_all(self, conservative: bool):
        reports = {}
        for rid in sorted(self.robots):
            robot = self.robots[rid]
            if conservative:
                reports[rid] = robot.conservative_filter()
            else:
                reports[rid] = robot.exact_filter()
        return reports

    def cf_divergence(self) -> float:
        """Max information-matrix discrepancy between the two endpoint CFs
        of any channel (nonzero only after asymmetric deflation)."""
        worst = 0.0
        for a, b in self.edges:
            ja = self.robots[a].channels[b].joint()
            jb = self.robots[b].channels[a].joint()
            if ja.vars != jb.vars:
                continue
            if ja.lam.size:
                worst = max(worst, float(np.max(np.abs(ja.lam - jb.lam))))
        return worst
