"""Conservative filtering: the per-step sparsify-then-deflate procedure.

A filtering step marginalizes the previous time slice out of a robot's
graph.  Done naively this densifies the graph and silently couples
variables that neighboring robots assume independent.  The procedure here
(1) decouples local from common variables by replacing the joint with the
product of its marginals, (2) marginalizes the old slice, (3) restores the
per-channel conditional-independence structure over common variables,
(4) rescales the sparse information matrix by the deflation constant so it
never exceeds the exact (dense) one in the PSD sense while keeping the
exact mean, and (5) re-factorizes the graph into unary/pairwise factors.
Channel filters are deflated by the same constant so they never hold more
information than the robot itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .canonical import (
    CanonicalGaussian,
    VariableKey,
    deflate,
    deflation_constant,
    min_eigenvalue,
    sort_vars,
)
from .errors import NumericalError, StructuralError
from .factorgraph import FactorGraph, FactorKind


@dataclass(frozen=True)
class LinearDynamics:
    """x_{k+1} = F x_k + b + w,  w ~ N(0, Q) with Q positive definite."""

    f: np.ndarray
    q: np.ndarray
    b: np.ndarray | None = None

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        q = np.asarray(self.q, dtype=float)
        b = None if self.b is None else np.asarray(self.b, dtype=float).reshape(-1)
        try:
            np.linalg.cholesky((q + q.T) / 2.0)
        except np.linalg.LinAlgError as e:
            raise StructuralError("process noise covariance must be PD") from e
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "b", b)

    def prediction_factor(self, v_from: VariableKey, v_to: VariableKey) -> CanonicalGaussian:
        """Canonical form of p(x_{k+1} | x_k) over (x_k, x_{k+1})."""
        qi = np.linalg.inv(self.q)
        d = v_from.dim
        lam = np.zeros((2 * d, 2 * d))
        lam[:d, :d] = self.f.T @ qi @ self.f
        lam[:d, d:] = -self.f.T @ qi
        lam[d:, :d] = -qi @ self.f
        lam[d:, d:] = qi
        zeta = np.zeros(2 * d)
        if self.b is not None:
            zeta[:d] = -self.f.T @ qi @ self.b
            zeta[d:] = qi @ self.b
        g = CanonicalGaussian((v_from, v_to), zeta, lam)
        return g.reordered()


@dataclass(frozen=True)
class CommonStructure:
    """A robot's variable partition by subject.

    ``local_subjects`` are monitored by nobody else; ``channels`` maps a
    neighbor id to the subjects shared with it.  Subjects shared across
    two or more channels form the core; every channel touching the core
    must contain it whole (star overlap), otherwise the sparsification
    target is undefined and construction fails.
    """

    local_subjects: frozenset
    channels: dict
    shared_core: frozenset = field(init=False)

    def __post_init__(self):
        channels = {n: frozenset(s) for n, s in self.channels.items()}
        counts = {}
        for subs in channels.values():
            for s in subs:
                counts[s] = counts.get(s, 0) + 1
        core = frozenset(s for s, c in counts.items() if c >= 2)
        for n, subs in channels.items():
            inter = subs & core
            if inter and inter != core:
                raise StructuralError(
                    f"channel {n} overlaps the shared core partially; "
                    "only single-core (or disjoint) channel layouts are supported"
                )
        object.__setattr__(self, "local_subjects", frozenset(self.local_subjects))
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "shared_core", core)

    @property
    def common_subjects(self) -> frozenset:
        out = frozenset()
        for subs in self.channels.values():
            out |= subs
        return out

    def is_local(self, v: VariableKey) -> bool:
        return v.subject in self.local_subjects


@dataclass(frozen=True)
class FilterStepReport:
    lambda_min: float
    min_eig_guarantee: float
    dims_marginalized: int


def predict(g: FactorGraph, dynamics: dict, k: int):
    """Advance every dynamic subject from slice k to k+1.

    Adds the new variable nodes and one prediction factor per subject.
    Static subjects are untouched.
    """
    by_subject = {v.subject: v for v in g.variables if v.timestep == k}
    for subject in sorted(dynamics):
        if subject not in by_subject:
            raise StructuralError(f"no slice-{k} variable for subject {subject}")
        v_k = by_subject[subject]
        v_k1 = VariableKey(subject, k + 1, v_k.dim)
        g.add_variable(v_k1)
        g.add_factor(FactorKind.DYNAMIC_PREDICTION,
                     dynamics[subject].prediction_factor(v_k, v_k1))


def decouple_local(g: FactorGraph, structure: CommonStructure):
    """Break local-common coupling: replace the joint by its two marginals.

    The common block keeps its past/current cross-slice coupling exactly;
    only information linking local and common variables is zeroed.
    """
    local = [v for v in g.variables if structure.is_local(v)]
    common = [v for v in g.variables if not structure.is_local(v)]
    if not local or not common:
        return
    joint = g.joint_canonical()
    p_local = joint.marginalize(local)
    p_common = joint.marginalize(common)
    g.clear_factors()
    g.add_factor(FactorKind.APPROX_MARGINALIZATION, p_local)
    g.add_factor(FactorKind.APPROX_MARGINALIZATION, p_common)


def _channel_keys(structure: CommonStructure, variables, subjects):
    return [v for v in variables if v.subject in subjects]


def sparsify_common(dense: CanonicalGaussian, structure: CommonStructure,
                    variables) -> CanonicalGaussian:
    """Junction-tree recombination of a dense common-variable joint.

    With a shared core: sum of per-channel marginals minus (m-1) copies of
    the core marginal, m being the number of channels containing the core.
    With an empty core this degenerates to the product of per-channel
    marginals.  Exact whenever the dense joint already has the target
    conditional-independence structure.
    """
    core_keys = _channel_keys(structure, variables, structure.shared_core)
    out = CanonicalGaussian.zero(dense.vars)
    n_core_channels = 0
    for neighbor in sorted(structure.channels):
        keys = _channel_keys(structure, variables, structure.channels[neighbor])
        keys = [v for v in keys if dense.has(v)]
        if not keys:
            continue
        out = out.multiply(dense.marginalize(keys))
        if core_keys and set(core_keys) <= set(keys):
            n_core_channels += 1
    if core_keys and n_core_channels > 1:
        core_marg = dense.marginalize(core_keys)
        out = out.divide(core_marg.scaled(float(n_core_channels - 1)))
    return out


def regain_conditional_independence(g: FactorGraph, structure: CommonStructure):
    """Replace the dense common-variable factor(s) with the sparse target."""
    common = [v for v in g.variables if not structure.is_local(v)]
    if not common:
        return
    touching = [f for f in g.factors.values() if any(v in set(common) for v in f.vars)]
    dense = CanonicalGaussian.zero(sort_vars(common))
    for f in sorted(touching, key=lambda f: f.id):
        dense = dense.multiply(f.payload)
    sparse = sparsify_common(dense, structure, g.variables)
    for f in touching:
        g.remove_factor(f.id)
    g.add_factor(FactorKind.APPROX_MARGINALIZATION, sparse)


def _refactor_groups(structure: CommonStructure, variables):
    """Variable groups for re-factorization: local, core, channel exclusives."""
    groups = []
    local = [v for v in variables if structure.is_local(v)]
    if local:
        groups.append(local)
    core = [v for v in variables if v.subject in structure.shared_core]
    if core:
        groups.append(core)
    seen = set()
    for neighbor in sorted(structure.channels):
        excl_subjects = structure.channels[neighbor] - structure.shared_core
        excl = tuple(sort_vars(v for v in variables if v.subject in excl_subjects))
        if excl and excl not in seen:
            seen.add(excl)
            groups.append(list(excl))
    return groups


def filter_step(g: FactorGraph, structure: CommonStructure, k: int,
                channel_filters=(), fresh_ids=()) -> FilterStepReport:
    """One conservative filtering step: marginalize slice k out of the graph.

    Mutates the graph in place; on any numerical failure the graph is
    restored to its pre-step state before the error propagates.  Channel
    filters in `channel_filters` are deflated by the step's constant.
    `fresh_ids` names measurement factors taken this tick.
    """
    past = [v for v in g.variables if v.timestep == k]
    if not past:
        return FilterStepReport(1.0, 0.0, 0)
    snapshot = g.copy()
    try:
        # Measurement factors taken this tick stay out of the sparsification:
        # their local-common couplings are decoupled on the next step, after
        # one prediction, mirroring the post-marginalization measurement
        # topology.  Re-adding them after deflation keeps conservativeness
        # (they are PSD and identical on both sides of the comparison).
        fresh = [g.factors[i] for i in sorted(fresh_ids)
                 if i in g.factors
                 and all(v.timestep != k for v in g.factors[i].vars)]
        for f in fresh:
            g.remove_factor(f.id)
        g_true = g.copy()
        decouple_local(g, structure)
        past_local = [v for v in past if structure.is_local(v)]
        past_common = [v for v in past if not structure.is_local(v)]
        if past_local:
            g.eliminate(past_local)
        if past_common:
            g.eliminate(past_common)
        g_true.eliminate(past)
        regain_conditional_independence(g, structure)

        tr = g_true.joint_canonical()
        sp = g.joint_canonical()
        if tr.vars != sp.vars:
            raise StructuralError("true and sparse graphs diverged in variables")
        lam = deflation_constant(tr.lam, sp.lam)
        deflated = deflate(sp, tr.lam, tr.zeta, lam)
        guarantee = min_eigenvalue(tr.lam - lam * sp.lam)

        g.clear_factors()
        node = g.add_factor(FactorKind.DENSE_MARGINALIZATION, deflated)
        g.split_factor(node.id, _refactor_groups(structure, g.variables))
        for f in sorted(fresh, key=lambda f: f.id):
            g.add_factor(f.kind, f.payload)

        for cf in channel_filters:
            cf.deflate_factors(lam)
    except (NumericalError, StructuralError):
        g.restore(snapshot)
        raise
    return FilterStepReport(lam, guarantee, sum(v.dim for v in past))


def exact_filter_step(g: FactorGraph, k: int) -> FilterStepReport:
    """Plain dense marginalization of slice k (no conservative machinery)."""
    past = [v for v in g.variables if v.timestep == k]
    if not past:
        return FilterStepReport(1.0, 0.0, 0)
    g.eliminate(past)
    return FilterStepReport(1.0, 0.0, sum(v.dim for v in past))
