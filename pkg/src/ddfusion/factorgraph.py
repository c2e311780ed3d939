"""Bipartite Gaussian factor graph with elimination and re-factorization.

The graph represents one robot's local pdf as a product of canonical
Gaussian factors.  Dense assembly is the reference inference path;
`marginal_mp` runs sum-product style single-variable elimination (exact on
trees, and on any graph since factors are Gaussian) and must agree with it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .canonical import CanonicalGaussian, VariableKey, sort_vars, _order_key
from .errors import StructuralError


class FactorKind(enum.Enum):
    LOCAL_MEASUREMENT = "local_measurement"
    DYNAMIC_PREDICTION = "dynamic_prediction"
    FUSION = "fusion"
    DENSE_MARGINALIZATION = "dense_marginalization"
    APPROX_MARGINALIZATION = "approx_marginalization"
    PRIOR = "prior"


@dataclass(frozen=True)
class FactorNode:
    """A factor: unique id, provenance kind and its canonical payload.

    Adjacency is exactly the payload's variables.
    """

    id: int
    kind: FactorKind
    payload: CanonicalGaussian

    @property
    def vars(self):
        return self.payload.vars


class FactorGraph:
    """Mutable single-writer factor graph."""

    def __init__(self):
        self._vars: dict[VariableKey, None] = {}
        self.factors: dict[int, FactorNode] = {}
        self._next_id = 0

    # -- structure -----------------------------------------------------

    @property
    def variables(self):
        return sort_vars(self._vars)

    def has_variable(self, v: VariableKey) -> bool:
        return v in self._vars

    def add_variable(self, v: VariableKey):
        if v in self._vars:
            raise StructuralError(f"variable {v} already present")
        for u in self._vars:
            if u.subject == v.subject and u.dim != v.dim:
                raise StructuralError(
                    f"subject {v.subject} dim changed: {u.dim} -> {v.dim}"
                )
        self._vars[v] = None

    def add_factor(self, kind: FactorKind, payload: CanonicalGaussian) -> FactorNode:
        for v in payload.vars:
            if v not in self._vars:
                raise StructuralError(f"factor references unknown variable {v}")
        node = FactorNode(self._next_id, kind, payload.reordered())
        self._next_id += 1
        self.factors[node.id] = node
        return node

    def remove_factor(self, fid: int):
        if fid not in self.factors:
            raise StructuralError(f"no factor with id {fid}")
        del self.factors[fid]

    def clear_factors(self):
        self.factors.clear()

    def copy(self) -> "FactorGraph":
        g = FactorGraph()
        g._vars = dict(self._vars)
        g.factors = dict(self.factors)
        g._next_id = self._next_id
        return g

    def restore(self, snapshot: "FactorGraph"):
        """Replace this graph's content with a snapshot (atomic rollback)."""
        self._vars = dict(snapshot._vars)
        self.factors = dict(snapshot.factors)
        self._next_id = snapshot._next_id

    # -- inference -----------------------------------------------------

    def joint_canonical(self) -> CanonicalGaussian:
        """Aligned sum of all factor payloads over all graph variables."""
        out = CanonicalGaussian.zero(self.variables)
        n = out.dim
        zeta = out.zeta.copy()
        lam = out.lam.copy()
        for fid in sorted(self.factors):
            z, m = self.factors[fid].payload._embed(out.vars, out._slices, n)
            zeta += z
            lam += m
        return CanonicalGaussian(out.vars, zeta, lam)

    def marginal(self, keep) -> CanonicalGaussian:
        """Dense-assembly marginal (reference path)."""
        return self.joint_canonical().marginalize(keep)

    def marginal_mp(self, keep) -> CanonicalGaussian:
        """Marginal via sequential single-variable elimination.

        Each elimination touches only the factors adjacent to the variable
        (its Markov blanket), i.e. the sum-product message schedule on a
        tree.
        """
        keep = set(keep)
        for v in keep:
            if v not in self._vars:
                raise StructuralError(f"cannot keep unknown variable {v}")
        work = [self.factors[fid].payload for fid in sorted(self.factors)]
        for v in sorted((u for u in self._vars if u not in keep), key=_order_key):
            adj = [p for p in work if p.has(v)]
            if not adj:
                continue
            rest = [p for p in work if not p.has(v)]
            prod = adj[0]
            for p in adj[1:]:
                prod = prod.multiply(p)
            msg = prod.marginalize(set(prod.vars) - {v})
            work = rest + [msg]
        out = CanonicalGaussian.zero(sort_vars(keep))
        for p in work:
            out = out.multiply(p)
        return out

    # -- graph surgery -------------------------------------------------

    def eliminate(self, drop):
        """Marginalize `drop` out of the graph.

        Every factor adjacent to a dropped variable is replaced by a single
        dense fill-in factor over the Markov blanket; the joint over the
        remaining variables is preserved exactly.  Returns the fill-in
        factor, or None when the blanket is empty.
        """
        drop = set(drop)
        for v in drop:
            if v not in self._vars:
                raise StructuralError(f"cannot drop unknown variable {v}")
        if not drop:
            return None
        adj = [f for f in self.factors.values() if any(p in drop for p in f.vars)]
        prod = CanonicalGaussian.zero(sort_vars(drop))
        for f in sorted(adj, key=lambda f: f.id):
            prod = prod.multiply(f.payload)
        blanket = set(prod.vars) - drop
        dense = prod.marginalize(blanket)
        for f in adj:
            del self.factors[f.id]
        for v in drop:
            del self._vars[v]
        if not blanket:
            return None
        return self.add_factor(FactorKind.DENSE_MARGINALIZATION, dense)

    def split_factor(self, fid: int, groups):
        """Re-factorize a dense factor into unary + pairwise factors.

        `groups` must partition the factor's variables.  Each group gets a
        unary factor holding its diagonal block and information-vector
        segment; each group pair with a nonzero cross block gets a pairwise
        factor holding only the off-diagonal blocks (zero diagonal, zero
        information vector).  The summed payloads equal the dense payload
        exactly.
        """
        if fid not in self.factors:
            raise StructuralError(f"no factor with id {fid}")
        dense = self.factors[fid].payload
        groups = [sort_vars(g) for g in groups if g]
        flat = [v for g in groups for v in g]
        if sorted(flat, key=_order_key) != list(dense.vars) or len(set(flat)) != len(flat):
            raise StructuralError("groups must partition the factor's variables")

        def idx(g):
            return np.concatenate([
                np.arange(dense.slice_of(v).start, dense.slice_of(v).stop) for v in g
            ])

        new = []
        for g in groups:
            gi = idx(g)
            new.append(CanonicalGaussian(g, dense.zeta[gi],
                                         dense.lam[np.ix_(gi, gi)]))
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                ia, ib = idx(groups[a]), idx(groups[b])
                cross = dense.lam[np.ix_(ia, ib)]
                if not np.any(cross != 0.0):
                    continue
                vars_ab = sort_vars(groups[a] + groups[b])
                pair = CanonicalGaussian.zero(vars_ab)
                lam = pair.lam.copy()
                # positions of each variable inside the pairwise factor
                for v in groups[a]:
                    for w in groups[b]:
                        sa = pair._slices[v]
                        sb = pair._slices[w]
                        ra = dense.slice_of(v)
                        rb = dense.slice_of(w)
                        blk = dense.lam[ra, rb]
                        lam[sa, sb] = blk
                        lam[sb, sa] = blk.T
                new.append(CanonicalGaussian(vars_ab, pair.zeta, lam))
        del self.factors[fid]
        return [self.add_factor(FactorKind.APPROX_MARGINALIZATION, p) for p in new]

    # -- debug serialization -------------------------------------------

    def dumps(self) -> str:
        """Deterministic text dump (17 significant digits) for golden files."""
        lines = ["variables:"]
        for v in self.variables:
            lines.append(f"  {v!r} dim={v.dim}")
        lines.append("factors:")
        for fid in sorted(self.factors):
            f = self.factors[fid]
            lines.append(f"  id={fid} kind={f.kind.value} vars={list(f.vars)!r}")
            lines.append("    zeta=" + " ".join(f"{x:.17g}" for x in f.payload.zeta))
            for row in f.payload.lam:
                lines.append("    lam =" + " ".join(f"{x:.17g}" for x in row))
        return "\n".join(lines) + "\n"
