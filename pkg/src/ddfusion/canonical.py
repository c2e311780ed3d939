"""Exact algebra on information-form (canonical) Gaussians.

A canonical Gaussian over an ordered list of variables is parameterized by
its information vector ``zeta = Sigma^-1 mu`` and information matrix
``lam = Sigma^-1``.  Products and quotients of Gaussian factors are
additive in this form, marginalization is a Schur complement, and the
conservative-deflation machinery (minimal generalized eigenvalue, mean
preserving rescale) lives here too.

All values are immutable; every operation returns a new object with the
information matrix symmetrized and variables in deterministic order
(subject, then timestep, STATIC first).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, StructuralError

# Timestep sentinel for variables with no time index (e.g. sensor biases).
STATIC = None

# Marginalization regularization (see module design notes): when the
# eliminated block's condition number exceeds COND_LIMIT, add REG_EPS * I.
COND_LIMIT = 1e12
REG_EPS = 1e-9

# Eigenvalues of the sparse information matrix below this cutoff are treated
# as a null space when forming its inverse square root.
PINV_CUTOFF = 1e-10

_SYM_TOL = 1e-6


def _order_key(v: "VariableKey"):
    return (v.subject, -1 if v.timestep is None else v.timestep)


def sort_vars(vars_):
    return tuple(sorted(vars_, key=_order_key))


@dataclass(frozen=True, order=False)
class VariableKey:
    """One block variable: a subject at a timestep (or STATIC), with a size."""

    subject: str
    timestep: int | None
    dim: int

    def __post_init__(self):
        if self.dim <= 0:
            raise StructuralError(f"dim must be positive, got {self.dim}")
        if self.timestep is not None and self.timestep < 0:
            raise StructuralError(f"negative timestep {self.timestep}")

    def __repr__(self):
        t = "STATIC" if self.timestep is None else self.timestep
        return f"{self.subject}@{t}"


def _symmetrize(m: np.ndarray) -> np.ndarray:
    if m.size:
        asym = np.max(np.abs(m - m.T))
        scale = max(1.0, np.max(np.abs(m)))
        if asym > _SYM_TOL * scale:
            raise StructuralError(f"matrix is not symmetric (max asymmetry {asym:g})")
    return (m + m.T) / 2.0


@dataclass(frozen=True)
class CanonicalGaussian:
    """Information-form Gaussian over an ordered tuple of `VariableKey`s."""

    vars: tuple
    zeta: np.ndarray
    lam: np.ndarray
    _slices: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vars_ = tuple(self.vars)
        seen = {}
        for v in vars_:
            if (v.subject, v.timestep) in seen:
                raise StructuralError(f"duplicate variable {v}")
            seen[(v.subject, v.timestep)] = v
        zeta = np.atleast_1d(np.asarray(self.zeta, dtype=float)).reshape(-1)
        lam = np.asarray(self.lam, dtype=float)
        n = sum(v.dim for v in vars_)
        if n == 0:
            lam = lam.reshape(0, 0)
        if zeta.shape != (n,) or lam.shape != (n, n):
            raise StructuralError(
                f"inconsistent shapes: {len(vars_)} vars of total dim {n}, "
                f"zeta {zeta.shape}, lam {lam.shape}"
            )
        lam = _symmetrize(lam)
        slices = {}
        off = 0
        for v in vars_:
            slices[v] = slice(off, off + v.dim)
            off += v.dim
        object.__setattr__(self, "vars", vars_)
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "_slices", slices)

    # -- construction -------------------------------------------------

    @classmethod
    def zero(cls, vars_) -> "CanonicalGaussian":
        vars_ = sort_vars(vars_)
        n = sum(v.dim for v in vars_)
        return cls(vars_, np.zeros(n), np.zeros((n, n)))

    @classmethod
    def from_moment(cls, vars_, mean, cov) -> "CanonicalGaussian":
        """Build from (mean, covariance); covariance must be PD."""
        vars_ = tuple(vars_)
        cov = _symmetrize(np.asarray(cov, dtype=float))
        mean = np.asarray(mean, dtype=float).reshape(-1)
        try:
            c = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as e:
            raise NumericalError("covariance is not positive definite") from e
        ident = np.eye(cov.shape[0])
        cinv = np.linalg.solve(c, ident)
        lam = cinv.T @ cinv
        return cls(vars_, lam @ mean, lam).reordered()

    def reordered(self) -> "CanonicalGaussian":
        """Return self with variables in canonical sorted order."""
        order = sort_vars(self.vars)
        if order == self.vars:
            return self
        idx = np.concatenate(
            [np.arange(self._slices[v].start, self._slices[v].stop) for v in order]
        ) if order else np.zeros(0, dtype=int)
        return CanonicalGaussian(order, self.zeta[idx], self.lam[np.ix_(idx, idx)])

    # -- basic queries -------------------------------------------------

    @property
    def dim(self) -> int:
        return self.zeta.shape[0]

    def slice_of(self, v: VariableKey) -> slice:
        try:
            return self._slices[v]
        except KeyError:
            raise StructuralError(f"variable {v} not in this Gaussian")

    def has(self, v: VariableKey) -> bool:
        return v in self._slices

    def allclose(self, other: "CanonicalGaussian", atol=1e-10) -> bool:
        return (
            self.vars == other.vars
            and np.allclose(self.zeta, other.zeta, atol=atol)
            and np.allclose(self.lam, other.lam, atol=atol)
        )

    # -- algebra -------------------------------------------------------

    def _embed(self, vars_out, slices_out, n):
        """Zero-padded (zeta, lam) of self in the layout of vars_out."""
        z = np.zeros(n)
        m = np.zeros((n, n))
        idx = np.concatenate(
            [np.arange(slices_out[v].start, slices_out[v].stop) for v in self.vars]
        ) if self.vars else np.zeros(0, dtype=int)
        own = np.arange(self.dim)
        z[idx] = self.zeta[own]
        m[np.ix_(idx, idx)] = self.lam
        return z, m

    def multiply(self, other: "CanonicalGaussian") -> "CanonicalGaussian":
        """Product of densities: aligned sum over the variable union."""
        merged = {}
        for v in self.vars + other.vars:
            prev = merged.get((v.subject, v.timestep))
            if prev is not None and prev.dim != v.dim:
                raise StructuralError(
                    f"dimension mismatch for {v}: {prev.dim} vs {v.dim}"
                )
            merged[(v.subject, v.timestep)] = v
        vars_out = sort_vars(merged.values())
        out = CanonicalGaussian.zero(vars_out)
        n = out.dim
        za, ma = self._embed(vars_out, out._slices, n)
        zb, mb = other._embed(vars_out, out._slices, n)
        return CanonicalGaussian(vars_out, za + zb, ma + mb)

    def divide(self, other: "CanonicalGaussian") -> "CanonicalGaussian":
        """Quotient of densities; other's variables must be a subset."""
        for v in other.vars:
            if not self.has(v):
                raise StructuralError(f"divisor variable {v} absent from dividend")
        out = self.reordered()
        zb, mb = other._embed(out.vars, out._slices, out.dim)
        return CanonicalGaussian(out.vars, out.zeta - zb, out.lam - mb)

    def scaled(self, c: float) -> "CanonicalGaussian":
        return CanonicalGaussian(self.vars, c * self.zeta, c * self.lam)

    def marginalize(self, keep) -> "CanonicalGaussian":
        """Marginal over `keep` via Schur complement on the eliminated block."""
        keep = set(keep)
        for v in keep:
            if not self.has(v):
                raise StructuralError(f"cannot keep unknown variable {v}")
        elim = [v for v in self.vars if v not in keep]
        if not elim:
            return self.reordered()
        kvars = sort_vars(keep)
        ki = np.concatenate(
            [np.arange(self._slices[v].start, self._slices[v].stop) for v in kvars]
        ) if kvars else np.zeros(0, dtype=int)
        ei = np.concatenate(
            [np.arange(self._slices[v].start, self._slices[v].stop) for v in elim]
        )
        lam_kk = self.lam[np.ix_(ki, ki)]
        lam_ke = self.lam[np.ix_(ki, ei)]
        lam_ee = self.lam[np.ix_(ei, ei)]
        z_k = self.zeta[ki]
        z_e = self.zeta[ei]

        rhs = np.column_stack([lam_ke.T, z_e])
        sol = None
        try:
            # fast path: PD block, condition estimated from the Cholesky diagonal
            c = np.linalg.cholesky(lam_ee)
            d = np.diagonal(c)
            if (d.max() / d.min()) ** 2 <= COND_LIMIT:
                sol = np.linalg.solve(c.T, np.linalg.solve(c, rhs))
        except np.linalg.LinAlgError:
            pass
        if sol is None:
            cond = np.linalg.cond(lam_ee) if lam_ee.size else 1.0
            if not np.isfinite(cond) or cond > COND_LIMIT:
                lam_ee = lam_ee + REG_EPS * np.eye(lam_ee.shape[0])
                cond = np.linalg.cond(lam_ee)
                if not np.isfinite(cond) or cond > 1e15:
                    raise NumericalError(
                        "eliminated block is singular beyond regularization",
                        condition=cond,
                    )
            sol = np.linalg.solve(lam_ee, rhs)
        w = sol[:, :-1]
        u = sol[:, -1]
        lam_out = lam_kk - lam_ke @ w
        z_out = z_k - lam_ke @ u
        return CanonicalGaussian(kvars, z_out, lam_out)

    # -- moment form ---------------------------------------------------

    def to_moment(self):
        """Return (mean, covariance); requires a PD information matrix."""
        try:
            c = np.linalg.cholesky(self.lam)
        except np.linalg.LinAlgError as e:
            raise NumericalError("information matrix is not positive definite") from e
        cinv = np.linalg.solve(c, np.eye(self.dim))
        cov = _symmetrize(cinv.T @ cinv)
        mean = cov @ self.zeta
        return mean, cov

    def mean(self) -> np.ndarray:
        return self.to_moment()[0]


# -- spectral helpers used by the conservative filter ------------------


def min_eigenvalue(m: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return np.inf
    if np.max(np.abs(m - m.T)) > _SYM_TOL * max(1.0, np.max(np.abs(m))):
        raise StructuralError("min_eigenvalue requires a symmetric matrix")
    return float(np.linalg.eigvalsh((m + m.T) / 2.0).min())


def deflation_constant(lam_tr: np.ndarray, lam_sp: np.ndarray,
                       cutoff: float = PINV_CUTOFF) -> float:
    """Largest scale c in (0, 1] such that lam_tr - c*lam_sp stays PSD.

    Computed as the minimal eigenvalue of S lam_tr S with S the
    pseudo-inverse square root of lam_sp (eigenvalues below `cutoff`
    dropped), restricted to the range of lam_sp.  Values above 1 mean the
    sparse matrix is already dominated and no deflation is needed.
    """
    lam_tr = _symmetrize(np.asarray(lam_tr, dtype=float))
    lam_sp = _symmetrize(np.asarray(lam_sp, dtype=float))
    if lam_tr.shape != lam_sp.shape:
        raise StructuralError("matrices must share dimensions")
    if lam_sp.size == 0:
        return 1.0
    if np.array_equal(lam_tr, lam_sp):
        # exact sparsification; skip the whitening round-off
        return 1.0
    w, v = np.linalg.eigh(lam_sp)
    kept = w > cutoff
    if not kept.any():
        return 1.0
    basis = v[:, kept] / np.sqrt(w[kept])
    q = basis.T @ lam_tr @ basis
    lam_min = float(np.linalg.eigvalsh((q + q.T) / 2.0).min())
    if lam_min <= 0.0:
        raise NumericalError(
            f"deflation constant is non-positive ({lam_min:g}); "
            "inputs are inconsistent"
        )
    return min(lam_min, 1.0)


def deflate(a: CanonicalGaussian, lam_tr: np.ndarray, zeta_tr: np.ndarray,
            lam_min: float) -> CanonicalGaussian:
    """Rescale a sparse Gaussian by lam_min, pinning its mean to the true one.

    Output information matrix is ``lam_min * a.lam``; the information
    vector is chosen so the output mean equals ``lam_tr^-1 zeta_tr``
    exactly.
    """
    lam_tr = np.asarray(lam_tr, dtype=float)
    zeta_tr = np.asarray(zeta_tr, dtype=float).reshape(-1)
    try:
        c = np.linalg.cholesky(_symmetrize(lam_tr))
    except np.linalg.LinAlgError as e:
        raise NumericalError("true information matrix is singular") from e
    mean_tr = np.linalg.solve(c.T, np.linalg.solve(c, zeta_tr))
    lam_out = lam_min * a.lam
    return CanonicalGaussian(a.vars, lam_out @ mean_tr, lam_out)
