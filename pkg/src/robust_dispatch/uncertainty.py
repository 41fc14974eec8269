"""Data-driven demand uncertainty sets.

Three representations over the concatenated demand vector (dimension
``tau*n``): componentwise boxes from bootstrapped order statistics,
polytopes ``{r >= 0 : sum_k A_k r^k <= b}``, and mean/covariance sets
``{r >= 0 : r = center + y + C^T w, |y| <= gamma1, |w| <= w_bound}``
whose radii come from bootstrapped moment deviations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from . import textio
from .ingest import SampleSet


class EmptySetError(ValueError):
    """The selected rank falls outside the sample range."""


@dataclass(frozen=True)
class BootstrapConfig:
    """Knobs for the bootstrap threshold construction.

    n_boot is the number of resamples; resample_size is the number of
    draws (with replacement) per resample and defaults to n_boot.
    """

    n_boot: int
    alpha_h: float
    epsilon: float
    seed: int = 0
    resample_size: int | None = None
    cov_norm: str = "fro"  # "fro" | "spectral", see bootstrap_soc

    def __post_init__(self):
        if self.n_boot < 2:
            raise ValueError("n_boot must be >= 2")
        if not (0.0 < self.alpha_h < 1.0):
            raise ValueError("alpha_h must lie in (0, 1)")
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must lie in (0, 1)")
        if self.resample_size is not None and self.resample_size < 2:
            raise ValueError("resample_size must be >= 2")
        if self.cov_norm not in ("fro", "spectral"):
            raise ValueError("cov_norm must be 'fro' or 'spectral'")

    @property
    def effective_resample_size(self) -> int:
        return self.n_boot if self.resample_size is None else self.resample_size


@dataclass(frozen=True)
class BoxSet:
    """Componentwise interval set {lower <= r <= upper}, lower >= 0."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        up = np.asarray(self.upper, dtype=float)
        lo.setflags(write=False)
        up.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        if lo.shape != up.shape or lo.ndim != 1:
            raise ValueError("bounds must be 1-D vectors of equal length")
        if np.any(lo < 0):
            raise ValueError("lower bounds must be >= 0")
        if np.any(lo > up):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def dim(self) -> int:
        return self.lower.size

    def support(self, c: np.ndarray) -> float:
        """max over the box of c . r (componentwise corner selection)."""
        c = np.asarray(c, dtype=float)
        return float(np.sum(np.where(c >= 0, c * self.upper, c * self.lower)))

    def vertices(self, cap: int = 1 << 20) -> np.ndarray:
        if 2**self.dim > cap:
            raise ValueError(f"vertex enumeration blow-up: 2^{self.dim} > {cap}")
        corners = np.stack([self.lower, self.upper], axis=0)
        grids = np.meshgrid(*[corners[:, i] for i in range(self.dim)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


@dataclass(frozen=True)
class PolytopeSet:
    """Stage-block polytope {r >= 0 : sum_k A_k r^k <= b}.

    With per_stage=True the constraints decouple: stage k obeys
    A_k r^k <= b_stages[k] independently (b is unused then).
    """

    A: tuple[np.ndarray, ...]
    b: np.ndarray | None = None
    b_stages: tuple[np.ndarray, ...] | None = None
    per_stage: bool = False

    def __post_init__(self):
        A = tuple(np.asarray(a, dtype=float) for a in self.A)
        for a in A:
            a.setflags(write=False)
        object.__setattr__(self, "A", A)
        if not A:
            raise ValueError("at least one stage block required")
        n = A[0].shape[1]
        if any(a.ndim != 2 or a.shape[1] != n for a in A):
            raise ValueError("stage blocks must share the region dimension")
        if self.per_stage:
            if self.b_stages is None or len(self.b_stages) != len(A):
                raise ValueError("per-stage polytope needs one rhs per stage")
            bs = tuple(np.asarray(v, dtype=float) for v in self.b_stages)
            for a, v in zip(A, bs):
                v.setflags(write=False)
                if v.shape != (a.shape[0],):
                    raise ValueError("per-stage rhs shape mismatch")
            object.__setattr__(self, "b_stages", bs)
        else:
            if self.b is None:
                raise ValueError("coupled polytope needs a shared rhs")
            b = np.asarray(self.b, dtype=float)
            b.setflags(write=False)
            object.__setattr__(self, "b", b)
            if any(a.shape[0] != b.size for a in A):
                raise ValueError("stage blocks must match the shared rhs rows")

    @property
    def tau(self) -> int:
        return len(self.A)

    @property
    def n(self) -> int:
        return self.A[0].shape[1]

    @property
    def dim(self) -> int:
        return self.tau * self.n

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Rows (A_full, b_full) with A_full r <= b_full over R^{tau*n}.

        Per-stage constraints stack block-diagonally; coupled constraints
        concatenate the stage blocks horizontally.
        """
        if self.per_stage:
            rows = sum(a.shape[0] for a in self.A)
            A_full = np.zeros((rows, self.dim))
            b_full = np.concatenate([np.asarray(v) for v in self.b_stages])
            r0 = 0
            for k, a in enumerate(self.A):
                A_full[r0 : r0 + a.shape[0], k * self.n : (k + 1) * self.n] = a
                r0 += a.shape[0]
            return A_full, b_full
        return np.hstack(self.A), np.asarray(self.b, dtype=float).copy()

    def as_coupled(self) -> "PolytopeSet":
        """Equivalent coupled representation (block-diagonal stacking)."""
        if not self.per_stage:
            return self
        A_full, b_full = self.stacked()
        blocks = tuple(
            A_full[:, k * self.n : (k + 1) * self.n] for k in range(self.tau)
        )
        return PolytopeSet(A=blocks, b=b_full, per_stage=False)

    def feasible_point(self) -> np.ndarray:
        """A point of {r >= 0 : A r <= b}; raises if the set is empty."""
        from scipy.optimize import linprog

        A_full, b_full = self.stacked()
        res = linprog(
            c=np.zeros(self.dim),
            A_ub=A_full,
            b_ub=b_full,
            bounds=[(0, None)] * self.dim,
            method="highs",
        )
        if not res.success:
            raise EmptySetError("polytope is empty (feasibility probe failed)")
        return np.asarray(res.x, dtype=float)

    def support(self, c: np.ndarray) -> float:
        """max over the set of c . r, solved exactly as a linear program."""
        from scipy.optimize import linprog

        A_full, b_full = self.stacked()
        res = linprog(
            c=-np.asarray(c, dtype=float),
            A_ub=A_full,
            b_ub=b_full,
            bounds=[(0, None)] * self.dim,
            method="highs",
        )
        if res.status == 3:
            raise ValueError("support is unbounded (polytope not compact)")
        if not res.success:
            raise EmptySetError("polytope is empty (support probe failed)")
        return float(-res.fun)


@dataclass(frozen=True)
class SocSet:
    """Mean/covariance demand set.

    Members are r = center + y + C^T w with |y|_2 <= gamma1 and
    |w|_2 <= sqrt((1 - epsilon)/epsilon), intersected with r >= 0.
    C is upper-triangular with C^T C = sigma_hat + gamma2 * I.
    """

    center: np.ndarray
    gamma1: float
    gamma2: float
    C: np.ndarray
    epsilon: float
    sigma_hat: np.ndarray | None = None

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        C = np.asarray(self.C, dtype=float)
        center.setflags(write=False)
        C.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "C", C)
        if self.sigma_hat is not None:
            sh = np.asarray(self.sigma_hat, dtype=float)
            sh.setflags(write=False)
            object.__setattr__(self, "sigma_hat", sh)
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must lie in (0, 1)")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("radii must be nonnegative")
        d = center.size
        if C.shape != (d, d):
            raise ValueError("C must be square of the center dimension")
        if np.any(np.abs(np.tril(C, -1)) > 0):
            raise ValueError("C must be upper-triangular")

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def w_bound(self) -> float:
        return math.sqrt((1.0 - self.epsilon) / self.epsilon)

    def support(self, c: np.ndarray) -> float:
        """max of c . r over the set without the r >= 0 side constraint."""
        c = np.asarray(c, dtype=float)
        return float(
            c @ self.center
            + self.gamma1 * np.linalg.norm(c)
            + self.w_bound * np.linalg.norm(self.C @ c)
        )

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Componentwise hull [min_i, max_i] (before the r >= 0 cut)."""
        radii = np.array(
            [
                self.gamma1 + self.w_bound * np.linalg.norm(self.C[:, i])
                for i in range(self.dim)
            ]
        )
        return self.center - radii, self.center + radii


UncertaintySet = BoxSet | PolytopeSet | SocSet


def compute_s_index(n_b: int, alpha_h: float, epsilon: float, tau: int, n: int) -> int:
    """Rank of the upper marginal bound among n_b sorted draws.

    Returns the smallest k in [1, n_b] such that the binomial upper tail
    two ranks above k falls below the Bonferroni share:
    P(X >= k + 2) <= alpha_h / (2 tau n) for X ~ Binomial(n_b, 1 - eps/(tau n)).
    Because the tail two above n_b - 1 is exactly zero, a rank always
    exists; n_b + 1 is returned only for the degenerate n_b < 2.
    """
    if n_b < 1:
        raise ValueError("n_b must be >= 1")
    if tau < 1 or n < 1:
        raise ValueError("tau and n must be >= 1")
    if not (0.0 < alpha_h < 1.0) or not (0.0 < epsilon < 1.0):
        raise ValueError("alpha_h and epsilon must lie in (0, 1)")
    d = tau * n
    if epsilon / d >= 1.0:
        raise ValueError("epsilon/(tau*n) must be < 1")
    p = 1.0 - epsilon / d
    log_thr = math.log(alpha_h) - math.log(2.0 * d)
    # tails are evaluated in log space; binom.sf(m) = P(X > m) = P(X >= m+1)
    if binom.logsf(1 + 1, n_b, p) <= log_thr:
        return 1
    lo, hi = 1, n_b
    if binom.logsf(n_b + 1, n_b, p) > log_thr:  # unreachable for n_b >= 1
        return n_b + 1
    while lo < hi:
        mid = (lo + hi) // 2
        if binom.logsf(mid + 1, n_b, p) <= log_thr:
            hi = mid
        else:
            lo = mid + 1
    return int(lo)


def marginal_order_stats(values, s: int) -> tuple[float, float]:
    """(lower, upper) = (v_(N-s+1), v_(s)) via 1-indexed ascending order."""
    v = np.sort(np.asarray(values, dtype=float))
    n_b = v.size
    if n_b == 0:
        raise ValueError("empty sample list")
    if s == n_b + 1:
        raise EmptySetError("set empty, increase N_B")
    if not (1 <= s <= n_b):
        raise ValueError(f"rank s={s} outside [1, {n_b}]")
    if n_b - s + 1 < 1:
        raise ValueError("complement rank out of range")
    return float(v[n_b - s]), float(v[s - 1])


def _ascending_rank(values: np.ndarray, k: int) -> np.ndarray:
    """k-th value (1-indexed) of each column after an ascending sort."""
    v = np.sort(values, axis=0)
    k = min(max(k, 1), v.shape[0])
    return v[k - 1]


def _spawned_rngs(seed: int, count: int) -> list[np.random.Generator]:
    # children are spawned up front so parallel and serial runs agree
    return [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(count)]


def required_resample_size(cfg: BootstrapConfig, dim: int) -> int:
    """Smallest power-of-two-ish resample size whose rank satisfies
    N - s + 1 < s, found by doubling from the analytic estimate."""
    d = dim
    est = max(8, int(math.log(2 * d / cfg.alpha_h) / -math.log1p(-cfg.epsilon / d)))
    size = est
    for _ in range(64):
        s = compute_s_index(size, cfg.alpha_h, cfg.epsilon, 1, d)
        if size - s + 1 < s:
            return size
        size *= 2
    raise ValueError("no feasible resample size found")


def bootstrap_box(sample_set: SampleSet, cfg: BootstrapConfig) -> BoxSet:
    """Componentwise box from bootstrapped order statistics.

    Each resample contributes per-component (lower, upper) order stats at
    the computed rank; the final upper bound is the ceil(n_boot*(1-alpha_h))
    ascending-rank value of the uppers and the final lower bound is the
    ceil(n_boot*alpha_h) ascending-rank value of the lowers, clamped at 0.
    """
    base = sample_set.matrix()
    n0, dim = base.shape
    size = cfg.effective_resample_size
    s = compute_s_index(size, cfg.alpha_h, cfg.epsilon, 1, dim)
    if not (size - s + 1 < s):
        need = required_resample_size(cfg, dim)
        raise ValueError(
            f"rank condition N_B - s + 1 < s fails at resample size {size} "
            f"(s={s}); increase N_B to at least {need}"
        )
    rngs = _spawned_rngs(cfg.seed, cfg.n_boot)
    uppers = np.empty((cfg.n_boot, dim))
    lowers = np.empty((cfg.n_boot, dim))
    for j, rng in enumerate(rngs):
        draw = base[rng.integers(0, n0, size=size)]
        draw.sort(axis=0)
        uppers[j] = draw[s - 1]
        lowers[j] = draw[size - s]
    k_up = math.ceil(cfg.n_boot * (1.0 - cfg.alpha_h))
    k_lo = math.ceil(cfg.n_boot * cfg.alpha_h)
    upper = _ascending_rank(uppers, k_up)
    lower = np.maximum(_ascending_rank(lowers, k_lo), 0.0)
    lower = np.minimum(lower, upper)
    return BoxSet(lower=lower, upper=upper)


def _cholesky_upper(mat: np.ndarray) -> np.ndarray:
    """Upper-triangular C with C^T C = mat, adding jitter for near-PSD
    inputs: 1e-10*trace/dim, doubled up to 8 times (absolute floor for
    the all-zero matrix)."""
    dim = mat.shape[0]
    base = 1e-10 * np.trace(mat) / dim
    if base <= 0:
        base = 1e-14
    jitter = 0.0
    for attempt in range(9):
        try:
            L = np.linalg.cholesky(mat + jitter * np.eye(dim))
            return L.T
        except np.linalg.LinAlgError:
            jitter = base * 2**attempt
    raise ValueError("Cholesky failed after jitter escalation")


def bootstrap_soc(sample_set: SampleSet, cfg: BootstrapConfig) -> SocSet:
    """Mean/covariance set with bootstrapped deviation radii.

    gamma1 ranks the resample-mean distances to the full-sample mean;
    gamma2 ranks the covariance deviations in the configured matrix norm
    (Frobenius by default, spectral via cfg.cov_norm).
    """
    base = sample_set.matrix()
    n0, dim = base.shape
    if n0 < 2:
        raise ValueError("need at least 2 samples for covariance")
    center = base.mean(axis=0)
    sigma_hat = np.cov(base, rowvar=False, ddof=1).reshape(dim, dim)
    size = cfg.effective_resample_size
    rngs = _spawned_rngs(cfg.seed, cfg.n_boot)
    g1 = np.empty(cfg.n_boot)
    g2 = np.empty(cfg.n_boot)
    for j, rng in enumerate(rngs):
        draw = base[rng.integers(0, n0, size=size)]
        mean_j = draw.mean(axis=0)
        cov_j = np.cov(draw, rowvar=False, ddof=1).reshape(dim, dim)
        g1[j] = np.linalg.norm(mean_j - center)
        dev = cov_j - sigma_hat
        g2[j] = np.linalg.norm(dev) if cfg.cov_norm == "fro" else np.linalg.norm(dev, 2)
    k = math.ceil(cfg.n_boot * (1.0 - cfg.alpha_h))
    gamma1 = float(_ascending_rank(g1[:, None], k)[0])
    gamma2 = float(_ascending_rank(g2[:, None], k)[0])
    C = _cholesky_upper(sigma_hat + gamma2 * np.eye(dim))
    return SocSet(
        center=center,
        gamma1=gamma1,
        gamma2=gamma2,
        C=C,
        epsilon=cfg.epsilon,
        sigma_hat=sigma_hat,
    )


def box_to_polytope(box: BoxSet, stages: int = 1) -> PolytopeSet:
    """Encode a box as a per-stage polytope: A_k = [I; -I], b_k = [u; -l]."""
    if box.dim % stages != 0:
        raise ValueError("box dimension must split evenly into stages")
    n = box.dim // stages
    eye = np.eye(n)
    A = tuple(np.vstack([eye, -eye]) for _ in range(stages))
    b_stages = tuple(
        np.concatenate([box.upper[k * n : (k + 1) * n], -box.lower[k * n : (k + 1) * n]])
        for k in range(stages)
    )
    return PolytopeSet(A=A, b_stages=b_stages, per_stage=True)


def set_width(box: BoxSet) -> float:
    """Total componentwise range of the box."""
    return float(np.sum(box.upper - box.lower))


def _trust_region_residual(C_T: np.ndarray, v: np.ndarray, radius: float) -> float:
    """min over |w| <= radius of |v - C_T w|_2, via the secular equation."""
    U, sing, Vt = np.linalg.svd(C_T)
    p = U.T @ v
    # unconstrained minimum-norm solution
    with np.errstate(divide="ignore"):
        w_coef = np.where(sing > 1e-13 * max(sing.max(), 1.0), p / sing, 0.0)
    if np.linalg.norm(w_coef) <= radius:
        resid = p - sing * w_coef
        return float(np.linalg.norm(resid))
    # |w(mu)| is decreasing in mu; bisect for |w(mu)| = radius
    def wnorm(mu):
        return float(np.linalg.norm(sing * p / (sing**2 + mu)))

    lo, hi = 0.0, 1.0
    while wnorm(hi) > radius:
        hi *= 2.0
        if hi > 1e30:
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if wnorm(mid) > radius:
            lo = mid
        else:
            hi = mid
    mu = hi
    w = Vt.T @ (sing * p / (sing**2 + mu))
    return float(np.linalg.norm(v - C_T @ w))


def membership(uset: UncertaintySet, r: np.ndarray, tol: float = 1e-9) -> bool:
    """Whether r belongs to the set, within additive tolerance tol."""
    r = np.asarray(r, dtype=float)
    if isinstance(uset, BoxSet):
        if r.size != uset.dim:
            raise ValueError("dimension mismatch")
        return bool(np.all(r >= uset.lower - tol) and np.all(r <= uset.upper + tol))
    if isinstance(uset, PolytopeSet):
        if r.size != uset.dim:
            raise ValueError("dimension mismatch")
        if np.any(r < -tol):
            return False
        A_full, b_full = uset.stacked()
        return bool(np.all(A_full @ r <= b_full + tol))
    if isinstance(uset, SocSet):
        if r.size != uset.dim:
            raise ValueError("dimension mismatch")
        if np.any(r < -tol):
            return False
        resid = _trust_region_residual(uset.C.T, r - uset.center, uset.w_bound)
        return bool(resid <= uset.gamma1 + tol)
    raise TypeError(f"unknown set type {type(uset)!r}")


def serialize_set(uset: UncertaintySet) -> str:
    """Dump a set to the tagged text format (17 significant digits)."""

    def writer(out):
        if isinstance(uset, BoxSet):
            textio.write_str(out, "type", "box")
            textio.write_int(out, "dim", uset.dim)
            textio.write_vector(out, "lower", uset.lower)
            textio.write_vector(out, "upper", uset.upper)
        elif isinstance(uset, PolytopeSet):
            textio.write_str(out, "type", "polytope")
            textio.write_int(out, "dim", uset.dim)
            textio.write_int(out, "stages", uset.tau)
            textio.write_int(out, "per_stage", 1 if uset.per_stage else 0)
            for k, a in enumerate(uset.A):
                textio.write_matrix(out, f"A{k}", a)
            if uset.per_stage:
                for k, v in enumerate(uset.b_stages):
                    textio.write_vector(out, f"b{k}", v)
            else:
                textio.write_vector(out, "b", uset.b)
        elif isinstance(uset, SocSet):
            textio.write_str(out, "type", "soc")
            textio.write_int(out, "dim", uset.dim)
            textio.write_scalar(out, "epsilon", uset.epsilon)
            textio.write_scalar(out, "gamma1", uset.gamma1)
            textio.write_scalar(out, "gamma2", uset.gamma2)
            textio.write_vector(out, "center", uset.center)
            textio.write_matrix(out, "C", uset.C)
            if uset.sigma_hat is not None:
                textio.write_matrix(out, "sigma_hat", uset.sigma_hat)
        else:
            raise TypeError(f"unknown set type {type(uset)!r}")

    return textio.dumps(writer)


def deserialize_set(text: str) -> UncertaintySet:
    r = textio.SectionReader(text)
    kind = r.read_str("type")
    if kind == "box":
        r.read_int("dim")
        return BoxSet(lower=r.read_vector("lower"), upper=r.read_vector("upper"))
    if kind == "polytope":
        r.read_int("dim")
        stages = r.read_int("stages")
        per_stage = bool(r.read_int("per_stage"))
        A = tuple(r.read_matrix(f"A{k}") for k in range(stages))
        if per_stage:
            b_stages = tuple(r.read_vector(f"b{k}") for k in range(stages))
            return PolytopeSet(A=A, b_stages=b_stages, per_stage=True)
        return PolytopeSet(A=A, b=r.read_vector("b"), per_stage=False)
    if kind == "soc":
        dim = r.read_int("dim")
        eps = r.read_scalar("epsilon")
        g1 = r.read_scalar("gamma1")
        g2 = r.read_scalar("gamma2")
        center = r.read_vector("center")
        C = r.read_matrix("C")
        sigma = r.read_matrix("sigma_hat") if r.peek_key() == "sigma_hat" else None
        del dim
        return SocSet(
            center=center, gamma1=g1, gamma2=g2, C=C, epsilon=eps, sigma_hat=sigma
        )
    raise ValueError(f"unknown set type tag {kind!r}")
