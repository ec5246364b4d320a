"""Local objectives, dataset handling, and stochastic gradient estimators.

Two problem families share one interface:

* capped-l1 hinge SVM: per-sample loss max(1 - b a'x, 0) plus the capped
  penalty lam * sum_j min(|x_j|, alpha), nonsmooth and nonconvex.
* synthetic piecewise: per-sample |c'x| + max(u'x + p, v'x + q), whose
  uniform-ball smoothing has a closed 1-D integral form, giving an
  estimator-independent reference for smoothed gradients.

Estimators draw one local sample plus one perturbation direction per call:
the first-order estimator returns a subgradient at a ball-perturbed point,
the zeroth-order estimator a two-point finite difference along a sphere
direction. One zeroth-order call is charged as one two-point query (two
raw function evaluations); both counts are reported.

Subgradient tie-breaking is deterministic everywhere: sign(0) = 0 for the
capped penalty and the |c'x| term, hinge at margin exactly 1 takes the
active branch, tied max pieces take the first piece.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .rng import ball, sphere, stream


class OracleError(ValueError):
    pass


class LibsvmParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


# -- dataset ----------------------------------------------------------------


@dataclass(frozen=True)
class DataSample:
    """One sparse labeled sample: strictly increasing 0-based indices."""

    indices: np.ndarray
    values: np.ndarray
    label: int

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DataSample)
            and self.label == other.label
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def dense(self, d: int) -> np.ndarray:
        out = np.zeros(d)
        out[self.indices] = self.values
        return out


_LABEL_MAP = {"+1": 1, "1": 1, "-1": -1, "0": -1}
_FEATURE_RE = re.compile(r"^(\d+):([^\s:]+)$")


def load_libsvm(path: str, d_hint: int) -> list[DataSample]:
    """Parse a LIBSVM text file: ``label idx:val idx:val ...`` per line.

    Indices are 1-based ascending in the file and converted to 0-based;
    labels may follow the {-1,+1} or {0,1} convention and are mapped to
    {-1,+1}. Malformed lines raise LibsvmParseError with their 1-based
    line number and column.
    """
    samples = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            samples.append(_parse_line(line.rstrip("\n"), lineno, d_hint))
    return samples


def parse_libsvm_lines(text: str, d_hint: int) -> list[DataSample]:
    samples = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            samples.append(_parse_line(line, lineno, d_hint))
    return samples


def _parse_line(line: str, lineno: int, d_hint: int) -> DataSample:
    tokens = line.split()
    cursor = 0

    def column_of(token: str) -> int:
        return line.index(token, cursor) + 1

    label_tok = tokens[0]
    if label_tok not in _LABEL_MAP:
        raise LibsvmParseError(
            f"label {label_tok!r} not in -1/+1 (or 0/1) convention",
            lineno,
            column_of(label_tok),
        )
    label = _LABEL_MAP[label_tok]
    cursor = line.index(label_tok) + len(label_tok)

    indices: list[int] = []
    values: list[float] = []
    prev = -1
    for tok in tokens[1:]:
        col = column_of(tok)
        m = _FEATURE_RE.match(tok)
        if m is None:
            raise LibsvmParseError(f"malformed feature token {tok!r}", lineno, col)
        idx = int(m.group(1)) - 1
        if idx < 0:
            raise LibsvmParseError("feature index must be >= 1", lineno, col)
        if idx >= d_hint:
            raise LibsvmParseError(
                f"feature index {idx + 1} exceeds dimension {d_hint}", lineno, col
            )
        if idx <= prev:
            raise LibsvmParseError(
                f"feature index {idx + 1} not strictly increasing", lineno, col
            )
        try:
            val = float(m.group(2))
        except ValueError:
            raise LibsvmParseError(
                f"feature value {m.group(2)!r} is not a number", lineno, col
            ) from None
        if not np.isfinite(val):
            raise LibsvmParseError("feature value must be finite", lineno, col)
        prev = idx
        indices.append(idx)
        values.append(val)
        cursor = line.index(tok, cursor) + len(tok)

    return DataSample(
        indices=np.array(indices, dtype=np.int64),
        values=np.array(values, dtype=np.float64),
        label=label,
    )


def _format_value(v: float) -> str:
    text = repr(float(v))
    return text[:-2] if text.endswith(".0") else text


def serialize_libsvm(samples: list[DataSample]) -> str:
    """Canonical text form: ``{+1,-1} idx:val ...`` with single spaces,
    1-based indices, shortest-round-trip value formatting."""
    lines = []
    for s in samples:
        parts = [f"{s.label:+d}"]
        for idx, val in zip(s.indices, s.values):
            parts.append(f"{idx + 1}:{_format_value(val)}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def shard(data: list[DataSample], n: int, seed: int) -> list[list[DataSample]]:
    """Seeded shuffle then round-robin split into n shards of near-equal size."""
    if n < 1:
        raise OracleError(f"client count must be >= 1, got {n}")
    if n > len(data):
        raise OracleError(f"cannot shard {len(data)} samples across {n} clients")
    perm = stream(seed, "shard", 0).permutation(len(data))
    return [[data[perm[i]] for i in range(c, len(data), n)] for c in range(n)]


def subsample(data: list[DataSample], k: int, seed: int) -> list[DataSample]:
    """Deterministically keep k samples (seeded choice without replacement)."""
    if k >= len(data):
        return list(data)
    keep = stream(seed, "shard", 1).choice(len(data), size=k, replace=False)
    keep.sort()
    return [data[i] for i in keep]


def write_synthetic_libsvm(path: str, m: int, d: int, seed: int, nnz_per_row: int = 14) -> None:
    """Generate a sparse binary-feature classification set in LIBSVM format.

    Planted linear labels with 10% flip noise over 0/1-valued features,
    shaped like the public adult-income style benchmarks (d in the low
    hundreds, a dozen active features per row).
    """
    rng = stream(seed, "datagen", 1)
    w_star = rng.standard_normal(d)
    samples = []
    for _ in range(m):
        k = min(d, max(1, int(rng.poisson(nnz_per_row))))
        idx = np.sort(rng.choice(d, size=k, replace=False)).astype(np.int64)
        vals = np.ones(k)
        score = w_star[idx].sum() + 0.5 * rng.standard_normal()
        label = 1 if score > 0 else -1
        if rng.random() < 0.10:
            label = -label
        samples.append(DataSample(indices=idx, values=vals, label=label))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(serialize_libsvm(samples))


# -- problems ----------------------------------------------------------------


def _client_slices(counts: list[int]) -> list[slice]:
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return [slice(int(offsets[i]), int(offsets[i + 1])) for i in range(len(counts))]


@dataclass
class CappedHingeSvmProblem:
    """Binary classifier with hinge loss and capped-l1 penalty.

    Per-sample loss F(x; (a, b)) = max(1 - b a'x, 0) + lam * sum_j
    min(|x_j|, alpha); each client owns a contiguous row block of the dense
    (m, d) feature matrix. Immutable after construction.
    """

    d: int
    n: int
    lam: float
    alpha: float
    features: np.ndarray = field(repr=False)  # (m, d)
    labels: np.ndarray = field(repr=False)  # (m,)
    slices: list[slice] = field(repr=False)
    lipschitz_L: float = 0.0
    grad_bound_G: float = 0.0

    kind = "capped_l1_svm"

    @classmethod
    def from_shards(
        cls,
        shards: list[list[DataSample]],
        d: int,
        lam: float | None = None,
        alpha: float = 2.0,
        lipschitz_L: float | None = None,
        grad_bound_G: float | None = None,
    ) -> "CappedHingeSvmProblem":
        if any(len(s) == 0 for s in shards):
            raise OracleError("every client shard must be nonempty")
        sizes = [len(s) for s in shards]
        if max(sizes) - min(sizes) > 1:
            raise OracleError(f"shard sizes must differ by at most 1, got {sizes}")
        m = sum(sizes)
        if lam is None:
            lam = 1e-5 / m
        if lam <= 0 or alpha <= 0:
            raise OracleError("lam and alpha must be positive")
        features = np.zeros((m, d))
        labels = np.empty(m)
        row = 0
        for shard_samples in shards:
            for s in shard_samples:
                if len(s.indices) and s.indices[-1] >= d:
                    raise OracleError(f"sample index {s.indices[-1]} >= d = {d}")
                features[row, s.indices] = s.values
                labels[row] = s.label
                row += 1
        row_norms = np.linalg.norm(features, axis=1)
        bound = float(row_norms.max()) + lam * np.sqrt(d)
        return cls(
            d=d,
            n=len(shards),
            lam=lam,
            alpha=alpha,
            features=features,
            labels=labels,
            slices=_client_slices(sizes),
            lipschitz_L=lipschitz_L if lipschitz_L is not None else bound,
            grad_bound_G=grad_bound_G if grad_bound_G is not None else bound,
        )

    def shard_size(self, client: int) -> int:
        s = self.slices[client]
        return s.stop - s.start

    def _row(self, client: int, j: int) -> int:
        if not 0 <= client < self.n:
            raise OracleError(f"client index {client} out of range [0, {self.n})")
        if not 0 <= j < self.shard_size(client):
            raise OracleError(
                f"sample index {j} out of range [0, {self.shard_size(client)}) "
                f"for client {client}"
            )
        return self.slices[client].start + j

    def sample_value(self, client: int, j: int, x: np.ndarray) -> float:
        row = self._row(client, j)
        margin = self.labels[row] * float(self.features[row] @ x)
        hinge = max(1.0 - margin, 0.0)
        pen = self.lam * float(np.minimum(np.abs(x), self.alpha).sum())
        return hinge + pen

    def sample_subgradient(self, client: int, j: int, x: np.ndarray) -> np.ndarray:
        row = self._row(client, j)
        a = self.features[row]
        b = self.labels[row]
        g = self.lam * np.sign(x) * (np.abs(x) < self.alpha)
        if b * float(a @ x) <= 1.0:
            g = g - b * a
        return g

    def per_sample_lipschitz(self, client: int, j: int) -> float:
        row = self._row(client, j)
        return float(np.linalg.norm(self.features[row])) + self.lam * np.sqrt(self.d)

    def full_value(self, x: np.ndarray) -> float:
        return float(
            _kernels.svm_full_values(
                self.features, self.labels, x[None, :], self.lam, self.alpha
            )[0]
        )

    def full_values(self, X: np.ndarray) -> np.ndarray:
        return _kernels.svm_full_values(self.features, self.labels, X, self.lam, self.alpha)

    def full_subgradient(self, x: np.ndarray) -> np.ndarray:
        return self.full_subgradients(x[None, :])[0]

    def full_subgradients(self, X: np.ndarray) -> np.ndarray:
        return _kernels.svm_full_subgradients(
            self.features, self.labels, X, self.lam, self.alpha
        )


def svm_value(p: CappedHingeSvmProblem, client: int, j: int, x: np.ndarray) -> float:
    return p.sample_value(client, j, x)


def svm_subgradient(p: CappedHingeSvmProblem, client: int, j: int, x: np.ndarray) -> np.ndarray:
    return p.sample_subgradient(client, j, x)


@dataclass
class PiecewiseProblem:
    """Synthetic nonsmooth per-sample loss |c'x| + max(u'x + p, v'x + q).

    The uniform-ball smoothed gradient reduces to 1-D integrals over the
    marginal of one ball coordinate, so smoothed gradients are computable
    to near machine precision without touching any estimator code.
    """

    d: int
    n: int
    C: np.ndarray = field(repr=False)  # (m, d)
    U: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)  # (m,)
    q: np.ndarray = field(repr=False)
    slices: list[slice] = field(repr=False)
    lipschitz_L: float = 0.0
    grad_bound_G: float = 0.0

    kind = "synthetic_piecewise"

    @classmethod
    def generate(cls, n: int, d: int, samples_per_client: int, seed: int) -> "PiecewiseProblem":
        rng = stream(seed, "datagen", 2)
        m = n * samples_per_client
        C = rng.standard_normal((m, d))
        C *= (rng.uniform(0.5, 1.5, size=m) / np.linalg.norm(C, axis=1))[:, None]
        U = rng.standard_normal((m, d))
        U *= (rng.uniform(0.5, 1.5, size=m) / np.linalg.norm(U, axis=1))[:, None]
        V = rng.standard_normal((m, d))
        V *= (rng.uniform(0.5, 1.5, size=m) / np.linalg.norm(V, axis=1))[:, None]
        p = rng.uniform(-1.0, 1.0, size=m)
        q = rng.uniform(-1.0, 1.0, size=m)
        return cls.from_arrays(n, C, U, V, p, q)

    @classmethod
    def from_arrays(cls, n, C, U, V, p, q) -> "PiecewiseProblem":
        C, U, V = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (C, U, V))
        p = np.atleast_1d(np.asarray(p, dtype=np.float64))
        q = np.atleast_1d(np.asarray(q, dtype=np.float64))
        m, d = C.shape
        if m % n != 0:
            raise OracleError(f"sample count {m} not divisible by n = {n}")
        per_sample_L = np.linalg.norm(C, axis=1) + np.maximum(
            np.linalg.norm(U, axis=1), np.linalg.norm(V, axis=1)
        )
        bound = float(per_sample_L.max())
        return cls(
            d=d,
            n=n,
            C=C,
            U=U,
            V=V,
            p=p,
            q=q,
            slices=_client_slices([m // n] * n),
            lipschitz_L=bound,
            grad_bound_G=bound,
        )

    def shard_size(self, client: int) -> int:
        s = self.slices[client]
        return s.stop - s.start

    def _row(self, client: int, j: int) -> int:
        if not 0 <= client < self.n:
            raise OracleError(f"client index {client} out of range [0, {self.n})")
        if not 0 <= j < self.shard_size(client):
            raise OracleError(f"sample index {j} out of range for client {client}")
        return self.slices[client].start + j

    def sample_value(self, client: int, j: int, x: np.ndarray) -> float:
        r = self._row(client, j)
        return abs(float(self.C[r] @ x)) + max(
            float(self.U[r] @ x) + self.p[r], float(self.V[r] @ x) + self.q[r]
        )

    def sample_subgradient(self, client: int, j: int, x: np.ndarray) -> np.ndarray:
        r = self._row(client, j)
        g = np.sign(float(self.C[r] @ x)) * self.C[r]
        if float(self.U[r] @ x) + self.p[r] >= float(self.V[r] @ x) + self.q[r]:
            g = g + self.U[r]
        else:
            g = g + self.V[r]
        return g

    def per_sample_lipschitz(self, client: int, j: int) -> float:
        r = self._row(client, j)
        return float(
            np.linalg.norm(self.C[r])
            + max(np.linalg.norm(self.U[r]), np.linalg.norm(self.V[r]))
        )

    def full_value(self, x: np.ndarray) -> float:
        return float(self.full_values(x[None, :])[0])

    def full_values(self, X: np.ndarray) -> np.ndarray:
        abs_part = np.abs(X @ self.C.T)
        max_part = np.maximum(X @ self.U.T + self.p, X @ self.V.T + self.q)
        return (abs_part + max_part).mean(axis=1)

    def full_subgradient(self, x: np.ndarray) -> np.ndarray:
        return self.full_subgradients(x[None, :])[0]

    def full_subgradients(self, X: np.ndarray) -> np.ndarray:
        m = self.C.shape[0]
        signs = np.sign(X @ self.C.T)  # (q, m)
        first = (X @ self.U.T + self.p) >= (X @ self.V.T + self.q)
        out = signs @ self.C
        out += first @ self.U
        out += (~first) @ self.V
        return out / m

    # smoothed gradient of the client-i average via 1-D marginal integrals
    def smoothed_gradient(self, client: int, w: np.ndarray, mu: float, nodes: int = 96) -> np.ndarray:
        """Gradient of the uniform-ball smoothing of f_client at w.

        Uses E[sign(a + beta * t)] and P(a + beta * t > 0) where t is one
        coordinate of a uniform unit-ball point, integrated piecewise with
        Gauss-Legendre so the indicator breakpoints are node-aligned.
        """
        if mu <= 0:
            raise OracleError("smoothing radius must be > 0")
        s = self.slices[client]
        C, U, V = self.C[s], self.U[s], self.V[s]
        p, q = self.p[s], self.q[s]
        m = C.shape[0]

        a_abs = C @ w
        beta_abs = mu * np.linalg.norm(C, axis=1)
        exp_sign = np.array(
            [_marginal_expected_sign(a_abs[j], beta_abs[j], self.d, nodes) for j in range(m)]
        )

        diff = U - V
        a_max = diff @ w + (p - q)
        beta_max = mu * np.linalg.norm(diff, axis=1)
        prob_first = np.array(
            [_marginal_prob_positive(a_max[j], beta_max[j], self.d, nodes) for j in range(m)]
        )

        grad = exp_sign @ C + V.sum(axis=0) + prob_first @ diff
        return grad / m


@lru_cache(maxsize=8)
def _leggauss(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(nodes)


@lru_cache(maxsize=64)
def _marginal_norm(d: int, nodes: int) -> float:
    xf, wf = _leggauss(nodes)
    return float(np.sum(wf * (1.0 - xf * xf) ** ((d - 1) / 2.0)))


def _marginal_density_mass(lo: float, hi: float, d: int, nodes: int) -> float:
    """integral of (1 - t^2)^((d-1)/2) over [lo, hi], normalized over [-1, 1]."""
    x, wts = _leggauss(nodes)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    t = mid + half * x
    unnorm = half * np.sum(wts * (1.0 - t * t) ** ((d - 1) / 2.0))
    return unnorm / _marginal_norm(d, nodes)


def _marginal_prob_positive(a: float, beta: float, d: int, nodes: int) -> float:
    """P(a + beta t > 0) for t one coordinate of a uniform unit-ball draw."""
    if beta == 0.0:
        return 1.0 if a > 0 else 0.0
    t0 = -a / beta
    if t0 <= -1.0:
        return 1.0
    if t0 >= 1.0:
        return 0.0
    return _marginal_density_mass(t0, 1.0, d, nodes)


def _marginal_expected_sign(a: float, beta: float, d: int, nodes: int) -> float:
    return 2.0 * _marginal_prob_positive(a, beta, d, nodes) - 1.0


# -- estimators ---------------------------------------------------------------


@dataclass(frozen=True)
class OracleSample:
    """Stochastic gradient estimate plus its oracle accounting.

    oracle_calls_charged is 1 per estimator call (a zeroth-order call is
    one two-point query); function_evals counts raw evaluations (0 for
    first-order, 2 for zeroth-order).
    """

    g: np.ndarray
    oracle_calls_charged: int
    function_evals: int


def first_order_estimator(problem, client: int, w: np.ndarray, mu: float,
                          rng_xi: np.random.Generator, rng_z: np.random.Generator) -> OracleSample:
    """Subgradient of one random local sample at w + mu * z, z uniform in
    the unit ball."""
    if mu < 0:
        raise OracleError(f"perturbation radius must be >= 0, got {mu}")
    m = problem.shard_size(client)
    if m == 0:
        raise OracleError(f"client {client} has an empty shard")
    j = int(rng_xi.integers(m))
    z = ball(rng_z, problem.d)
    g = problem.sample_subgradient(client, j, w + mu * z)
    return OracleSample(g=g, oracle_calls_charged=1, function_evals=0)


def zeroth_order_estimator(problem, client: int, w: np.ndarray, mu: float,
                           rng_xi: np.random.Generator, rng_z: np.random.Generator) -> OracleSample:
    """Two-point estimate (d / 2 mu) (F(w + mu z) - F(w - mu z)) z with z
    uniform on the unit sphere."""
    if mu <= 0:
        raise OracleError(f"smoothing radius must be > 0, got {mu}")
    m = problem.shard_size(client)
    if m == 0:
        raise OracleError(f"client {client} has an empty shard")
    j = int(rng_xi.integers(m))
    z = sphere(rng_z, problem.d)
    f_plus = problem.sample_value(client, j, w + mu * z)
    f_minus = problem.sample_value(client, j, w - mu * z)
    g = (problem.d / (2.0 * mu)) * (f_plus - f_minus) * z
    return OracleSample(g=g, oracle_calls_charged=1, function_evals=2)
