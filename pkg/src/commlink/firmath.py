"""FIR transfer-matrix algebra and the H2 model-matching objective.

The closed loop of interest is G11 - G12*R*G21 with R a strictly proper FIR
parameter.  The infinite H2 sum is truncated at a horizon carrying a
certified geometric tail bound, and the objective is exposed matrix-free
through apply/adjoint convolutions (FFT-backed) so the first-order solvers
never form a dense operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .commgraph import Graph
from .sysmodel import Partition, PlantModel, markov_stack, spectral_radius

__all__ = [
    "FirTM",
    "ObjectiveOracle",
    "fir_h2_norm",
    "truncation_horizon",
    "closed_loop_apply",
    "closed_loop_adjoint",
    "objective",
    "lipschitz",
    "recover_controller",
    "implementability_check",
]


@dataclass(frozen=True, eq=False)
class FirTM:
    """Finite impulse response transfer matrix: coefficients over t_min..t_max."""

    t_min: int
    coeffs: np.ndarray  # (t_max - t_min + 1, rows, cols)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 3:
            raise ValueError(f"coeffs must be a (steps, rows, cols) array, got ndim={c.ndim}")
        if self.t_min < 0:
            raise ValueError("t_min must be nonnegative")
        object.__setattr__(self, "coeffs", c)

    @property
    def t_max(self) -> int:
        return self.t_min + self.coeffs.shape[0] - 1

    @property
    def rows(self) -> int:
        return self.coeffs.shape[1]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[2]

    def coeff(self, t: int) -> np.ndarray:
        """Coefficient at lag t (zero outside the stored range)."""
        if self.t_min <= t <= self.t_max:
            return self.coeffs[t - self.t_min]
        return np.zeros((self.rows, self.cols))

    @classmethod
    def zeros(cls, rows: int, cols: int, t_min: int, t_max: int) -> "FirTM":
        return cls(t_min, np.zeros((t_max - t_min + 1, rows, cols)))

    @classmethod
    def from_doc(cls, doc: dict) -> "FirTM":
        for key in ("rows", "cols", "tMin", "tMax", "coeffs"):
            if key not in doc:
                raise ValueError(f"FIR document: missing field {key}")
        tm = cls(int(doc["tMin"]), np.array(doc["coeffs"], dtype=float))
        if tm.rows != int(doc["rows"]) or tm.cols != int(doc["cols"]):
            raise ValueError("FIR document: rows/cols fields disagree with coefficients")
        if tm.t_max != int(doc["tMax"]):
            raise ValueError("FIR document: tMax field disagrees with coefficient count")
        return tm

    def to_doc(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "tMin": self.t_min,
            "tMax": self.t_max,
            "coeffs": self.coeffs.tolist(),
        }


def fir_h2_norm(x: FirTM) -> float:
    """Root sum of squared Frobenius norms of the coefficients."""
    return float(np.sqrt(np.sum(x.coeffs**2)))


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def _growth_rate(A: np.ndarray, iters: int = 96, seed: int = 1234) -> float:
    """Power-iteration estimate of the spectral radius via the growth rate."""
    s = A.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(s)
    v /= np.linalg.norm(v)
    logs = []
    for _ in range(iters):
        v = A @ v
        nrm = np.linalg.norm(v)
        if nrm == 0.0:
            return 0.0
        logs.append(np.log(nrm))
        v /= nrm
    tail = logs[len(logs) // 2:]
    return float(np.exp(np.mean(tail)))


def truncation_horizon(plant: PlantModel, N: int, tol_tail: float = 1e-10) -> tuple[int, float]:
    """Pick a truncation horizon whose geometric tail bound is certified.

    Envelope constants for the three closed-loop channels come from a probe
    window of Markov coefficients against the inflated decay rate, and the
    parameter's summed coefficient mass is budgeted at 100*(1 + open-loop
    norm), far above anything a solver run produces at this scale.  Returns
    the smallest horizon >= N + 2 whose tail bound drops below ``tol_tail``
    times the open-loop head energy, together with that bound.
    """
    if N < 1:
        raise ValueError("parameter horizon N must be >= 1")
    if tol_tail <= 0:
        raise ValueError("tol_tail must be positive")
    rho = spectral_radius(plant.A)
    if rho >= 1.0:
        raise ValueError(f"open-loop stable plant required (spectral radius {rho:.6g})")
    rho_hat = 1.05 * _growth_rate(plant.A)
    if rho_hat >= 1.0:
        raise ValueError(
            f"inflated decay-rate estimate {rho_hat:.6g} >= 1; tail bound unavailable"
        )

    if rho_hat == 0.0:
        # nilpotent dynamics: find the last nonzero plant lag exactly
        last = 1
        x = np.eye(plant.s)
        for t in range(1, plant.s + 2):
            if np.any(x != 0.0):
                last = t
            x = plant.A @ x
        return max(N + 2, N + last + 1), 0.0

    window = max(64, 4 * plant.s, 2 * N + 8)
    g11 = markov_stack(plant, "11", window)
    g12 = markov_stack(plant, "12", window)
    g21 = markov_stack(plant, "21", window)
    pows = rho_hat ** np.arange(window + 1)
    c11 = float(np.max(np.linalg.norm(g11, axis=(1, 2)) / pows))
    c12 = float(np.max(np.linalg.norm(g12, axis=(1, 2)) / pows))
    c21 = float(np.max(np.linalg.norm(g21, axis=(1, 2)) / pows))
    head = float(np.sum(g11**2))
    r_ref = 100.0 * (1.0 + np.sqrt(head))
    beta = r_ref * c12 * c21 * rho_hat ** (-N)

    q = rho_hat**2
    floor = tol_tail * 1e-13 * (1.0 + c11**2)

    def term(t: int) -> float:
        return (c11 * rho_hat**t + beta * (t + 1) * rho_hat**t) ** 2

    terms = []
    t = N + 3
    while True:
        ft = term(t)
        terms.append(ft)
        q_eff = q * ((t + 2) / (t + 1)) ** 2
        if q_eff < 1.0 and ft * q_eff / (1.0 - q_eff) <= floor:
            remainder = ft * q_eff / (1.0 - q_eff)
            break
        t += 1
        if t > 2_000_000:
            raise RuntimeError("tail bound failed to certify within the horizon cap")

    # suffix[k] bounds the tail energy beyond lag N + 2 + k
    suffix = np.empty(len(terms) + 1)
    suffix[-1] = remainder
    for k in range(len(terms) - 1, -1, -1):
        suffix[k] = suffix[k + 1] + terms[k]

    t_hi = N + 2 + len(terms)
    g11_norms2 = np.linalg.norm(markov_stack(plant, "11", t_hi), axis=(1, 2)) ** 2
    head_cum = np.cumsum(g11_norms2)
    for k in range(len(terms) + 1):
        T = N + 2 + k
        if suffix[k] <= tol_tail * max(head_cum[T], 1e-12):
            return T, float(suffix[k])
    raise RuntimeError("tail bound search exhausted (unreachable)")


class ObjectiveOracle:
    """Matrix-free quadratic oracle for J(R) = ||head of G11 - G12*R*G21||^2.

    Precomputes Markov tables up to the certified truncation horizon and the
    FFTs of the two outer channels; ``lin``/``adj`` are then one padded FFT,
    a frequency-domain product, and an inverse transform each.  Immutable
    after construction, safe to share across threads.
    """

    def __init__(self, plant: PlantModel, N: int, tol_tail: float = 1e-10):
        rho = spectral_radius(plant.A)
        if rho >= 1.0:
            raise ValueError(f"open-loop stable plant required (spectral radius {rho:.6g})")
        self.plant = plant
        self.N = int(N)
        self.tol_tail = float(tol_tail)
        self.T_max, self.eps_tail = truncation_horizon(plant, self.N, tol_tail)
        T = self.T_max
        self.g11 = markov_stack(plant, "11", T)
        self._L = _next_pow2(2 * T + self.N + 4)
        self._g12F = np.fft.rfft(markov_stack(plant, "12", T), n=self._L, axis=0)
        self._g21F = np.fft.rfft(markov_stack(plant, "21", T), n=self._L, axis=0)
        self.open_loop_sq = float(np.sum(self.g11**2))

    @property
    def param_shape(self) -> tuple[int, int, int]:
        """Shape of the stacked parameter coefficients (N, p2, q2), lags 1..N."""
        return (self.N, self.plant.p2, self.plant.q2)

    def lin(self, r_arr: np.ndarray) -> np.ndarray:
        """Convolution G12 * R * G21 truncated to lags 0..T_max."""
        if r_arr.shape != self.param_shape:
            raise ValueError(f"parameter array must have shape {self.param_shape}")
        padded = np.zeros((self.N + 1,) + r_arr.shape[1:])
        padded[1:] = r_arr
        rF = np.fft.rfft(padded, n=self._L, axis=0)
        yF = np.einsum("fij,fjk,fkl->fil", self._g12F, rF, self._g21F)
        return np.fft.irfft(yF, n=self._L, axis=0)[: self.T_max + 1]

    def adj(self, seq: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`lin` under the stacked Frobenius inner product."""
        if seq.shape != self.g11.shape:
            raise ValueError(f"sequence must have shape {self.g11.shape}")
        sF = np.fft.rfft(seq, n=self._L, axis=0)
        zF = np.einsum(
            "fij,fik,flk->fjl", np.conj(self._g12F), sF, np.conj(self._g21F)
        )
        return np.fft.irfft(zF, n=self._L, axis=0)[1 : self.N + 1]

    def closed_loop(self, r_arr: np.ndarray) -> np.ndarray:
        return self.g11 - self.lin(r_arr)

    def objective_arr(self, r_arr: np.ndarray) -> float:
        return float(np.sum(self.closed_loop(r_arr) ** 2))

    def gradient_arr(self, r_arr: np.ndarray) -> np.ndarray:
        """Gradient of the head objective with respect to the parameter stack."""
        return -2.0 * self.adj(self.closed_loop(r_arr))

    def param_from_fir(self, R: FirTM) -> np.ndarray:
        p2, q2 = self.plant.p2, self.plant.q2
        if R.t_min < 1:
            raise ValueError("parameter must be strictly proper (t_min >= 1)")
        if R.t_max > self.N:
            raise ValueError(f"parameter horizon {R.t_max} exceeds oracle horizon {self.N}")
        if (R.rows, R.cols) != (p2, q2):
            raise ValueError(f"parameter must be {p2}x{q2}, got {R.rows}x{R.cols}")
        arr = np.zeros(self.param_shape)
        arr[R.t_min - 1 : R.t_max] = R.coeffs
        return arr

    def fir_from_param(self, r_arr: np.ndarray) -> FirTM:
        return FirTM(1, r_arr.copy())


def closed_loop_apply(oracle: ObjectiveOracle, R: FirTM) -> np.ndarray:
    """Truncated closed-loop coefficient sequence, lags 0..T_max."""
    return oracle.closed_loop(oracle.param_from_fir(R))


def closed_loop_adjoint(oracle: ObjectiveOracle, seq: np.ndarray) -> FirTM:
    """Adjoint of the linear part of :func:`closed_loop_apply`.

    Satisfies <apply_lin(R), seq> = <R, adjoint(seq)> where apply_lin is the
    closed-loop map with its R = 0 offset removed (hence the sign flip).
    """
    seq = np.asarray(seq, dtype=float)
    if seq.shape[0] != oracle.T_max + 1:
        raise ValueError(
            f"sequence length {seq.shape[0]} does not match horizon {oracle.T_max + 1}"
        )
    return oracle.fir_from_param(-oracle.adj(seq))


def objective(oracle: ObjectiveOracle, R: FirTM) -> float:
    """Squared H2 norm of the truncated closed loop at parameter R."""
    return oracle.objective_arr(oracle.param_from_fir(R))


def lipschitz(oracle: ObjectiveOracle, iters: int = 60, seed: int = 0) -> float:
    """Inflated power-iteration bound on the objective's curvature constant."""
    if iters < 10:
        raise ValueError("iters >= 10 required")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(oracle.param_shape)
    nrm = np.linalg.norm(v)
    if nrm == 0.0:
        return 0.0
    v /= nrm
    lam = 0.0
    for _ in range(iters):
        w = oracle.adj(oracle.lin(v))
        lam = float(np.vdot(v, w).real)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return 2.0 * lam * 1.02


def recover_controller(plant: PlantModel, R: FirTM, horizon: int) -> FirTM:
    """Feedback controller K = R (I + G22 R)^(-1) as a truncated series.

    The inverse exists as a power series because the lag-0 coefficient of
    I + G22 R is the identity; the recursion below computes it exactly up to
    ``horizon``.
    """
    if spectral_radius(plant.A) >= 1.0:
        raise ValueError("open-loop stable plant required")
    if R.t_min < 1:
        raise ValueError("parameter must be strictly proper")
    q2, p2 = plant.q2, plant.p2
    if (R.rows, R.cols) != (p2, q2):
        raise ValueError(f"parameter must be {p2}x{q2}, got {R.rows}x{R.cols}")
    g22 = markov_stack(plant, "22", horizon)

    r = np.zeros((horizon + 1, p2, q2))
    hi = min(R.t_max, horizon)
    if hi >= R.t_min:
        r[R.t_min : hi + 1] = R.coeffs[: hi - R.t_min + 1]

    # M = I + G22 R, W = M^(-1), K = R W, all as coefficient recursions
    m = np.zeros((horizon + 1, q2, q2))
    m[0] = np.eye(q2)
    for t in range(2, horizon + 1):
        m[t] = sum(g22[a] @ r[t - a] for a in range(1, t))
    w = np.zeros_like(m)
    w[0] = np.eye(q2)
    for t in range(1, horizon + 1):
        w[t] = -sum(m[s] @ w[t - s] for s in range(1, t + 1))
    k = np.zeros((horizon, p2, q2))
    for t in range(1, horizon + 1):
        k[t - 1] = sum(r[a] @ w[t - a] for a in range(1, t + 1))
    return FirTM(1, k)


def implementability_check(
    k_seq: FirTM, g: Graph, part: Partition, tol_zero: float = 1e-9
) -> bool:
    """Whether a strictly proper controller respects the graph's delay masks.

    Entry magnitudes outside the inflated support of the (t-1)th adjacency
    power must stay below ``tol_zero`` at every stored lag.
    """
    if k_seq.t_min < 1:
        raise ValueError("controller sequence must start at lag 1")
    a = g.adj.astype(np.uint8)
    cur = np.eye(g.n, dtype=bool)  # supp(adj^(t-1)), starting at t = 1
    for t in range(1, k_seq.t_max + 1):
        if t >= k_seq.t_min:
            mask = part.inflate(cur).astype(bool)
            if np.any(np.abs(k_seq.coeff(t)[~mask]) > tol_zero):
                return False
        if cur.all():
            # a full power stays full for every later lag
            break
        cur = (cur.astype(np.uint8) @ a) > 0
    return True
