"""Discrete-time generalized plant data model.

A plant is the seven-matrix realization (A, B1, B2, C1, C2, D12, D21) with
implicit zero feedthrough in the (1,1) and (2,2) positions.  A partition
assigns the control and measurement channels to n sub-controllers.  This
module owns loading/saving of plant documents, structural validation,
impulse-response coefficients, and a seeded chain-plant generator used by
the examples and tests.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PlantModel",
    "Partition",
    "ValidationReport",
    "load_plant",
    "save_plant",
    "validate_plant",
    "markov_params",
    "gen_chain_plant",
    "spectral_radius",
]

_PLANT_KEYS = ("A", "B1", "B2", "C1", "C2", "D12", "D21")


def _as_matrix(value, name: str) -> np.ndarray:
    try:
        m = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{name}: not a rectangular numeric matrix") from exc
    if m.ndim != 2:
        raise ValueError(f"{name}: expected a 2-d matrix, got ndim={m.ndim}")
    return m


@dataclass(frozen=True, eq=False)
class PlantModel:
    """State-space data of the generalized plant (dense real matrices)."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D12: np.ndarray
    D21: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A: must be square, got {A.shape}")
        object.__setattr__(self, "A", A)
        s = A.shape[0]
        dims = {
            "B1": (s, None),
            "B2": (s, None),
            "C1": (None, s),
            "C2": (None, s),
        }
        for name, (rows, cols) in dims.items():
            m = _as_matrix(getattr(self, name), name)
            if rows is not None and m.shape[0] != rows:
                raise ValueError(f"{name}: expected {rows} rows, got {m.shape[0]}")
            if cols is not None and m.shape[1] != cols:
                raise ValueError(f"{name}: expected {cols} columns, got {m.shape[1]}")
            object.__setattr__(self, name, m)
        p1, p2 = self.B1.shape[1], self.B2.shape[1]
        q1, q2 = self.C1.shape[0], self.C2.shape[0]
        d12 = _as_matrix(self.D12, "D12")
        if d12.shape != (q1, p2):
            raise ValueError(f"D12: expected shape {(q1, p2)}, got {d12.shape}")
        object.__setattr__(self, "D12", d12)
        d21 = _as_matrix(self.D21, "D21")
        if d21.shape != (q2, p1):
            raise ValueError(f"D21: expected shape {(q2, p1)}, got {d21.shape}")
        object.__setattr__(self, "D21", d21)

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def p1(self) -> int:
        return self.B1.shape[1]

    @property
    def p2(self) -> int:
        return self.B2.shape[1]

    @property
    def q1(self) -> int:
        return self.C1.shape[0]

    @property
    def q2(self) -> int:
        return self.C2.shape[0]


@dataclass(frozen=True)
class Partition:
    """Split of the control/measurement channels across n sub-controllers.

    ``u_sizes[i]`` control inputs and ``y_sizes[i]`` measurements belong to
    sub-controller ``i``; the lists must sum to p2 and q2 of the plant they
    partition.
    """

    u_sizes: tuple[int, ...]
    y_sizes: tuple[int, ...]

    def __post_init__(self):
        u = tuple(int(v) for v in self.u_sizes)
        y = tuple(int(v) for v in self.y_sizes)
        object.__setattr__(self, "u_sizes", u)
        object.__setattr__(self, "y_sizes", y)
        if len(u) != len(y):
            raise ValueError("partition: u and y lists must have equal length")
        if len(u) < 1:
            raise ValueError("partition: need at least one sub-controller")
        if any(v <= 0 for v in u + y):
            raise ValueError("partition: block sizes must be positive")

    @property
    def n(self) -> int:
        return len(self.u_sizes)

    @property
    def u_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.u_sizes)])

    @property
    def y_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.y_sizes)])

    def check_plant(self, plant: PlantModel) -> None:
        if sum(self.u_sizes) != plant.p2:
            raise ValueError(
                f"partition: u sizes sum to {sum(self.u_sizes)}, plant has p2={plant.p2}"
            )
        if sum(self.y_sizes) != plant.q2:
            raise ValueError(
                f"partition: y sizes sum to {sum(self.y_sizes)}, plant has q2={plant.q2}"
            )

    def inflate(self, block_mask: np.ndarray) -> np.ndarray:
        """Expand an n-by-n block mask to a p2-by-q2 entry mask."""
        block_mask = np.asarray(block_mask)
        if block_mask.shape != (self.n, self.n):
            raise ValueError(f"block mask must be {self.n}x{self.n}")
        return np.repeat(np.repeat(block_mask, self.u_sizes, axis=0), self.y_sizes, axis=1)


@dataclass
class ValidationReport:
    """Structural findings about a plant; informational, never blocks loading."""

    stable: bool
    b2_block_diag: bool
    c2_block_diag: bool
    base_strongly_connected: bool
    param_assumption_residuals: tuple[float, float, float, float]
    warnings: list[str] = field(default_factory=list)


def spectral_radius(A: np.ndarray) -> float:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def load_plant(doc: dict) -> tuple[PlantModel, Partition]:
    """Build a typed plant from a parsed plant document.

    The document carries the seven realization matrices as nested row-major
    arrays plus a ``partition`` object with ``u`` and ``y`` block-size lists.
    Shapes are checked against the partition so that errors name the
    offending field; numerical properties are the job of
    :func:`validate_plant`.
    """
    if not isinstance(doc, dict):
        raise ValueError("plant document: expected a JSON object")
    missing = [k for k in _PLANT_KEYS if k not in doc]
    if missing:
        raise ValueError(f"plant document: missing field {missing[0]}")
    if "partition" not in doc:
        raise ValueError("partition required")
    pdoc = doc["partition"]
    if not isinstance(pdoc, dict) or "u" not in pdoc or "y" not in pdoc:
        raise ValueError('partition: expected an object with "u" and "y" lists')
    part = Partition(tuple(pdoc["u"]), tuple(pdoc["y"]))

    mats = {k: _as_matrix(doc[k], k) for k in _PLANT_KEYS}
    A = mats["A"]
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"A: must be square, got {A.shape}")
    s = A.shape[0]
    p2, q2 = sum(part.u_sizes), sum(part.y_sizes)
    p1, q1 = mats["B1"].shape[1], mats["C1"].shape[0]
    expected = {
        "B1": (s, p1),
        "B2": (s, p2),
        "C1": (q1, s),
        "C2": (q2, s),
        "D12": (q1, p2),
        "D21": (q2, p1),
    }
    for name, shape in expected.items():
        if mats[name].shape != shape:
            raise ValueError(
                f"{name}: dimension mismatch, expected {shape}, got {mats[name].shape}"
            )
    plant = PlantModel(*(mats[k] for k in _PLANT_KEYS))
    return plant, part


def save_plant(plant: PlantModel, part: Partition) -> dict:
    """Inverse of :func:`load_plant`; floats survive a JSON round trip bit-exactly."""
    doc = {k: getattr(plant, k).tolist() for k in _PLANT_KEYS}
    doc["partition"] = {"u": list(part.u_sizes), "y": list(part.y_sizes)}
    return doc


def validate_plant(plant: PlantModel, part: Partition, tol_zero: float = 1e-9) -> ValidationReport:
    """Report stability, block-diagonal structure, and parameterization residuals.

    The four residuals are the Frobenius norms of D12'D12 - I, D21 D21' - I,
    C1'D12 and B1 D21'.  Nonzero residuals are reported as warnings only: the
    synthesis path implemented here does not rely on them.
    """
    part.check_plant(plant)
    msgs: list[str] = []
    rho = spectral_radius(plant.A)
    stable = rho < 1.0 - tol_zero
    if not stable:
        msgs.append(f"plant is not open-loop stable (spectral radius {rho:.6g}); "
                    "synthesis operations require stability")

    def _block_diag(m: np.ndarray, row_sizes, col_sizes) -> bool:
        ro = np.concatenate([[0], np.cumsum(row_sizes)])
        co = np.concatenate([[0], np.cumsum(col_sizes)])
        off = m.copy()
        for i in range(len(row_sizes)):
            off[ro[i]:ro[i + 1], co[i]:co[i + 1]] = 0.0
        return bool(np.all(np.abs(off) <= tol_zero))

    # B2 couples states to control blocks, C2 measurements to states; the
    # block-diagonal test splits the state dimension evenly when possible.
    s, n = plant.s, part.n
    if s % n == 0:
        state_sizes = [s // n] * n
        b2_bd = _block_diag(plant.B2, state_sizes, part.u_sizes)
        c2_bd = _block_diag(plant.C2, part.y_sizes, state_sizes)
    else:
        b2_bd = c2_bd = False
        msgs.append(f"state dimension {s} not divisible by {n} sub-systems; "
                    "block-diagonal checks skipped (reported false)")
    if not b2_bd:
        msgs.append("B2 is not block diagonal; structural propagation delays unavailable")
    if not c2_bd:
        msgs.append("C2 is not block diagonal; structural propagation delays unavailable")

    base_sc = False
    try:
        from . import commgraph

        base = commgraph.base_graph(plant, part, tol_zero=tol_zero)
        base_sc = commgraph.graph_delay(base) != commgraph.INFINITE
    except ValueError as exc:
        msgs.append(f"base graph unavailable: {exc}")
    if not base_sc and "base graph unavailable" not in " ".join(msgs):
        msgs.append("base communication graph is not strongly connected")

    r1 = float(np.linalg.norm(plant.D12.T @ plant.D12 - np.eye(plant.p2)))
    r2 = float(np.linalg.norm(plant.D21 @ plant.D21.T - np.eye(plant.q2)))
    r3 = float(np.linalg.norm(plant.C1.T @ plant.D12))
    r4 = float(np.linalg.norm(plant.B1 @ plant.D21.T))
    for val, label in ((r1, "D12'D12 - I"), (r2, "D21 D21' - I"), (r3, "C1'D12"), (r4, "B1 D21'")):
        if val > tol_zero:
            msgs.append(f"parameterization residual {label} = {val:.3g}")

    return ValidationReport(
        stable=stable,
        b2_block_diag=b2_bd,
        c2_block_diag=c2_bd,
        base_strongly_connected=base_sc,
        param_assumption_residuals=(r1, r2, r3, r4),
        warnings=msgs,
    )


def markov_params(plant: PlantModel, block: str | int, t_from: int, t_to: int) -> list[np.ndarray]:
    """Impulse-response coefficients of one plant block over ``t_from..t_to``.

    Lag-0 terms are the feedthroughs (zero for the 11 and 22 blocks); lag-t
    terms are C A^(t-1) B with the C/B pair selected by ``block``.
    """
    block = str(block)
    if block not in ("11", "12", "21", "22"):
        raise ValueError(f"block must be one of 11, 12, 21, 22; got {block!r}")
    if t_from < 0 or t_from > t_to:
        raise ValueError(f"invalid lag range [{t_from}, {t_to}]")
    C = plant.C1 if block[0] == "1" else plant.C2
    B = plant.B1 if block[1] == "1" else plant.B2
    if block == "12":
        d = plant.D12
    elif block == "21":
        d = plant.D21
    else:
        d = np.zeros((C.shape[0], B.shape[1]))

    out = []
    x = B.copy()  # A^(t-1) B, starting at t=1
    for t in range(1, t_from):
        x = plant.A @ x
    for t in range(t_from, t_to + 1):
        if t == 0:
            out.append(d.copy())
        else:
            out.append(C @ x)
            x = plant.A @ x
    return out


def markov_stack(plant: PlantModel, block: str, t_max: int) -> np.ndarray:
    """Markov parameters of ``block`` stacked as a (t_max+1, rows, cols) array."""
    coeffs = markov_params(plant, block, 0, t_max)
    return np.stack(coeffs, axis=0)


def gen_chain_plant(n: int, couple: float = 0.2, seed: int = 0) -> tuple[PlantModel, Partition]:
    """Seeded chain-of-subsystems example plant with scalar blocks.

    A is tridiagonal with diagonal entries in [0.3, 0.6] and off-diagonals
    equal to ``couple``, rescaled when needed so the spectral radius stays at
    or below 0.95.  B2 = C2 = I, and the disturbance/performance channels are
    the standard state + control stack, which zeroes all four
    parameterization residuals.  Deterministic in ``seed``.
    """
    if n < 2:
        raise ValueError("n >= 2 required")
    if couple < 0:
        raise ValueError("couple must be nonnegative")
    rng = np.random.default_rng(seed)
    A = np.diag(rng.uniform(0.3, 0.6, size=n))
    for i in range(n - 1):
        A[i, i + 1] = couple
        A[i + 1, i] = couple
    rho = spectral_radius(A)
    if rho > 0.95:
        A *= 0.95 / rho
    assert spectral_radius(A) <= 0.95 + 1e-12

    eye = np.eye(n)
    zero = np.zeros((n, n))
    plant = PlantModel(
        A=A,
        B1=np.hstack([eye, zero]),
        B2=eye,
        C1=np.vstack([eye, zero]),
        C2=eye,
        D12=np.vstack([zero, eye]),
        D21=np.hstack([zero, eye]),
    )
    part = Partition(tuple([1] * n), tuple([1] * n))
    return plant, part
