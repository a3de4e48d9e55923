"""Calibration of the shared state: simulated counts and reconstruction.

Measurement grid is the overcomplete 6x6 set of polarization projectors
{H, V, D, J, R, L} on each side (36 settings). Reconstruction is linear
inversion in the Pauli (Stokes) basis followed by projection to the nearest
positive-semidefinite unit-trace matrix in Frobenius norm.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .qcore import ID2, SIGMA_X, SIGMA_Y, SIGMA_Z, DensityMatrix, fidelity, tensor
from .source import ideal_singlet
from .streams import STREAM_TOMOGRAPHY, substream

PROJECTOR_LABELS = ("H", "V", "D", "J", "R", "L")

# Stokes vector (I, x, y, z) of each label's projector P = (I + n.sigma)/2.
_STOKES = {
    "H": np.array([1.0, 0.0, 0.0, 1.0]),
    "V": np.array([1.0, 0.0, 0.0, -1.0]),
    "D": np.array([1.0, 1.0, 0.0, 0.0]),
    "J": np.array([1.0, -1.0, 0.0, 0.0]),
    "R": np.array([1.0, 0.0, 1.0, 0.0]),
    "L": np.array([1.0, 0.0, -1.0, 0.0]),
}

_PAULIS = (ID2, SIGMA_X, SIGMA_Y, SIGMA_Z)


class TomographySetting(NamedTuple):
    alice_projector: str
    bob_projector: str


def all_settings() -> list[TomographySetting]:
    """The 36 settings in canonical (Alice-major) order."""
    return [TomographySetting(a, b) for a in PROJECTOR_LABELS for b in PROJECTOR_LABELS]


def setting_probability(rho: DensityMatrix, setting: TomographySetting) -> float:
    """Coincidence probability Tr[rho (P_A x P_B)] for one setting."""
    na = _STOKES[setting.alice_projector]
    nb = _STOKES[setting.bob_projector]
    t = _stokes_tensor(rho.matrix)
    return float(0.25 * na @ t @ nb)


def _stokes_tensor(m: np.ndarray) -> np.ndarray:
    """4x4 real table T[mu, nu] = Tr[m (sigma_mu x sigma_nu)]."""
    t = np.empty((4, 4))
    for i, pa in enumerate(_PAULIS):
        for j, pb in enumerate(_PAULIS):
            t[i, j] = np.trace(m @ tensor(pa, pb)).real
    return t


@dataclass(frozen=True)
class TomographyCounts:
    """Simulated coincidence counts for every setting at fixed shots."""

    shots_per_setting: int
    counts: dict

    def __post_init__(self):
        if self.shots_per_setting < 1:
            raise ValueError(f"shots_per_setting must be >= 1, got {self.shots_per_setting}")
        expected = set(all_settings())
        got = set(self.counts)
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ValueError(f"counts must cover all 36 settings (missing {missing}, extra {extra})")
        for setting, count in self.counts.items():
            if not 0 <= count <= self.shots_per_setting:
                raise ValueError(f"count {count} out of range for setting {setting}")

    def frequency(self, setting: TomographySetting) -> float:
        return self.counts[setting] / self.shots_per_setting


@dataclass(frozen=True)
class ReconstructionResult:
    """Reconstructed state plus the unprojected inversion for diagnostics."""

    rho_hat: DensityMatrix
    fidelity_to_singlet: float
    raw_linear_inversion: np.ndarray


def simulate_counts(rho: DensityMatrix, shots: int, seed: int) -> TomographyCounts:
    """Binomial coincidence counts per setting, deterministic given seed."""
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    if rho.dim != 4:
        raise ValueError(f"tomography expects a two-qubit state, got dim {rho.dim}")
    settings = all_settings()
    probs = np.array([setting_probability(rho, s) for s in settings])
    probs = np.clip(probs, 0.0, 1.0)
    rng = substream(seed, STREAM_TOMOGRAPHY)
    counts = rng.binomial(shots, probs)
    return TomographyCounts(
        shots_per_setting=shots,
        counts={s: int(c) for s, c in zip(settings, counts)},
    )


def _design_matrix() -> np.ndarray:
    """36x16 real map from Stokes parameters to setting probabilities."""
    rows = []
    for setting in all_settings():
        na = _STOKES[setting.alice_projector]
        nb = _STOKES[setting.bob_projector]
        rows.append(0.25 * np.outer(na, nb).ravel())
    return np.array(rows)


def _matrix_from_stokes(t: np.ndarray) -> np.ndarray:
    m = np.zeros((4, 4), dtype=complex)
    for i, pa in enumerate(_PAULIS):
        for j, pb in enumerate(_PAULIS):
            m += t[i, j] * tensor(pa, pb)
    return m / 4.0


def _project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of v onto {x : x >= 0, sum(x) = 1}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, len(v) + 1)
    k = ks[u + (1.0 - css) / ks > 0][-1]
    tau = (1.0 - css[k - 1]) / k
    return np.clip(v + tau, 0.0, None)


def nearest_physical_state(hermitian: np.ndarray) -> DensityMatrix:
    """Closest PSD unit-trace matrix in Frobenius norm.

    Diagonalize and project the eigenvalue vector onto the probability
    simplex; the eigenbasis is optimal by unitary invariance of the norm.
    """
    vals, vecs = np.linalg.eigh(hermitian)
    projected = _project_to_simplex(vals)
    m = (vecs * projected) @ vecs.conj().T
    return DensityMatrix((m + m.conj().T) / 2.0)


def reconstruct(counts: TomographyCounts) -> ReconstructionResult:
    """Linear inversion of setting frequencies, then physicality projection.

    The raw inversion is Hermitian with unit trace but may have negative
    eigenvalues at finite shots; rho_hat is its projection onto the
    physical set and always satisfies the density-matrix invariants.
    """
    freqs = np.array([counts.frequency(s) for s in all_settings()])
    t_flat, *_ = np.linalg.lstsq(_design_matrix(), freqs, rcond=None)
    t = t_flat.reshape(4, 4)
    if abs(t[0, 0]) < 1e-9:
        raise ValueError("counts carry no signal: inferred total intensity is zero")
    t = t / t[0, 0]
    raw = _matrix_from_stokes(t)
    raw = (raw + raw.conj().T) / 2.0
    rho_hat = nearest_physical_state(raw)
    return ReconstructionResult(
        rho_hat=rho_hat,
        fidelity_to_singlet=fidelity_to_singlet(rho_hat),
        raw_linear_inversion=raw,
    )


def fidelity_to_singlet(rho: DensityMatrix) -> float:
    """Overlap with the maximally entangled singlet."""
    return fidelity(rho, ideal_singlet())


def write_counts_csv(counts: TomographyCounts, path, header_lines=()) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("alice_proj,bob_proj,shots,count\n")
        for setting in all_settings():
            fh.write(f"{setting.alice_projector},{setting.bob_projector},"
                     f"{counts.shots_per_setting},{counts.counts[setting]}\n")


def read_counts_csv(path) -> TomographyCounts:
    counts = {}
    shots = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("alice_proj"):
                continue
            a, b, s, c = line.split(",")
            shots = int(s)
            counts[TomographySetting(a, b)] = int(c)
    if shots is None:
        raise ValueError(f"no count rows found in {path}")
    return TomographyCounts(shots_per_setting=shots, counts=counts)
