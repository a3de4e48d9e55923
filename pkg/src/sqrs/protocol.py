"""Sensing protocol state machines: steering, phase sensing, and readout.

Outcome conventions, fixed once here and asserted by tests:

  * outcome 0 is the +1 eigenvalue, outcome 1 the -1 eigenvalue;
  * Pauli-Y eigenstates: +1 -> |R>, -1 -> |L>;  Pauli-X: +1 -> |D>, -1 -> |J>.

Truth table mapping Alice's (basis, s_A) to her group label, her projector,
and the state steered onto Bob's qubit when the pair is a perfect singlet:

    label  basis    s_A  Alice projector  Bob probe
    A1     Pauli-Y   1   |L><L|           |R><R|
    A2     Pauli-Y   0   |R><R|           |L><L|
    A3     Pauli-X   1   |J><J|           |D><D|
    A4     Pauli-X   0   |D><D|           |J><J|
"""

import enum
from dataclasses import dataclass

import numpy as np

from .qcore import (
    ID2,
    KET_D,
    KET_J,
    KET_L,
    KET_R,
    DensityMatrix,
    _partial_trace_alice_raw,
    expectation,
    projector,
    tensor,
)
from .source import SourceConfig, shared_state
from .streams import DRAWS_PER_ATTEMPT, STREAM_SENSING, substream

#: Branch probabilities below this are treated as degenerate rather than
#: silently renormalized into garbage.
DEGENERATE_BRANCH_ATOL = 1e-15


class DegenerateBranchError(ValueError):
    """Steering was asked for an outcome branch of (near-)zero probability."""


class Basis(enum.Enum):
    """Alice's measurement basis, chosen uniformly at random each round."""

    PAULI_Y = "Y"
    PAULI_X = "X"


# Array code for each basis (used in columnar round storage).
BASIS_CODE = {Basis.PAULI_Y: 0, Basis.PAULI_X: 1}
BASIS_FROM_CODE = {code: basis for basis, code in BASIS_CODE.items()}

GROUP_LABELS = ("A1", "A2", "A3", "A4")

# (basis, s_A) -> group label, per the truth table above.
_LABEL_OF = {
    (Basis.PAULI_Y, 1): "A1",
    (Basis.PAULI_Y, 0): "A2",
    (Basis.PAULI_X, 1): "A3",
    (Basis.PAULI_X, 0): "A4",
}

# group label -> (basis, s_A)
BRANCH_OF_LABEL = {label: key for key, label in _LABEL_OF.items()}

# Alice's projector for each (basis, s_A) branch.
ALICE_KET = {
    (Basis.PAULI_Y, 0): KET_R,
    (Basis.PAULI_Y, 1): KET_L,
    (Basis.PAULI_X, 0): KET_D,
    (Basis.PAULI_X, 1): KET_J,
}

# Bob's probe state per group label when the shared pair is a perfect singlet.
IDEAL_PROBE_KET = {"A1": KET_R, "A2": KET_L, "A3": KET_D, "A4": KET_J}

_PROJ_R = projector(KET_R)


def group_label(basis: Basis, s_a: int) -> str:
    return _LABEL_OF[(basis, int(s_a))]


def steer_branch(rho: DensityMatrix, basis: Basis, s_a: int) -> tuple[float, DensityMatrix]:
    """Probability and Bob's collapsed state for a forced Alice outcome.

    Returns (p, rho_b) with p = Tr[rho (P_A x I)] and rho_b the normalized
    partial trace of rho (P_A x I) over Alice's qubit.
    """
    if rho.dim != 4:
        raise ValueError(f"steering expects a two-qubit state, got dim {rho.dim}")
    proj = tensor(projector(ALICE_KET[(basis, int(s_a))]), ID2)
    weighted = rho.matrix @ proj
    prob = float(np.trace(weighted).real)
    if prob < DEGENERATE_BRANCH_ATOL:
        raise DegenerateBranchError(
            f"branch (basis={basis.value}, s_A={s_a}) has probability {prob!r}")
    # Project on Alice's side: P rho P, then trace her out and renormalize.
    collapsed = proj @ weighted
    rho_b = _partial_trace_alice_raw(collapsed) / prob
    return prob, DensityMatrix(rho_b)


def steer(rho: DensityMatrix, basis: Basis, rng: np.random.Generator) -> tuple[int, DensityMatrix]:
    """Sample Alice's outcome via the Born rule and collapse Bob's qubit."""
    p1, _ = _branch_probabilities(rho, basis)
    s_a = 1 if rng.random() < p1 else 0
    _, rho_b = steer_branch(rho, basis, s_a)
    return s_a, rho_b


def _branch_probabilities(rho: DensityMatrix, basis: Basis) -> tuple[float, float]:
    """(P(s_A=1), P(s_A=0)) for a basis; they sum to 1 exactly."""
    proj1 = tensor(projector(ALICE_KET[(basis, 1)]), ID2)
    p1 = float(np.trace(rho.matrix @ proj1).real)
    p1 = min(max(p1, 0.0), 1.0)
    return p1, 1.0 - p1


def phase_channel(rho_b: DensityMatrix, phi: float) -> DensityMatrix:
    """Imprint the sensed phase: conjugation by exp(-i phi sigma_z / 2)."""
    if rho_b.dim != 2:
        raise ValueError(f"phase channel acts on single-qubit states, got dim {rho_b.dim}")
    u = np.array([[np.exp(-0.5j * phi), 0.0], [0.0, np.exp(0.5j * phi)]], dtype=complex)
    return DensityMatrix(u @ rho_b.matrix @ u.conj().T)


def bob_measure_y(rho_tilde: DensityMatrix, detector: tuple[float, float],
                  rng: np.random.Generator) -> tuple[int, bool]:
    """Pauli-Y readout with outcome-dependent detection.

    Samples s_B with P(0) = Tr[rho |R><R|], then flags the round as detected
    with probability eta0 (s_B = 0) or eta1 (s_B = 1). Undetected rounds are
    discarded upstream.
    """
    eta0, eta1 = detector
    p0 = min(max(expectation(rho_tilde, _PROJ_R), 0.0), 1.0)
    s_b = 0 if rng.random() < p0 else 1
    detected = rng.random() < (eta0 if s_b == 0 else eta1)
    return s_b, detected


@dataclass(frozen=True)
class RoundRecord:
    """One post-selected round. Basis, s_A, and the label are Alice's secrets."""

    round_id: int
    alice_basis: Basis
    s_a: int
    outcome_label: str
    s_b: int
    detected: bool


class AliceRecords:
    """Columnar store of Alice-side rounds; iterates as RoundRecord."""

    __slots__ = ("round_id", "basis_code", "s_a", "s_b", "detected")

    def __init__(self, round_id, basis_code, s_a, s_b, detected):
        self.round_id = np.asarray(round_id, dtype=np.int64)
        self.basis_code = np.asarray(basis_code, dtype=np.uint8)
        self.s_a = np.asarray(s_a, dtype=np.uint8)
        self.s_b = np.asarray(s_b, dtype=np.uint8)
        self.detected = np.asarray(detected, dtype=bool)
        n = len(self.round_id)
        for arr in (self.basis_code, self.s_a, self.s_b, self.detected):
            if len(arr) != n:
                raise ValueError("record columns must have equal length")

    def __len__(self) -> int:
        return len(self.round_id)

    def __getitem__(self, i: int) -> RoundRecord:
        basis = BASIS_FROM_CODE[int(self.basis_code[i])]
        s_a = int(self.s_a[i])
        return RoundRecord(
            round_id=int(self.round_id[i]),
            alice_basis=basis,
            s_a=s_a,
            outcome_label=group_label(basis, s_a),
            s_b=int(self.s_b[i]),
            detected=bool(self.detected[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, AliceRecords):
            return NotImplemented
        return (np.array_equal(self.round_id, other.round_id)
                and np.array_equal(self.basis_code, other.basis_code)
                and np.array_equal(self.s_a, other.s_a)
                and np.array_equal(self.s_b, other.s_b)
                and np.array_equal(self.detected, other.detected))


@dataclass(frozen=True)
class Transcript:
    """Full record of one sensing run at a single phase point.

    phi_true is simulation ground truth; estimators receive only `records`
    (or an EveView), never the transcript itself.
    """

    phi_true: float
    phase_point_id: int
    config: SourceConfig
    records: AliceRecords

    @property
    def n_rounds(self) -> int:
        return len(self.records)


class EveView:
    """What a wiretap of the classical sensing channel yields: s_B only."""

    __slots__ = ("round_id", "s_b")

    def __init__(self, round_id, s_b):
        self.round_id = np.asarray(round_id, dtype=np.int64)
        self.s_b = np.asarray(s_b, dtype=np.uint8)
        if len(self.round_id) != len(self.s_b):
            raise ValueError("round_id and s_b must have equal length")

    def __len__(self) -> int:
        return len(self.round_id)

    def counts(self) -> tuple[int, int]:
        """(number of 0s, number of 1s)."""
        n1 = int(np.count_nonzero(self.s_b))
        return len(self.s_b) - n1, n1

    def __eq__(self, other) -> bool:
        if not isinstance(other, EveView):
            return NotImplemented
        return (np.array_equal(self.round_id, other.round_id)
                and np.array_equal(self.s_b, other.s_b))


def eve_view(transcript: Transcript) -> EveView:
    """Project a transcript down to the eavesdropper-visible stream."""
    rec = transcript.records
    return EveView(rec.round_id.copy(), rec.s_b.copy())


def _sensing_branch_table(rho: DensityMatrix, phi: float, detector: tuple[float, float]):
    """Per-branch sampling parameters for i.i.d. rounds on a fixed state.

    Branch index is basis_code * 2 + s_A. Each branch's P(s_B=0) composes
    steer -> phase_channel -> Pauli-Y readout on the shared state.
    """
    p_sa1 = np.empty(2)
    p0_given_branch = np.empty(4)
    for basis in (Basis.PAULI_Y, Basis.PAULI_X):
        code = BASIS_CODE[basis]
        p1, _ = _branch_probabilities(rho, basis)
        p_sa1[code] = p1
        for s_a in (0, 1):
            _, rho_b = steer_branch(rho, basis, s_a)
            rho_tilde = phase_channel(rho_b, phi)
            p0 = expectation(rho_tilde, _PROJ_R)
            p0_given_branch[code * 2 + s_a] = min(max(p0, 0.0), 1.0)
    eta = np.array([detector[0], detector[1]])
    return p_sa1, p0_given_branch, eta


def sample_rounds(rho: DensityMatrix, phi: float, n_rounds: int,
                  detector: tuple[float, float],
                  rng: np.random.Generator) -> AliceRecords:
    """Sample n_rounds post-selected rounds on a fixed shared state.

    Vectorized i.i.d. sampling: every raw attempt consumes exactly
    DRAWS_PER_ATTEMPT uniforms (basis, s_A, s_B, detection) from the stream,
    so results do not depend on how attempts are batched, and a shorter run
    is a prefix of a longer one on the same stream.
    """
    if n_rounds < 1:
        raise ValueError(f"n_rounds must be >= 1, got {n_rounds}")
    p_sa1, p0_branch, eta = _sensing_branch_table(rho, phi, detector)

    detect_rate = 0.0
    for code in (0, 1):
        for s_a in (0, 1):
            q = 0.5 * (p_sa1[code] if s_a == 1 else 1.0 - p_sa1[code])
            p0 = p0_branch[code * 2 + s_a]
            detect_rate += q * (p0 * eta[0] + (1.0 - p0) * eta[1])

    basis_parts, s_a_parts, s_b_parts = [], [], []
    collected = 0
    while collected < n_rounds:
        remaining = n_rounds - collected
        block = max(1024, int(remaining / detect_rate * 1.1) + 64)
        u = rng.random((block, DRAWS_PER_ATTEMPT))
        basis_code = (u[:, 0] >= 0.5).astype(np.uint8)
        s_a = (u[:, 1] < p_sa1[basis_code]).astype(np.uint8)
        p0 = p0_branch[basis_code * 2 + s_a]
        s_b = (u[:, 2] >= p0).astype(np.uint8)
        detected = u[:, 3] < eta[s_b]
        basis_parts.append(basis_code[detected])
        s_a_parts.append(s_a[detected])
        s_b_parts.append(s_b[detected])
        collected += int(np.count_nonzero(detected))

    basis_code = np.concatenate(basis_parts)[:n_rounds]
    s_a = np.concatenate(s_a_parts)[:n_rounds]
    s_b = np.concatenate(s_b_parts)[:n_rounds]
    return AliceRecords(
        round_id=np.arange(n_rounds, dtype=np.int64),
        basis_code=basis_code,
        s_a=s_a,
        s_b=s_b,
        detected=np.ones(n_rounds, dtype=bool),
    )


def run_protocol(config: SourceConfig, phi: float, n_rounds: int,
                 phase_point_id: int = 0) -> Transcript:
    """Run steer -> phase_channel -> readout until n_rounds detected rounds.

    The draw stream is keyed by (seed, STREAM_SENSING, phase_point_id), so a
    transcript is bit-identical across reruns and regenerable from
    (seed, config, phi, phase_point_id) alone.
    """
    rho = shared_state(config)
    noise = config.noise
    rng = substream(config.seed, STREAM_SENSING, phase_point_id)
    records = sample_rounds(rho, phi, n_rounds,
                            (noise.detector_eta0, noise.detector_eta1), rng)
    return Transcript(phi_true=float(phi), phase_point_id=int(phase_point_id),
                      config=config, records=records)


def write_alice_rounds_csv(records: AliceRecords, path) -> None:
    """Alice-side round log; contains her secrets (basis, s_A)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("round_id,alice_basis,s_A,s_B\n")
        for i in range(len(records)):
            basis = BASIS_FROM_CODE[int(records.basis_code[i])]
            fh.write(f"{int(records.round_id[i])},{basis.value},"
                     f"{int(records.s_a[i])},{int(records.s_b[i])}\n")


def write_eve_rounds_csv(view: EveView, path) -> None:
    """Eavesdropper-visible round log; carries no basis or s_A columns."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("round_id,s_B\n")
        for i in range(len(view)):
            fh.write(f"{int(view.round_id[i])},{int(view.s_b[i])}\n")
