"""Classical post-processing: grouping, phase inversion, Fisher information.

Alice classifies rounds into groups A1..A4 by her secret (basis, s_A),
inverts each group's empirical frequency through a probability model built
from the calibrated state, and pools the groups through the parity decoder
s_A xor s_B xor 1. The security metric is the Bernoulli Fisher information
F = (dP/dphi)^2 / (P (1 - P)) evaluated for Alice's groups and for the
unclassified stream an eavesdropper sees.
"""

import math
from dataclasses import dataclass

import numpy as np

from .protocol import (
    BRANCH_OF_LABEL,
    GROUP_LABELS,
    AliceRecords,
    Basis,
    DegenerateBranchError,
    EveView,
    phase_channel,
    steer_branch,
)
from .qcore import KET_R, DensityMatrix, expectation, projector

_PROJ_R = projector(KET_R)
_GOLDEN_TOL = 1e-12
#: Born probabilities this close to 0 or 1 are snapped to the exact boundary,
#: so float noise cannot hide a genuinely degenerate branch.
_PROB_SNAP_ATOL = 1e-12


class ClassificationError(ValueError):
    """Records lack the Alice-side secrets needed for grouping."""


class EmptyGroupError(ValueError):
    """A statistic was requested from a group with no rounds."""


class BoundaryProbabilityError(ValueError):
    """Bernoulli CFI is 0/0 at p in {0, 1}; the caller decides what to do."""

    def __init__(self, p: float, dpdphi: float):
        super().__init__(f"CFI undefined at boundary probability p={p!r}")
        self.p = p
        self.dpdphi = dpdphi


@dataclass(frozen=True)
class GroupStats:
    """Counts of Bob's outcomes within one of Alice's groups."""

    label: str
    n0: int
    n1: int

    def __post_init__(self):
        if self.n0 < 0 or self.n1 < 0:
            raise ValueError(f"counts must be nonnegative, got {self.n0}, {self.n1}")

    @property
    def total(self) -> int:
        return self.n0 + self.n1

    @property
    def p_exp(self) -> float:
        """Empirical probability of outcome 0."""
        if self.total == 0:
            raise EmptyGroupError(f"group {self.label} has no rounds")
        return self.n0 / self.total


def classify(records: AliceRecords) -> dict:
    """Partition Alice-side rounds into the four groups.

    Counts are conserved: the group totals sum to len(records). Passing a
    view without basis/s_A columns (e.g. an EveView) raises
    ClassificationError.
    """
    if not (hasattr(records, "basis_code") and hasattr(records, "s_a")):
        raise ClassificationError("records are missing Alice's basis and s_A secrets")
    groups = {}
    for label in GROUP_LABELS:
        basis, s_a = BRANCH_OF_LABEL[label]
        code = 0 if basis is Basis.PAULI_Y else 1
        mask = (records.basis_code == code) & (records.s_a == s_a)
        n_total = int(np.count_nonzero(mask))
        n1 = int(np.count_nonzero(records.s_b[mask]))
        groups[label] = GroupStats(label=label, n0=n_total - n1, n1=n1)
    return groups


def eve_stats(view: EveView) -> tuple[int, int]:
    """(n0, n1) over the unclassified stream."""
    return view.counts()


class ProbabilityModel:
    """Map (group, phi) -> P(s_B = 0) derived from a calibrated state.

    Each group's probe state is obtained by steering the calibrated two-qubit
    state with Alice's projector for that group; the phase channel and the
    Pauli-Y readout then give the outcome probability. For the ideal singlet
    the four curves reduce exactly to (1 +- cos phi)/2 and (1 +- sin phi)/2.
    """

    def __init__(self, rho_hat: DensityMatrix):
        if rho_hat.dim != 4:
            raise ValueError(f"model expects a two-qubit state, got dim {rho_hat.dim}")
        self.rho_hat = rho_hat
        self._weight = {}
        self._probe = {}
        self._bloch_xy = {}
        for label in GROUP_LABELS:
            basis, s_a = BRANCH_OF_LABEL[label]
            try:
                prob, rho_b = steer_branch(rho_hat, basis, s_a)
            except DegenerateBranchError:
                self._weight[label] = 0.0
                self._probe[label] = None
                self._bloch_xy[label] = None
                continue
            self._weight[label] = 0.5 * prob
            self._probe[label] = rho_b
            bloch = rho_b.bloch_vector()
            self._bloch_xy[label] = (bloch[0], bloch[1])

    def _require_probe(self, label: str) -> DensityMatrix:
        if label not in self._probe:
            raise KeyError(f"unknown group label {label!r}")
        probe = self._probe[label]
        if probe is None:
            basis, s_a = BRANCH_OF_LABEL[label]
            raise DegenerateBranchError(
                f"calibrated state gives zero probability to branch "
                f"(basis={basis.value}, s_A={s_a})")
        return probe

    def probability(self, label: str, phi: float) -> float:
        """P(s_B=0) by explicit steer -> phase channel -> readout composition."""
        probe = self._require_probe(label)
        shifted = phase_channel(probe, phi)
        p = min(max(expectation(shifted, _PROJ_R), 0.0), 1.0)
        if p < _PROB_SNAP_ATOL:
            return 0.0
        if p > 1.0 - _PROB_SNAP_ATOL:
            return 1.0
        return p

    def probability_grid(self, label: str, phis: np.ndarray) -> np.ndarray:
        """Vectorized probability over a phase grid.

        Uses the closed form P = (1 + y cos phi + x sin phi)/2 in the probe's
        Bloch components, which is the same map as probability().
        """
        self._require_probe(label)
        x, y = self._bloch_xy[label]
        phis = np.asarray(phis, dtype=float)
        p = np.clip(0.5 * (1.0 + y * np.cos(phis) + x * np.sin(phis)), 0.0, 1.0)
        p = np.where(p < _PROB_SNAP_ATOL, 0.0, p)
        return np.where(p > 1.0 - _PROB_SNAP_ATOL, 1.0, p)

    def derivative(self, label: str, phi) -> float:
        """Exact dP/dphi from the probe's Bloch components."""
        self._require_probe(label)
        x, y = self._bloch_xy[label]
        phi = np.asarray(phi, dtype=float)
        out = 0.5 * (-y * np.sin(phi) + x * np.cos(phi))
        return float(out) if out.ndim == 0 else out

    def group_weight(self, label: str) -> float:
        """Joint probability of the group label (uniform basis choice included)."""
        if label not in self._weight:
            raise KeyError(f"unknown group label {label!r}")
        return self._weight[label]

    def xor_probability(self, basis: Basis, phi) -> np.ndarray:
        """P(s_A xor s_B xor 1 = 0) for rounds of one basis.

        Weighted over the two branches of the basis: the s_A=1 branch
        contributes P(s_B=0), the s_A=0 branch P(s_B=1).
        """
        labels = ("A1", "A2") if basis is Basis.PAULI_Y else ("A3", "A4")
        scalar = np.ndim(phi) == 0
        phis = np.atleast_1d(np.asarray(phi, dtype=float))
        num = np.zeros_like(phis)
        den = 0.0
        for label in labels:
            if self._probe[label] is None:
                continue
            _, s_a = BRANCH_OF_LABEL[label]
            p0 = self.probability_grid(label, phis)
            num += self._weight[label] * (p0 if s_a == 1 else 1.0 - p0)
            den += self._weight[label]
        if den <= 0.0:
            raise DegenerateBranchError(f"basis {basis.value} has no usable branches")
        out = num / den
        return float(out[0]) if scalar else out

    def eve_probability(self, phi) -> np.ndarray:
        """Theoretical unclassified curve: plain average of the four groups."""
        phi = np.asarray(phi, dtype=float)
        total = np.zeros_like(phi, dtype=float)
        for label in GROUP_LABELS:
            total += self.probability_grid(label, phi)
        out = total / 4.0
        return float(out) if out.ndim == 0 else out


def model_probability(model: ProbabilityModel, label: str, phi: float) -> float:
    """P(s_B=0 | group, phi) under the calibrated-state model."""
    return model.probability(label, phi)


def _phase_grid(grid_step: float) -> np.ndarray:
    if grid_step <= 0:
        raise ValueError(f"grid_step must be positive, got {grid_step!r}")
    n = max(int(math.ceil(math.pi / grid_step)) + 1, 2)
    return np.linspace(0.0, math.pi, n)


def _golden_minimize(f, a: float, b: float) -> float:
    """Golden-section minimum of f on [a, b]; ties resolve toward smaller phi."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(200):
        if b - a <= _GOLDEN_TOL:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    candidates = sorted({a, (a + b) / 2.0, b})
    values = [f(x) for x in candidates]
    best = min(range(len(candidates)), key=lambda i: (values[i], candidates[i]))
    return candidates[best]


#: Refined objective values within this of the best are considered tied.
_TIE_ATOL = 1e-9


def estimate_phase_grid(model: ProbabilityModel, group: GroupStats,
                        grid_step: float = 1e-3, hint: float | None = None) -> float:
    """Phase minimizing |P_model(group, phi) - p_exp| over [0, pi].

    Grid search at the given resolution; every candidate grid minimum is
    refined by golden-section search within its cell before comparison.
    Sinusoidal group curves can cross p_exp twice (mirror solutions around
    pi/2), in which case the refined minima tie: ties break toward the
    phase nearest `hint` when one is given, otherwise toward smaller phi.
    """
    if group.total == 0:
        raise EmptyGroupError(f"group {group.label} has no rounds")
    p_exp = group.p_exp
    phis = _phase_grid(grid_step)
    diffs = np.abs(model.probability_grid(group.label, phis) - p_exp)
    h = phis[1] - phis[0]

    def objective(phi):
        return abs(float(model.probability_grid(group.label, np.array([phi]))[0]) - p_exp)

    # Local minima of the sampled objective (a sinusoid crosses a level at
    # most twice, so this is a handful of cells at most).
    padded = np.concatenate(([np.inf], diffs, [np.inf]))
    local = np.nonzero((padded[1:-1] <= padded[:-2]) & (padded[1:-1] <= padded[2:]))[0]
    candidates = []
    for i in local:
        a = max(0.0, phis[i] - h)
        b = min(math.pi, phis[i] + h)
        phi_ref = _golden_minimize(objective, a, b)
        candidates.append((phi_ref, objective(phi_ref)))
    candidates.sort()
    deduped = []
    for phi_ref, val in candidates:
        if deduped and abs(phi_ref - deduped[-1][0]) < h / 2:
            if val < deduped[-1][1]:
                deduped[-1] = (phi_ref, val)
            continue
        deduped.append((phi_ref, val))
    best_val = min(val for _, val in deduped)
    tied = [phi_ref for phi_ref, val in deduped if val <= best_val + _TIE_ATOL]
    if hint is None:
        return tied[0]  # candidates are sorted: smallest phi
    return min(tied, key=lambda phi_ref: (abs(phi_ref - hint), phi_ref))


@dataclass(frozen=True)
class XorSummary:
    """Parity-decoder counts for one basis: zeros of s_A xor s_B xor 1."""

    basis: Basis
    n_zero: int
    n_one: int

    @property
    def total(self) -> int:
        return self.n_zero + self.n_one

    @property
    def fraction(self) -> float:
        if self.total == 0:
            raise EmptyGroupError(f"no rounds in basis {self.basis.value}")
        return self.n_zero / self.total


def xor_decode(records: AliceRecords) -> dict:
    """Per-basis counts of the decoder bit s_A xor s_B xor 1.

    For the ideal singlet the zero-fraction estimates (1 + cos phi)/2 in the
    Pauli-Y basis and (1 + sin phi)/2 in the Pauli-X basis, independent of
    which branch Alice observed.
    """
    if not (hasattr(records, "basis_code") and hasattr(records, "s_a")):
        raise ClassificationError("records are missing Alice's basis and s_A secrets")
    parity = records.s_a ^ records.s_b ^ 1
    out = {}
    for basis, code in ((Basis.PAULI_Y, 0), (Basis.PAULI_X, 1)):
        mask = records.basis_code == code
        total = int(np.count_nonzero(mask))
        ones = int(np.count_nonzero(parity[mask]))
        out[basis] = XorSummary(basis=basis, n_zero=total - ones, n_one=ones)
    return out


@dataclass(frozen=True)
class PooledEstimate:
    phi_hat: float
    low_curvature: bool


def _safe_term(n: int, q: np.ndarray) -> np.ndarray:
    # n * log(q) with the n = 0 case contributing exactly 0
    if n == 0:
        return np.zeros_like(q)
    return n * np.log(np.maximum(q, 1e-300))


def pooled_mle(summaries, model: ProbabilityModel,
               grid_step: float = 1e-3) -> PooledEstimate:
    """Maximum-likelihood phase from the per-basis parity counts.

    Maximizes the joint binomial log-likelihood of the decoder fractions
    over [0, pi] on the grid (golden-section refined). Estimates whose
    likelihood is flat, or that sit at the interval boundary, are flagged
    low_curvature.
    """
    summaries = [s for s in summaries if s.total > 0]
    if not summaries:
        raise ValueError("all parity counts are zero; nothing to estimate")

    def log_likelihood(phis):
        phis = np.atleast_1d(np.asarray(phis, dtype=float))
        ll = np.zeros_like(phis)
        for s in summaries:
            q = np.clip(model.xor_probability(s.basis, phis), 0.0, 1.0)
            ll += _safe_term(s.n_zero, q) + _safe_term(s.n_one, 1.0 - q)
        return ll

    phis = _phase_grid(grid_step)
    ll = log_likelihood(phis)
    i = int(np.argmax(ll))
    h = phis[1] - phis[0]
    a = max(0.0, phis[i] - h)
    b = min(math.pi, phis[i] + h)
    phi_hat = _golden_minimize(lambda x: -float(log_likelihood(x)[0]), a, b)

    total = sum(s.total for s in summaries)
    eps = 1e-4
    lo, hi = max(phi_hat - eps, 0.0), min(phi_hat + eps, math.pi)
    vals = log_likelihood(np.array([lo, phi_hat, hi]))
    curvature = (vals[0] - 2.0 * vals[1] + vals[2]) / eps**2
    at_boundary = phi_hat <= grid_step or phi_hat >= math.pi - grid_step
    low_curvature = at_boundary or curvature >= -1e-9 * max(total, 1)
    return PooledEstimate(phi_hat=phi_hat, low_curvature=low_curvature)


@dataclass(frozen=True)
class PhaseEstimate:
    """Per-group inversions plus the pooled parity-decoder estimate."""

    per_group: tuple
    pooled_xor: float
    grid_resolution: float

    def phase_of(self, label: str) -> float:
        for got, phi in self.per_group:
            if got == label:
                return phi
        raise KeyError(f"no estimate for group {label!r}")


def three_point_slope(p_minus: float, p_center: float, p_plus: float,
                      phi_minus: float, phi_center: float, phi_plus: float) -> float:
    """Least-squares slope of the line through three (phi, P) points.

    Approximates dP/dphi at the centering point from its two neighbors.
    """
    if not (phi_minus < phi_center < phi_plus):
        raise ValueError(
            f"phases must be strictly increasing, got {(phi_minus, phi_center, phi_plus)!r}")
    xs = np.array([phi_minus, phi_center, phi_plus])
    ys = np.array([p_minus, p_center, p_plus])
    dx = xs - xs.mean()
    return float(dx @ (ys - ys.mean()) / (dx @ dx))


def cfi(p: float, dpdphi: float) -> float:
    """Bernoulli classical Fisher information (dP/dphi)^2 / (P(1-P)).

    Raises BoundaryProbabilityError at p in {0, 1}, where the expression is
    0/0; callers choose whether to substitute a neighboring estimate.
    """
    if not 0.0 < p < 1.0:
        raise BoundaryProbabilityError(p, dpdphi)
    return dpdphi**2 / (p * (1.0 - p))


def analytic_cfi(model: ProbabilityModel, label: str, phi: float) -> float:
    """CFI of one group from the model's exact derivative."""
    return cfi(model.probability(label, phi), model.derivative(label, phi))


@dataclass(frozen=True)
class CenterCfi:
    """Three-point CFI at (or substituted near) a centering sweep index."""

    center_index: int
    used_index: int
    phase: float
    p: float
    slope: float
    fisher_information: float
    substituted: bool


def series_cfi_at_center(xs, ps, center: int) -> CenterCfi:
    """Three-point CFI of a measured series at a centering index.

    If the centering point sits at a boundary probability, the estimate is
    substituted from the nearest interior neighboring index (preferring the
    next one) and flagged.
    """
    xs = np.asarray(xs, dtype=float)
    ps = np.asarray(ps, dtype=float)
    if len(xs) != len(ps):
        raise ValueError("series lengths differ")
    if len(xs) < 3:
        raise ValueError(f"need at least 3 sweep points, got {len(xs)}")
    if not 1 <= center <= len(xs) - 2:
        raise ValueError(f"centering index {center} needs neighbors on both sides")

    last_error = None
    for idx, substituted in ((center, False), (center + 1, True), (center - 1, True)):
        if not 1 <= idx <= len(xs) - 2:
            continue
        slope = three_point_slope(ps[idx - 1], ps[idx], ps[idx + 1],
                                  xs[idx - 1], xs[idx], xs[idx + 1])
        try:
            f = cfi(float(ps[idx]), slope)
        except BoundaryProbabilityError as err:
            last_error = err
            continue
        return CenterCfi(center_index=center, used_index=idx, phase=float(xs[idx]),
                         p=float(ps[idx]), slope=slope, fisher_information=f,
                         substituted=substituted)
    raise last_error


@dataclass(frozen=True)
class CFIReport:
    """Alice-vs-eavesdropper information at one centering phase."""

    per_group_F: dict
    eve_F: float
    asymmetry_ratio: float
    derivative_method: str

    def __post_init__(self):
        if self.derivative_method not in ("analytic", "three_point"):
            raise ValueError(f"unknown derivative method {self.derivative_method!r}")
        if any(f < 0 for f in self.per_group_F.values()) or self.eve_F < 0:
            raise ValueError("Fisher information must be nonnegative")


def make_cfi_report(per_group_F: dict, eve_F: float, derivative_method: str,
                    floor: float = 1e-12) -> CFIReport:
    ratio = max(per_group_F.values()) / max(eve_F, floor)
    return CFIReport(per_group_F=dict(per_group_F), eve_F=eve_F,
                     asymmetry_ratio=ratio, derivative_method=derivative_method)


@dataclass(frozen=True)
class EveReport:
    """Per-phase eavesdropper probabilities and CFI at centering phases.

    The x axis is the average of Alice's four measured phases at each sweep
    point, since nothing in the unclassified stream pins the phase down; the
    theoretical curve is the average of the four group curves evaluated
    there.
    """

    phases: np.ndarray
    p_exp: np.ndarray
    p_model: np.ndarray
    cfi_by_center: dict


def eve_report(views, alice_phases, model: ProbabilityModel,
               centering=(2, 7)) -> EveReport:
    """Quantify the eavesdropper's information across a phase sweep.

    views: one EveView per sweep point. alice_phases: array (n_points, 4) of
    Alice's measured phases per group, used to place each sweep point on the
    phase axis.
    """
    views = list(views)
    if len(views) < 3:
        raise ValueError(f"need at least 3 phase points, got {len(views)}")
    alice_phases = np.asarray(alice_phases, dtype=float)
    if alice_phases.shape != (len(views), 4):
        raise ValueError(
            f"alice_phases must have shape ({len(views)}, 4), got {alice_phases.shape}")
    xs = alice_phases.mean(axis=1)
    p_exp = np.empty(len(views))
    for k, view in enumerate(views):
        n0, n1 = view.counts()
        if n0 + n1 == 0:
            raise EmptyGroupError(f"sweep point {k} has no rounds")
        p_exp[k] = n0 / (n0 + n1)
    p_model = np.asarray(model.eve_probability(xs), dtype=float)
    cfi_by_center = {c: series_cfi_at_center(xs, p_exp, c) for c in centering}
    return EveReport(phases=xs, p_exp=p_exp, p_model=p_model,
                     cfi_by_center=cfi_by_center)
