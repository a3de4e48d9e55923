"""Experiment configuration, sweep drivers, and report files.

Every emitted file starts with two comment lines: one with the config hash
and seed, one with the full canonical configuration, so any report can be
regenerated from its own header.
"""

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .estimation import (
    PhaseEstimate,
    ProbabilityModel,
    classify,
    estimate_phase_grid,
    eve_stats,
    make_cfi_report,
    pooled_mle,
    series_cfi_at_center,
    xor_decode,
)
from .protocol import GROUP_LABELS, eve_view, run_protocol
from .qcore import DensityMatrix
from .source import NoiseModel, SourceConfig, ideal_singlet, shared_state
from .tomography import (
    ReconstructionResult,
    reconstruct,
    simulate_counts,
    write_counts_csv,
)
from .transport import TransportError

DEFAULT_PHASES = tuple(k * math.pi / 10.0 for k in range(11))


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class CalibrationAbortError(RuntimeError):
    """Reconstructed state failed the fidelity threshold (CLI exit code 3)."""


class WireMismatchError(TransportError):
    """Received outcome bits disagree with the locally derived records."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of a reproducible run."""

    phases: tuple = DEFAULT_PHASES
    rounds_per_phase: int = 100_000
    tomography_shots: int = 10_000
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0
    output_dir: str = "out"
    grid_step: float = 1e-3
    centering: tuple = (2, 7)
    ideal: bool = False
    abort_fidelity: float = 0.95

    def __post_init__(self):
        phases = tuple(float(p) for p in self.phases)
        object.__setattr__(self, "phases", phases)
        if len(phases) < 1:
            raise ConfigError("at least one phase is required")
        if any(not 0.0 <= p <= math.pi for p in phases):
            raise ConfigError(f"phases must lie in [0, pi], got {phases}")
        if any(b <= a for a, b in zip(phases, phases[1:])):
            raise ConfigError("phases must be strictly increasing")
        if self.rounds_per_phase < 1:
            raise ConfigError(f"rounds_per_phase must be >= 1, got {self.rounds_per_phase}")
        if self.tomography_shots < 1:
            raise ConfigError(f"tomography_shots must be >= 1, got {self.tomography_shots}")
        if self.grid_step <= 0:
            raise ConfigError(f"grid_step must be positive, got {self.grid_step}")
        object.__setattr__(self, "centering", tuple(int(c) for c in self.centering))
        if not 0.0 <= self.abort_fidelity <= 1.0:
            raise ConfigError(f"abort_fidelity must be in [0, 1], got {self.abort_fidelity}")

    def source_config(self) -> SourceConfig:
        return SourceConfig(noise=self.noise, seed=self.seed)


def canonical_config_text(config: ExperimentConfig) -> str:
    """One-line canonical form; hashed into every report header."""
    parts = [
        "phases=" + ",".join(repr(p) for p in config.phases),
        f"rounds={config.rounds_per_phase}",
        f"shots={config.tomography_shots}",
        f"werner_p={config.noise.werner_p!r}",
        f"gamma={config.noise.dephasing_gamma!r}",
        f"eta0={config.noise.detector_eta0!r}",
        f"eta1={config.noise.detector_eta1!r}",
        f"seed={config.seed}",
        f"grid_step={config.grid_step!r}",
        "centering=" + ",".join(str(c) for c in config.centering),
        f"ideal={int(config.ideal)}",
        f"abort_fidelity={config.abort_fidelity!r}",
    ]
    return ";".join(parts)


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_config_text(config).encode("utf-8")).hexdigest()[:12]


def header_lines(config: ExperimentConfig) -> list:
    return [
        f"config_hash={config_hash(config)} seed={config.seed}",
        f"config: {canonical_config_text(config)}",
    ]


# ---------------------------------------------------------------------------
# Flat key=value config files
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "phases", "rounds", "shots", "werner_p", "gamma", "eta0", "eta1",
    "seed", "grid_step", "centering", "ideal", "abort_fidelity", "out",
    "endpoint",
}


def parse_config_file(path) -> dict:
    """Flat UTF-8 key=value file; '#' starts a comment."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
                key, value = line.split("=", 1)
                key = key.strip()
                if key not in _CONFIG_KEYS:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = value.strip()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    return values


def _parse_phases(text: str) -> tuple:
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError as err:
        raise ConfigError(f"bad phases list {text!r}") from err


def _parse_centering(text: str) -> tuple:
    try:
        return tuple(int(c) for c in text.split(","))
    except ValueError as err:
        raise ConfigError(f"bad centering list {text!r}") from err


def build_config(file_values: dict | None = None, **overrides) -> ExperimentConfig:
    """Merge config-file values with flag overrides (flags win)."""
    merged = {}
    if file_values:
        for key, text in file_values.items():
            if key in ("out", "endpoint"):
                merged[key] = text
            elif key == "phases":
                merged[key] = _parse_phases(text)
            elif key == "centering":
                merged[key] = _parse_centering(text)
            elif key == "ideal":
                merged[key] = text.lower() in ("1", "true", "yes")
            elif key in ("rounds", "shots", "seed"):
                try:
                    merged[key] = int(text)
                except ValueError as err:
                    raise ConfigError(f"bad integer for {key}: {text!r}") from err
            else:
                try:
                    merged[key] = float(text)
                except ValueError as err:
                    raise ConfigError(f"bad number for {key}: {text!r}") from err
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    merged.pop("endpoint", None)
    try:
        noise = NoiseModel(
            werner_p=merged.pop("werner_p", 1.0),
            dephasing_gamma=merged.pop("gamma", 0.0),
            detector_eta0=merged.pop("eta0", 1.0),
            detector_eta1=merged.pop("eta1", 1.0),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err
    kwargs = {
        "phases": merged.pop("phases", DEFAULT_PHASES),
        "rounds_per_phase": merged.pop("rounds", 100_000),
        "tomography_shots": merged.pop("shots", 10_000),
        "seed": merged.pop("seed", 0),
        "output_dir": merged.pop("out", "out"),
        "grid_step": merged.pop("grid_step", 1e-3),
        "centering": merged.pop("centering", (2, 7)),
        "ideal": merged.pop("ideal", False),
        "abort_fidelity": merged.pop("abort_fidelity", 0.95),
    }
    if merged:
        raise ConfigError(f"unknown config entries: {sorted(merged)}")
    try:
        return ExperimentConfig(noise=noise, **kwargs)
    except ValueError as err:
        raise ConfigError(str(err)) from err


# ---------------------------------------------------------------------------
# Tomography driver
# ---------------------------------------------------------------------------

def run_tomography(config: ExperimentConfig):
    """Simulate calibration counts and reconstruct the shared state."""
    rho_true = shared_state(config.source_config())
    counts = simulate_counts(rho_true, config.tomography_shots, config.seed)
    result = reconstruct(counts)
    return counts, result


def check_calibration(result: ReconstructionResult, threshold: float) -> None:
    if result.fidelity_to_singlet < threshold:
        raise CalibrationAbortError(
            f"reconstructed fidelity {result.fidelity_to_singlet:.6f} "
            f"below abort threshold {threshold}")


def write_rho_hat_json(result: ReconstructionResult, config: ExperimentConfig, path) -> None:
    m = result.rho_hat.matrix
    payload = {
        "config_hash": config_hash(config),
        "seed": config.seed,
        "dim": result.rho_hat.dim,
        "re": m.real.tolist(),
        "im": m.imag.tolist(),
        "fidelity_to_singlet": result.fidelity_to_singlet,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_rho_hat_json(path) -> DensityMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    m = np.array(payload["re"], dtype=float) + 1j * np.array(payload["im"], dtype=float)
    return DensityMatrix(m)


def save_tomography_files(counts, result, config: ExperimentConfig) -> None:
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    write_counts_csv(counts, os.path.join(out, "counts.csv"),
                     header_lines=header_lines(config))
    write_rho_hat_json(result, config, os.path.join(out, "rho_hat.json"))


def load_model(config: ExperimentConfig) -> ProbabilityModel:
    """Probability model from calibration output, or the exact singlet."""
    if config.ideal:
        return ProbabilityModel(ideal_singlet())
    path = os.path.join(config.output_dir, "rho_hat.json")
    if not os.path.exists(path):
        raise ConfigError(
            f"no calibrated state at {path}; run the tomography command first "
            f"or pass --ideal")
    return ProbabilityModel(load_rho_hat_json(path))


# ---------------------------------------------------------------------------
# Sweep driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhasePointResult:
    index: int
    phi: float
    groups: dict
    eve_n0: int
    eve_n1: int
    estimates: PhaseEstimate
    p_model: dict
    eve_p_model: float
    pooled_flagged: bool

    @property
    def eve_p_exp(self) -> float:
        return self.eve_n0 / (self.eve_n0 + self.eve_n1)


@dataclass(frozen=True)
class SweepReport:
    config: ExperimentConfig
    points: list

    def alice_phase_matrix(self) -> np.ndarray:
        """Measured phases, shape (n_points, 4), group-major order A1..A4."""
        return np.array([[pt.estimates.phase_of(lbl) for lbl in GROUP_LABELS]
                         for pt in self.points])


def analyze_transcript(transcript, model: ProbabilityModel, grid_step: float,
                       index: int, phi: float) -> PhasePointResult:
    records = transcript.records
    groups = classify(records)
    # The pooled parity-decoder likelihood mixes the cos- and sin-shaped
    # bases, so it has a unique peak; its estimate disambiguates the mirror
    # solutions of the single-group inversions.
    pooled = pooled_mle(xor_decode(records).values(), model, grid_step)
    per_group = tuple(
        (label, estimate_phase_grid(model, groups[label], grid_step, hint=pooled.phi_hat))
        for label in GROUP_LABELS)
    estimates = PhaseEstimate(per_group=per_group, pooled_xor=pooled.phi_hat,
                              grid_resolution=grid_step)
    n0, n1 = eve_stats(eve_view(transcript))
    return PhasePointResult(
        index=index,
        phi=phi,
        groups=groups,
        eve_n0=n0,
        eve_n1=n1,
        estimates=estimates,
        p_model={label: model.probability(label, phi) for label in GROUP_LABELS},
        eve_p_model=float(model.eve_probability(phi)),
        pooled_flagged=pooled.low_curvature,
    )


def run_sweep(config: ExperimentConfig, model: ProbabilityModel,
              wire_bits: dict | None = None) -> SweepReport:
    """Sense at every configured phase and analyze the transcripts.

    When wire_bits is given (phase index -> outcome bit array received over
    the channel), each transcript's locally derived s_B column must match
    the received bits; any disagreement raises WireMismatchError.
    """
    src = config.source_config()
    points = []
    for k, phi in enumerate(config.phases):
        transcript = run_protocol(src, phi, config.rounds_per_phase, phase_point_id=k)
        if wire_bits is not None:
            bits = wire_bits.get(k)
            if bits is None:
                raise WireMismatchError(f"no received outcomes for phase point {k}")
            if not np.array_equal(np.asarray(bits, dtype=np.uint8), transcript.records.s_b):
                raise WireMismatchError(f"received outcomes disagree at phase point {k}")
        points.append(analyze_transcript(transcript, model, config.grid_step, k, phi))
    return SweepReport(config=config, points=points)


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def _write_report(path, config: ExperimentConfig, columns: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header_lines(config):
            fh.write(f"# {line}\n")
        fh.write(columns + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(cell) for cell in row) + "\n")


def _format_cell(cell) -> str:
    if isinstance(cell, float):
        return repr(float(cell))  # builtin float repr: shortest exact round-trip
    return str(cell)


def write_sweep_csv(report: SweepReport, path) -> None:
    rows = []
    for pt in report.points:
        for label in GROUP_LABELS:
            g = pt.groups[label]
            rows.append((pt.phi, label, g.n0, g.n1, g.p_exp, pt.p_model[label]))
        rows.append((pt.phi, "B", pt.eve_n0, pt.eve_n1, pt.eve_p_exp, pt.eve_p_model))
    _write_report(path, report.config, "phi_k,group,n0,n1,p_exp,p_model", rows)


def write_estimates_csv(report: SweepReport, path) -> None:
    rows = []
    for pt in report.points:
        for label, phi_hat in pt.estimates.per_group:
            rows.append((pt.phi, label, pt.groups[label].total, phi_hat, 0))
        rows.append((pt.phi, "pooled", sum(pt.groups[lbl].total for lbl in GROUP_LABELS),
                     pt.estimates.pooled_xor, int(pt.pooled_flagged)))
    _write_report(path, report.config, "phi_k,group,n,phi_hat,flagged", rows)


def save_sweep_files(report: SweepReport) -> None:
    out = report.config.output_dir
    os.makedirs(out, exist_ok=True)
    write_sweep_csv(report, os.path.join(out, "sweep.csv"))
    write_estimates_csv(report, os.path.join(out, "estimates.csv"))


def _data_rows(path) -> list:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append(line.split(","))
    if not rows:
        raise ConfigError(f"no rows in {path}")
    return rows[1:]  # drop the column header


def read_report_config(path) -> ExperimentConfig:
    """Rebuild the configuration recorded in a report file's header."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("# config: "):
                text = line[len("# config: "):].strip()
                values = {}
                for part in text.split(";"):
                    key, _, value = part.partition("=")
                    values[key] = value
                return build_config(values)
    raise ConfigError(f"{path} has no embedded config header")


@dataclass(frozen=True)
class SweepTable:
    """Numeric view of sweep.csv."""

    phases: np.ndarray
    group_p_exp: dict
    group_counts: dict
    group_p_model: dict
    eve_p_exp: np.ndarray
    eve_counts: tuple
    eve_p_model: np.ndarray


def read_sweep_csv(path) -> SweepTable:
    per_series = {label: [] for label in (*GROUP_LABELS, "B")}
    phases = []
    for phi_s, group, n0_s, n1_s, p_exp_s, p_model_s in _data_rows(path):
        phi = float(phi_s)
        if group == "A1":
            phases.append(phi)
        per_series[group].append((int(n0_s), int(n1_s), float(p_exp_s), float(p_model_s)))
    phases = np.array(phases)
    group_p_exp, group_counts, group_p_model = {}, {}, {}
    for label in GROUP_LABELS:
        data = per_series[label]
        if len(data) != len(phases):
            raise ConfigError(f"{path}: group {label} has {len(data)} rows, expected {len(phases)}")
        group_p_exp[label] = np.array([d[2] for d in data])
        group_counts[label] = (np.array([d[0] for d in data]), np.array([d[1] for d in data]))
        group_p_model[label] = np.array([d[3] for d in data])
    eve = per_series["B"]
    return SweepTable(
        phases=phases,
        group_p_exp=group_p_exp,
        group_counts=group_counts,
        group_p_model=group_p_model,
        eve_p_exp=np.array([d[2] for d in eve]),
        eve_counts=(np.array([d[0] for d in eve]), np.array([d[1] for d in eve])),
        eve_p_model=np.array([d[3] for d in eve]),
    )


def read_estimates_csv(path):
    """(phases, measured matrix (n_points, 4), pooled array, flagged array)."""
    phases, pooled, flagged = [], [], []
    matrix = {label: [] for label in GROUP_LABELS}
    for phi_s, group, _n, phi_hat_s, flag_s in _data_rows(path):
        if group == "pooled":
            phases.append(float(phi_s))
            pooled.append(float(phi_hat_s))
            flagged.append(int(flag_s))
        else:
            matrix[group].append(float(phi_hat_s))
    mat = np.column_stack([matrix[label] for label in GROUP_LABELS])
    return np.array(phases), mat, np.array(pooled), np.array(flagged, dtype=int)


# ---------------------------------------------------------------------------
# CFI tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CfiTable:
    rows: list             # (phase, series, P, slope, F) per spec schema
    reports: dict          # centering index -> CFIReport
    notes: list            # human-readable substitution notes


def compute_cfi_table(table: SweepTable, est_phases: np.ndarray,
                      centering, floor: float = 1e-12) -> CfiTable:
    """Three-point CFI for the four groups and the unclassified stream.

    Group slopes run over each group's measured phases; the unclassified
    series sits at the per-point average of the four measured phases.
    """
    rows, reports, notes = [], {}, []
    xs_eve = est_phases.mean(axis=1)
    for c in centering:
        per_group_f = {}
        for j, label in enumerate(GROUP_LABELS):
            res = series_cfi_at_center(est_phases[:, j], table.group_p_exp[label], c)
            if res.substituted:
                notes.append(f"center {c}, series {label}: boundary probability, "
                             f"substituted index {res.used_index}")
            rows.append((float(table.phases[res.used_index]), label, res.p,
                         res.slope, res.fisher_information))
            per_group_f[label] = res.fisher_information
        eve_res = series_cfi_at_center(xs_eve, table.eve_p_exp, c)
        if eve_res.substituted:
            notes.append(f"center {c}, series B: boundary probability, "
                         f"substituted index {eve_res.used_index}")
        rows.append((float(table.phases[eve_res.used_index]), "B", eve_res.p,
                     eve_res.slope, eve_res.fisher_information))
        reports[c] = make_cfi_report(per_group_f, eve_res.fisher_information,
                                     "three_point", floor=floor)
    return CfiTable(rows=rows, reports=reports, notes=notes)


def write_cfi_csv(cfi_table: CfiTable, config: ExperimentConfig, path) -> None:
    _write_report(path, config, "phase,series,P,slope,F", cfi_table.rows)
