"""Shared two-qubit state preparation: ideal singlet plus configurable noise.

The noise family is Werner mixing of the singlet followed by phase damping
on Bob's qubit, plus outcome-dependent detection efficiencies that the
sensing step consumes at readout time (they are a readout effect, not a
state effect).
"""

from dataclasses import dataclass, field

import numpy as np

from .qcore import ID2, ID4, KET_H, KET_V, DensityMatrix, tensor


@dataclass(frozen=True)
class NoiseModel:
    """Imperfection parameters for the shared state and Bob's analyzer.

    werner_p: singlet weight of the Werner mixture, in [0, 1].
    dephasing_gamma: phase-damping strength on Bob's qubit, in [0, 1].
    detector_eta0 / detector_eta1: detection efficiencies for Bob's
        outcomes 0 and 1, each in (0, 1].

    The default (p=1, gamma=0, eta0=eta1=1) reproduces the ideal protocol
    exactly.
    """

    werner_p: float = 1.0
    dephasing_gamma: float = 0.0
    detector_eta0: float = 1.0
    detector_eta1: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.werner_p <= 1.0:
            raise ValueError(f"werner_p must be in [0, 1], got {self.werner_p!r}")
        if not 0.0 <= self.dephasing_gamma <= 1.0:
            raise ValueError(f"dephasing_gamma must be in [0, 1], got {self.dephasing_gamma!r}")
        for name in ("detector_eta0", "detector_eta1"):
            eta = getattr(self, name)
            if not 0.0 < eta <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {eta!r}")

    @property
    def is_ideal(self) -> bool:
        return (self.werner_p == 1.0 and self.dephasing_gamma == 0.0
                and self.detector_eta0 == 1.0 and self.detector_eta1 == 1.0)


@dataclass(frozen=True)
class SourceConfig:
    """Noise model plus RNG seed; identical configs give bit-identical runs."""

    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed!r}")


#: Singlet state vector (|HV> - |VH>) / sqrt(2).
SINGLET_KET = (tensor(KET_H.reshape(2, 1), KET_V.reshape(2, 1))
               - tensor(KET_V.reshape(2, 1), KET_H.reshape(2, 1))).ravel() / np.sqrt(2.0)
SINGLET_KET.flags.writeable = False


def ideal_singlet() -> DensityMatrix:
    """Maximally entangled singlet |psi-><psi-|."""
    return DensityMatrix.from_pure(SINGLET_KET)


def apply_noise(rho: DensityMatrix, model: NoiseModel) -> DensityMatrix:
    """Werner-mix rho, then phase-damp Bob's qubit.

    Werner mixing: rho -> p rho + (1 - p) I/4.
    Phase damping with strength gamma acts through the Kraus pair
    K0 = diag(1, sqrt(1 - gamma)), K1 = diag(0, sqrt(gamma)) on Bob's factor.
    Trace and Hermiticity are preserved exactly; the map is affine in rho.
    """
    if rho.dim != 4:
        raise ValueError(f"apply_noise expects a two-qubit state, got dim {rho.dim}")
    p = model.werner_p
    mixed = p * rho.matrix + (1.0 - p) * ID4 / 4.0
    gamma = model.dephasing_gamma
    if gamma > 0.0:
        k0 = tensor(ID2, np.diag([1.0, np.sqrt(1.0 - gamma)]).astype(complex))
        k1 = tensor(ID2, np.diag([0.0, np.sqrt(gamma)]).astype(complex))
        mixed = k0 @ mixed @ k0.conj().T + k1 @ mixed @ k1.conj().T
    return DensityMatrix(mixed)


def shared_state(config: SourceConfig) -> DensityMatrix:
    """The nominal state shared each round: noisy singlet, i.i.d. across rounds."""
    return apply_noise(ideal_singlet(), config.noise)
