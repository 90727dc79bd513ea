"""Monte Carlo generator of heralded write/read coincidence records.

Per trial a Stokes excitation occurs with probability ``epsilon_s`` and is
heralded with the Stokes detection efficiency; dark counts add false
heralds. A real excitation is read out after storage time ``t`` as zero,
one or two anti-Stokes photons, each detected with the anti-Stokes
efficiency and routed 50/50 to two threshold detectors. Noise and dark
clicks are independent per detector per trial.

Retrieval decays as ``p1(t) = p1_0 exp(-t/tau)`` and the heralded
autocorrelation relaxes towards the thermal value 2, by default on the same
time constant (``tau_g2`` overrides it).
The one/two-photon probabilities are chosen so that, without noise, the
loss-corrected estimators return exactly ``p1(t)`` and ``g2(t)`` in
expectation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .photonstats import (
    CoincidenceRecord,
    LossBudget,
    correct_losses,
    estimate_g2_conditional,
    estimate_p1,
    to_projection_pair,
)
from .witness import DEFAULT_M_MAX, certify

GENERATOR = "numpy.random.PCG64"
THERMAL_G2 = 2.0


@dataclass(frozen=True)
class SimulationConfig:
    epsilon_s: float = 0.02
    retrieval_p1_0: float = 0.8
    tau: float = 1000.0
    noise_floor: float = 1e-5
    g2_intrinsic_0: float = 0.05
    detector_efficiency: float = 0.6
    channel_transmission: float = 0.5
    dark_prob: float = 1e-6
    n_trials: int = 1_000_000
    storage_times: tuple = (0.0, 250.0, 500.0, 1000.0, 2000.0)
    rng_seed: int = 20230101
    g2_relax_target: float = THERMAL_G2
    tau_g2: float | None = None
    energy_pj: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "storage_times", tuple(float(t) for t in self.storage_times))
        for name in ("epsilon_s", "retrieval_p1_0", "noise_floor", "detector_efficiency",
                     "channel_transmission", "dark_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v!r}")
        if self.epsilon_s >= 0.1:
            raise ValueError("epsilon_s must stay below 0.1 (low-excitation regime)")
        if not self.tau > 0 or (self.tau_g2 is not None and not self.tau_g2 > 0):
            raise ValueError("tau and tau_g2 must be positive")
        if self.g2_intrinsic_0 < 0:
            raise ValueError("g2_intrinsic_0 must be non-negative")
        if int(self.n_trials) != self.n_trials or self.n_trials < 1:
            raise ValueError("n_trials must be a positive integer")
        if not self.storage_times or any(t < 0 for t in self.storage_times):
            raise ValueError("storage_times must be a non-empty list of non-negative values")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")
        for t in self.storage_times:
            photon_probabilities(self, t)

    @property
    def efficiency(self) -> float:
        return self.detector_efficiency * self.channel_transmission

    @property
    def loss_budget(self) -> LossBudget:
        return LossBudget(self.channel_transmission, self.detector_efficiency)

    def p1_at(self, t):
        return self.retrieval_p1_0 * math.exp(-t / self.tau)

    def g2_at(self, t):
        w = math.exp(-t / (self.tau if self.tau_g2 is None else self.tau_g2))
        return self.g2_relax_target + (self.g2_intrinsic_0 - self.g2_relax_target) * w

    def to_dict(self):
        d = asdict(self)
        d["storage_times"] = list(self.storage_times)
        return d

    @classmethod
    def from_dict(cls, cfg: dict) -> "SimulationConfig":
        if not cfg:
            raise ValueError("empty simulation config")
        known = set(cls.__dataclass_fields__)
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**cfg)


def photon_probabilities(config: SimulationConfig, t: float):
    """(P(one photon), P(two photons)) emitted by a real excitation at time t."""
    p1, g2, eta = config.p1_at(t), config.g2_at(t), config.efficiency
    two = g2 * p1 * p1 / 2.0
    # detected single rate of a two-photon event is 2 eta - eta^2/2 per herald
    one = p1 - two * (2.0 - eta / 2.0)
    if one < 0 or one + two > 1:
        raise ValueError(
            f"p1={p1:.4g}, g2={g2:.4g} at t={t} are not realisable by this photon model"
        )
    return one, two


def _substream(seed, index):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _simulate_one(config: SimulationConfig, t: float, rng) -> CoincidenceRecord:
    n = int(config.n_trials)
    eta_s = eta = config.efficiency
    one, two = photon_probabilities(config, t)

    excited = rng.random(n) < config.epsilon_s
    herald = (excited & (rng.random(n) < eta_s)) | (rng.random(n) < config.dark_prob)

    u = rng.random(n)
    n_photons = np.where(excited, (u < one + two).astype(np.int8) + (u < two), 0)
    # per photon: detected with eta, detector chosen by a fair coin
    click = [np.zeros(n, dtype=bool), np.zeros(n, dtype=bool)]
    for k in (1, 2):
        has = n_photons >= k
        det = has & (rng.random(n) < eta)
        arm = rng.random(n) < 0.5
        click[0] |= det & arm
        click[1] |= det & ~arm
    spurious = 1.0 - (1.0 - config.noise_floor) * (1.0 - config.dark_prob)
    click[0] |= rng.random(n) < spurious
    click[1] |= rng.random(n) < spurious

    c1, c2 = click
    return CoincidenceRecord(
        storage_time=float(t),
        n_trials=n,
        n_s=int(herald.sum()),
        n_s_as1=int((herald & c1).sum()),
        n_s_as2=int((herald & c2).sum()),
        n_s_as1_as2=int((herald & c1 & c2).sum()),
        n_as1=int(c1.sum()),
        n_as2=int(c2.sum()),
    )


def simulate(config: SimulationConfig) -> list[CoincidenceRecord]:
    """One record per storage time; substream ``i`` serves storage time ``i``."""
    return [
        _simulate_one(config, t, _substream(int(config.rng_seed), i))
        for i, t in enumerate(config.storage_times)
    ]


def expected_statistics(config: SimulationConfig, t: float) -> dict:
    """Exact model expectations of the raw estimators at storage time ``t``.

    Ratios of expected counts, including dark counts and noise.
    """
    eps, eta = config.epsilon_s, config.efficiency
    one, two = photon_probabilities(config, t)
    z = 1.0 - (1.0 - config.noise_floor) * (1.0 - config.dark_prob)
    d = config.dark_prob

    # photon-click probabilities given a real excitation
    q = 1.0 - eta / 2.0
    none1 = 1.0 - one - two + one * q + two * q * q  # no photon click on arm 1
    none_both = 1.0 - one - two + one * (1.0 - eta) + two * (1.0 - eta) ** 2
    c1_t = 1.0 - none1 * (1.0 - z)
    c12_t = 1.0 - 2.0 * none1 * (1.0 - z) + none_both * (1.0 - z) ** 2

    h_t = 1.0 - (1.0 - eta) * (1.0 - d)
    p_h = eps * h_t + (1.0 - eps) * d
    p_hc1 = eps * h_t * c1_t + (1.0 - eps) * d * z
    p_hc12 = eps * h_t * c12_t + (1.0 - eps) * d * z * z
    p_c1 = eps * c1_t + (1.0 - eps) * z
    return {
        "herald_rate": p_h,
        "p1_raw": 2.0 * p_hc1 / p_h,
        "p1": 2.0 * p_hc1 / p_h / eta,
        "g2c": p_hc12 * p_h / (p_hc1 * p_hc1),
        "g2x": p_hc1 / (p_h * p_c1),
    }


def metadata(config: SimulationConfig) -> dict:
    return {
        "generator": GENERATOR,
        "numpy_version": np.__version__,
        "wdepth_version": __version__,
        "seed": int(config.rng_seed),
        "substreams": "SeedSequence(seed, spawn_key=(storage_index,))",
        "config": config.to_dict(),
    }


@dataclass
class SweepRow:
    energy_pj: float
    epsilon_s: float
    p1: float
    p1_err: float
    g2c: float
    m_min: int | None
    depth: float | None
    records: list = field(default_factory=list, repr=False)


def scale_to_energy(config: SimulationConfig, energy_pj: float, ref_energy_pj: float):
    """Copy of ``config`` with ``epsilon_s`` scaled in proportion to pulse energy."""
    return replace(config, epsilon_s=config.epsilon_s * energy_pj / ref_energy_pj,
                   energy_pj=energy_pj)


def sweep_pulse_energy(configs, n_atoms: float, m_max: int = DEFAULT_M_MAX,
                       storage_index: int = 0) -> list[SweepRow]:
    """Simulate each energy-tagged config and certify at one storage time."""
    if len(configs) < 2:
        raise ValueError("a sweep needs at least two configs")
    rows = []
    for cfg in configs:
        if cfg.energy_pj is None:
            raise ValueError("every sweep config needs energy_pj")
        recs = simulate(cfg)
        rec = recs[storage_index]
        p1 = correct_losses(estimate_p1(rec), cfg.loss_budget)
        g2 = estimate_g2_conditional(rec)
        pair = to_projection_pair(p1, g2)
        res = certify(pair, n_atoms, m_max)
        rows.append(SweepRow(cfg.energy_pj, cfg.epsilon_s, p1.value, p1.std_err,
                             g2.value, res.m_min, res.depth, recs))
    return rows


def load_config(fh) -> SimulationConfig:
    return SimulationConfig.from_dict(json.load(fh))
