"""Aggregated system-frequency-response (SFR) plant.

Two states, per unit on the system base::

    2H  dω/dt = p_m + u − ΔP − D ω
    T_g dp/dt = lim(−K_g · db(ω)) − p_m

``lim`` is a smooth limiter ``s·tanh(x/s)`` so the right-hand side stays
C∞ and fixed-step RK4 keeps its fourth-order accuracy. ``db`` is an
optional symmetric deadband. Measurement noise is added to the reported
frequency only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class IntegrationError(RuntimeError):
    """Raised when the state leaves the finite range."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite state at integration step {step}")


@dataclass(frozen=True)
class SfrParams:
    inertia_2H: float = 10.0
    damping_D: float = 1.0
    governor_gain: float = 20.0
    governor_time_const: float = 4.0
    deadband: float = 0.0
    step_dt: float = 0.01
    saturation: float | None = 0.2
    noise_std: float = 1e-4

    def __post_init__(self):
        if not self.inertia_2H > 0:
            raise ValueError("inertia_2H must be positive")
        if not self.step_dt > 0:
            raise ValueError("step_dt must be positive")
        if not self.governor_time_const > 0:
            raise ValueError("governor_time_const must be positive")
        if self.saturation is not None and self.saturation < 0:
            raise ValueError("saturation level must be >= 0")
        if self.deadband < 0 or self.noise_std < 0:
            raise ValueError("deadband and noise_std must be >= 0")


@dataclass(frozen=True)
class Disturbance:
    onset_time: float
    power_deficit: float

    def __post_init__(self):
        if self.onset_time < 0:
            raise ValueError("onset_time must be >= 0")
        if self.power_deficit < 0:
            raise ValueError("power_deficit must be >= 0")


@dataclass
class Trajectory:
    """Sampled event response.

    ``freq_dev`` is the noisy measurement; ``clean_freq_dev`` the plant state.
    ``injected_power[k]`` is held over ``[times[k], times[k+1])``.
    """

    times: np.ndarray
    freq_dev: np.ndarray
    injected_power: np.ndarray
    noise_seed: int
    clean_freq_dev: np.ndarray = field(repr=False, default=None)
    disturbance: Disturbance | None = None

    def __post_init__(self):
        n = len(self.times)
        if len(self.freq_dev) != n or len(self.injected_power) != n:
            raise ValueError("trajectory arrays must have equal lengths")
        if self.clean_freq_dev is None:
            self.clean_freq_dev = np.array(self.freq_dev, dtype=float)

    @property
    def step_dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def nadir(self) -> float:
        return float(np.min(self.clean_freq_dev))


def _limiter(x, params: SfrParams):
    s = params.saturation
    if s is None:
        return x
    if s == 0:
        return np.zeros_like(x)
    return s * np.tanh(x / s)


def _deadband(w, db):
    if db <= 0:
        return w
    return np.sign(w) * np.maximum(np.abs(w) - db, 0.0)


def _rhs(w, p, net_power, params: SfrParams):
    target = _limiter(-params.governor_gain * _deadband(w, params.deadband), params)
    dw = (p + net_power - params.damping_D * w) / params.inertia_2H
    dp = (target - p) / params.governor_time_const
    return dw, dp


def rk4_step(w, p, net_power, params: SfrParams, dt: float | None = None):
    """Advance the two states by one step with ``net_power = u − ΔP`` held."""
    h = params.step_dt if dt is None else dt
    k1w, k1p = _rhs(w, p, net_power, params)
    k2w, k2p = _rhs(w + 0.5 * h * k1w, p + 0.5 * h * k1p, net_power, params)
    k3w, k3p = _rhs(w + 0.5 * h * k2w, p + 0.5 * h * k2p, net_power, params)
    k4w, k4p = _rhs(w + h * k3w, p + h * k3p, net_power, params)
    w = w + h / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
    p = p + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    return w, p


def n_steps(horizon: float, dt: float) -> int:
    return int(round(horizon / dt))


def deficit_profile(dist: Disturbance, n: int, dt: float) -> np.ndarray:
    """Per-step deficit; the step switches on at the first grid point >= onset."""
    k_on = int(np.ceil(dist.onset_time / dt - 1e-9))
    prof = np.zeros(n)
    prof[k_on:] = dist.power_deficit
    return prof


def _pad_control(control, n: int) -> np.ndarray:
    u = np.zeros(n)
    if control is None:
        return u
    control = np.asarray(control, dtype=float).ravel()
    if len(control) > n:
        raise ValueError(f"control has {len(control)} entries, expected at most {n}")
    u[: len(control)] = control
    return u


def _integrate(params, deficits, controls):
    """Vectorised RK4 over a batch; ``deficits``/``controls`` are (batch, n)."""
    batch, n = deficits.shape
    w = np.zeros(batch)
    p = np.zeros(batch)
    out = np.zeros((batch, n + 1))
    for k in range(n):
        w, p = rk4_step(w, p, controls[:, k] - deficits[:, k], params)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(p))):
            raise IntegrationError(k + 1)
        out[:, k + 1] = w
    return out


def simulate(params: SfrParams, dist: Disturbance, control=None, horizon: float = 60.0,
             seed: int = 0) -> Trajectory:
    """Integrate one event with fixed-step RK4 and add measurement noise."""
    if horizon <= dist.onset_time:
        raise ValueError("horizon must exceed the disturbance onset time")
    dt = params.step_dt
    n = n_steps(horizon, dt)
    u = _pad_control(control, n + 1)
    clean = _integrate(params, deficit_profile(dist, n, dt)[None, :], u[None, :n])[0]
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, params.noise_std, n + 1) if params.noise_std > 0 else 0.0
    return Trajectory(
        times=dt * np.arange(n + 1),
        freq_dev=clean + noise,
        injected_power=u,
        noise_seed=int(seed),
        clean_freq_dev=clean,
        disturbance=dist,
    )


def random_excitation(rng: np.random.Generator, n: int, dt: float, amplitude: float,
                      hold: float = 1.0, start: float = 0.0) -> np.ndarray:
    """Piecewise-constant random control in ``[0, amplitude]`` with dwell ``hold`` seconds."""
    u = np.zeros(n)
    if amplitude <= 0:
        return u
    k_hold = max(1, int(round(hold / dt)))
    k0 = int(np.ceil(start / dt - 1e-9))
    levels = rng.uniform(0.0, amplitude, size=(n - k0) // k_hold + 1)
    u[k0:] = np.repeat(levels, k_hold)[: n - k0]
    return u


def generate_dataset(params: SfrParams, n_traj: int, deficit_range=(0.04, 0.14),
                     horizon: float = 60.0, seed: int = 0, onset_time: float = 1.0,
                     control_amplitude: float = 0.0, control_hold: float = 1.0,
                     control_start: float | None = None) -> list[Trajectory]:
    """Sample ``n_traj`` events with uniform deficits.

    Each trajectory gets its own child seed spawned from ``seed`` so results do
    not depend on generation order. ``control_amplitude > 0`` adds a random
    piecewise-constant injection (starting at ``control_start``, default the
    onset) to excite the input channel for identification.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    lo, hi = map(float, deficit_range)
    if hi < lo:
        raise ValueError(f"empty deficit range [{lo}, {hi}]")
    if horizon <= onset_time:
        raise ValueError("horizon must exceed the disturbance onset time")
    root = np.random.SeedSequence(seed)
    master = np.random.default_rng(root)
    deficits = master.uniform(lo, hi, size=n_traj) if hi > lo else np.full(n_traj, lo)
    children = root.spawn(n_traj)
    noise_seeds = [int(c.generate_state(1)[0]) for c in children]

    dt = params.step_dt
    n = n_steps(horizon, dt)
    start = onset_time if control_start is None else control_start
    dists = [Disturbance(onset_time, float(d)) for d in deficits]
    controls = np.zeros((n_traj, n + 1))
    for i, s in enumerate(noise_seeds):
        exc_rng = np.random.default_rng([s, 1])
        controls[i] = random_excitation(exc_rng, n + 1, dt, control_amplitude, control_hold, start)
    defs = np.stack([deficit_profile(d, n, dt) for d in dists])
    clean = _integrate(params, defs, controls[:, :n])

    times = dt * np.arange(n + 1)
    out = []
    for i, s in enumerate(noise_seeds):
        rng = np.random.default_rng(s)
        noise = rng.normal(0.0, params.noise_std, n + 1) if params.noise_std > 0 else 0.0
        out.append(Trajectory(times, clean[i] + noise, controls[i], s, clean[i], dists[i]))
    return out


def noiseless(params: SfrParams) -> SfrParams:
    return replace(params, noise_std=0.0)
