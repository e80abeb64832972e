"""EDMD identification of a lifted linear frequency predictor.

The lift of a measurement window ``ω_{-τ..0}`` is::

    g = [ω_0, ..., ω_{-τ}, rbf_1(ω_0), ..., rbf_r(ω_0), 1, u_{-1}, ..., u_{-p}, y_0, ..., y_{-q}]

and the model evolves ``g_{k+1} = A g_k + B u_k``, ``f̄_k = C g_k`` with
``C = e_1``. One model step spans ``stride`` plant steps.

Past inputs ``u_{-1..-p}`` make the lift a state of the sampled plant when
the control changes inside the window (before EFC initiation they are 0).
``y`` is an optional auxiliary measurement channel (e.g. bus voltages).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .sfr import Trajectory


@dataclass(frozen=True)
class DictionarySpec:
    delay_count: int = 10
    rbf_count: int = 0
    rbf_centers: tuple = ()
    rbf_bandwidth: float = 0.01
    include_constant: bool = True
    input_delays: int = 0
    extra_count: int = 0

    def __post_init__(self):
        if min(self.delay_count, self.rbf_count, self.input_delays, self.extra_count) < 0:
            raise ValueError("dictionary counts must be >= 0")
        if self.rbf_count > 0:
            if not self.rbf_bandwidth > 0:
                raise ValueError("rbf_bandwidth must be positive")
            if len(self.rbf_centers) != self.rbf_count:
                raise ValueError("rbf_centers must have rbf_count entries")
        object.__setattr__(self, "rbf_centers", tuple(float(c) for c in self.rbf_centers))

    @property
    def window_length(self) -> int:
        return self.delay_count + 1

    @property
    def lift_dim(self) -> int:
        return (1 + self.delay_count + self.rbf_count + int(self.include_constant)
                + self.input_delays + self.extra_count)

    @property
    def input_slice(self) -> slice:
        k = 1 + self.delay_count + self.rbf_count + int(self.include_constant)
        return slice(k, k + self.input_delays)

    @classmethod
    def with_grid(cls, delay_count: int, rbf_count: int, lo: float, hi: float,
                  bandwidth: float | None = None, include_constant: bool = True,
                  input_delays: int = 0):
        """RBF centres on an equispaced grid over ``[lo, hi]``."""
        centers = np.linspace(lo, hi, rbf_count) if rbf_count else np.array([])
        if bandwidth is None:
            bandwidth = (hi - lo) / max(rbf_count - 1, 1) if rbf_count else 1.0
        return cls(delay_count, rbf_count, tuple(centers), float(bandwidth), include_constant,
                   input_delays)


def lift(spec: DictionarySpec, window, past_inputs=None, extra=None) -> np.ndarray:
    """Lift a window ordered oldest → newest; ``window[-1]`` is ω_0.

    ``past_inputs`` is also oldest → newest (last entry u_{-1}); missing
    entries are zero.
    """
    window = np.asarray(window, dtype=float).ravel()
    if len(window) < spec.window_length:
        raise ValueError(f"window has {len(window)} samples, need {spec.window_length}")
    recent = window[::-1][: spec.window_length]
    parts = [recent]
    if spec.rbf_count:
        c = np.asarray(spec.rbf_centers)
        parts.append(np.exp(-0.5 * ((recent[0] - c) / spec.rbf_bandwidth) ** 2))
    if spec.include_constant:
        parts.append(np.ones(1))
    if spec.input_delays:
        hist = np.zeros(spec.input_delays)
        if past_inputs is not None:
            pu = np.asarray(past_inputs, dtype=float).ravel()[::-1][: spec.input_delays]
            hist[: len(pu)] = pu
        parts.append(hist)
    if spec.extra_count:
        if extra is None:
            raise ValueError("dictionary expects an extra input channel")
        extra = np.asarray(extra, dtype=float).ravel()
        if len(extra) < spec.extra_count:
            raise ValueError("extra channel window too short")
        parts.append(extra[::-1][: spec.extra_count])
    return np.concatenate(parts)


def lift_series(spec: DictionarySpec, series, inputs=None) -> np.ndarray:
    """Lift every full window of a coarse series; row j ends at sample ``j + delay_count``.

    ``inputs[i]`` is the control held over coarse step i (zero before the series).
    """
    series = np.asarray(series, dtype=float)
    d = spec.delay_count
    n = len(series) - d
    if n <= 0:
        raise ValueError("series shorter than the lift window")
    delays = np.stack([series[d - i: d - i + n] for i in range(d + 1)], axis=1)
    parts = [delays]
    if spec.rbf_count:
        c = np.asarray(spec.rbf_centers)
        parts.append(np.exp(-0.5 * ((delays[:, :1] - c[None, :]) / spec.rbf_bandwidth) ** 2))
    if spec.include_constant:
        parts.append(np.ones((n, 1)))
    if spec.input_delays:
        u = np.zeros(len(series)) if inputs is None else np.asarray(inputs, dtype=float)
        padded = np.concatenate([np.zeros(spec.input_delays), u, np.zeros(len(series))])
        q = spec.input_delays
        # row j sits at sample i = j + d and needs u_{i-1}, ..., u_{i-q}
        idx = np.arange(n)[:, None] + d + q - 1 - np.arange(q)[None, :]
        parts.append(padded[idx])
    if spec.extra_count:
        raise ValueError("lift_series does not support the extra channel; use lift()")
    return np.concatenate(parts, axis=1)


@dataclass(frozen=True)
class KoopmanModel:
    A: np.ndarray
    B: np.ndarray
    dictionary: DictionarySpec
    training_residual: float = 0.0
    stride: int = 1
    dt: float = 1.0
    C: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.dictionary.lift_dim
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.shape != (n, n) or B.shape[0] != n:
            raise ValueError(f"inconsistent shapes A{A.shape} B{B.shape} for lift dim {n}")
        C = np.zeros((1, n))
        C[0, 0] = 1.0
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def lift_dim(self) -> int:
        return self.A.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    def lift(self, window, past_inputs=None, extra=None) -> np.ndarray:
        return lift(self.dictionary, window, past_inputs, extra)


def coarse_series(traj: Trajectory, stride: int):
    """Decimate a trajectory; controls are block-averaged over each coarse step."""
    w = np.asarray(traj.freq_dev)[::stride]
    u_full = np.asarray(traj.injected_power, dtype=float)
    nblk = (len(u_full) - 1) // stride
    u = u_full[: nblk * stride].reshape(nblk, stride).mean(axis=1)
    return w, u


def _snapshots(dataset, spec: DictionarySpec, stride: int, start_index: int):
    Gs, Gn, Us = [], [], []
    d = spec.delay_count
    for traj in dataset:
        w, u = coarse_series(traj, stride)
        G = lift_series(spec, w, u)
        # row j of G is the lift at coarse index j + d
        first = max(0, start_index - d)
        last = min(len(G) - 1, len(u) - d)
        if last <= first:
            continue
        Gs.append(G[first:last])
        Gn.append(G[first + 1: last + 1])
        Us.append(u[first + d: last + d, None])
    if not Gs:
        raise ValueError("dataset too short for the lift window")
    return np.concatenate(Gs), np.concatenate(Gn), np.concatenate(Us)


def fit_linear_pair(G: np.ndarray, Gnext: np.ndarray, U: np.ndarray, ridge: float = 0.0):
    """Ridge least squares for ``Gnext ≈ G Aᵀ + U Bᵀ`` via the normal equations."""
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    Z = np.hstack([G, U])
    n, p = Z.shape
    if n < p:
        raise ValueError(f"need at least {p} snapshot pairs, got {n}")
    gram = Z.T @ Z
    if ridge == 0 and np.linalg.matrix_rank(Z) < p:
        raise np.linalg.LinAlgError(
            "rank-deficient regressor (e.g. no input excitation); use ridge > 0")
    gram[np.diag_indices(p)] += ridge
    try:
        coef = scipy.linalg.solve(gram, Z.T @ Gnext, assume_a="pos")
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        raise np.linalg.LinAlgError("singular normal equations; use ridge > 0") from exc
    k = G.shape[1]
    return coef[:k].T, coef[k:].T


def train_edmd(dataset, spec: DictionarySpec, ridge: float = 1e-8, stride: int = 10,
               start_time: float = 0.0) -> KoopmanModel:
    """Fit ``(A, B)`` on all snapshot pairs whose window ends at or after ``start_time``."""
    dataset = list(dataset)
    dt = dataset[0].step_dt * stride
    start_index = max(spec.delay_count, int(np.ceil(start_time / dt - 1e-9)))
    G, Gn, U = _snapshots(dataset, spec, stride, start_index)
    A, B = fit_linear_pair(G, Gn, U, ridge)
    resid = Gn[:, 0] - G @ A[0] - U @ B[0]
    return KoopmanModel(A, B, spec, float(np.sqrt(np.mean(resid ** 2))), stride, dt)


def one_step_residual(model: KoopmanModel, dataset, start_time: float = 0.0) -> float:
    """RMS one-step error of the frequency coordinate on ``dataset``."""
    start_index = max(model.dictionary.delay_count, int(np.ceil(start_time / model.dt - 1e-9)))
    G, Gn, U = _snapshots(list(dataset), model.dictionary, model.stride, start_index)
    resid = Gn[:, 0] - G @ model.A[0] - U @ model.B[0]
    return float(np.sqrt(np.mean(resid ** 2)))


def _inputs(model: KoopmanModel, u, T: int) -> np.ndarray:
    m = model.input_dim
    out = np.zeros((T, m))
    if u is None:
        return out
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        if m != 1:
            raise ValueError(f"expected inputs of dimension {m}")
        u = u[:, None]
    if u.shape[1] != m:
        raise ValueError(f"expected inputs of dimension {m}, got {u.shape[1]}")
    k = min(T, len(u))
    out[:k] = u[:k]
    return out


def predict(model: KoopmanModel, g0, u=None, T: int = 1) -> np.ndarray:
    """Frequency predictions ``f̄_1..f̄_T`` from lift ``g0`` under inputs ``u``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    g = np.asarray(g0, dtype=float).ravel()
    if g.shape != (model.lift_dim,):
        raise ValueError(f"g0 has shape {g.shape}, expected ({model.lift_dim},)")
    uu = _inputs(model, u, T)
    f = np.empty(T)
    for t in range(T):
        g = model.A @ g + model.B @ uu[t]
        f[t] = g[0]
    return f


def prediction_operators(model: KoopmanModel, T: int):
    """Stacked maps with ``f̄ = Phi @ g0 + Gamma @ vec(u)``.

    ``Phi[t-1] = C A^t`` and ``Gamma[t-1, k*m:(k+1)*m] = C A^{t-1-k} B`` for k < t.
    """
    n, m = model.lift_dim, model.input_dim
    Phi = np.empty((T, n))
    markov = np.empty((T, m))
    row = model.C[0].copy()
    for t in range(T):
        markov[t] = row @ model.B       # C A^t B
        row = row @ model.A
        Phi[t] = row                    # C A^{t+1}
    Gamma = np.zeros((T, T * m))
    for t in range(T):
        for k in range(t + 1):
            Gamma[t, k * m:(k + 1) * m] = markov[t - k]
    return Phi, Gamma


@dataclass
class PredictionErrorSample:
    """Errors of one trajectory's prediction, indexed by horizon step 1..T."""

    errors: np.ndarray
    nadir_error: float
    predicted: np.ndarray
    measured: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.errors)


def anchored_window(model: KoopmanModel, traj: Trajectory, anchor_time: float):
    w, u = coarse_series(traj, model.stride)
    ja = int(round(anchor_time / model.dt))
    d = model.dictionary.delay_count
    if ja < d:
        raise ValueError("anchor too early for the lift window")
    return w, u, ja


def collect_errors(model: KoopmanModel, dataset, control_policy: str = "recorded",
                   anchor_time: float = 1.5, horizon: int | None = None):
    """Prediction errors ``e_t = measured − f̄_t`` from the anchor onwards."""
    if control_policy not in ("recorded", "none"):
        raise ValueError("control_policy must be 'recorded' or 'none'")
    out = []
    for traj in dataset:
        w, u, ja = anchored_window(model, traj, anchor_time)
        avail = min(len(w) - 1 - ja, len(u) - ja)
        T = avail if horizon is None else min(horizon, avail)
        if T < 1:
            raise ValueError("trajectory too short for the requested horizon")
        g0 = lift(model.dictionary, w[: ja + 1], u[:ja])
        uu = u[ja: ja + T] if control_policy == "recorded" else None
        pred = predict(model, g0, uu, T)
        meas = w[ja + 1: ja + 1 + T]
        out.append(PredictionErrorSample(meas - pred, float(meas.min() - pred.min()), pred, meas))
    return out
