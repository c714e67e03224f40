"""Problem data, SIC decoding order, rates and the tail-variable transform.

Indices are zero-based throughout: users ``k`` in ``0..K-1``, subcarriers
``n`` in ``0..N-1`` and decoding positions ``i`` in ``0..K-1``.  Position
``i`` holds the user ``order.pi[n][i]``; position 0 is decoded first (highest
normalized noise).  Tail arrays carry one extra slot, ``x[n][K] == 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_INSTANCE_FIELDS = ("K", "N", "M", "W_n", "P_max", "P_max_n", "weights", "gains", "noises")


class InstanceError(ValueError):
    """Raised when problem data violates the model invariants."""


@dataclass(frozen=True)
class Instance:
    """Downlink multi-carrier NOMA problem data (SI units)."""

    gain: np.ndarray  # (K, N) linear channel power gains
    noise: np.ndarray  # (K, N) received noise power [W]
    weight: np.ndarray  # (K,)
    W_n: float  # per-subcarrier bandwidth [Hz]
    P_max: float  # total budget [W]
    P_max_n: np.ndarray  # (N,) per-subcarrier caps [W]
    M: int = 1

    def __post_init__(self):
        gain = np.array(self.gain, dtype=float, ndmin=2)
        noise = np.array(self.noise, dtype=float, ndmin=2)
        weight = np.array(self.weight, dtype=float, ndmin=1)
        K, N = gain.shape
        caps = np.broadcast_to(np.asarray(self.P_max_n, dtype=float), (N,)).copy()
        if noise.shape != (K, N):
            raise InstanceError(f"noises: expected shape {(K, N)}, got {noise.shape}")
        if weight.shape != (K,):
            raise InstanceError(f"weights: expected {K} entries, got {weight.shape[0]}")
        if not np.all(np.isfinite(gain)) or np.any(gain <= 0):
            raise InstanceError("gains: must be finite and strictly positive")
        if not np.all(np.isfinite(noise)) or np.any(noise <= 0):
            raise InstanceError("noises: must be finite and strictly positive")
        if not np.all(np.isfinite(weight)) or np.any(weight <= 0):
            raise InstanceError("weights: must be strictly positive")
        if not (np.isfinite(self.W_n) and self.W_n > 0):
            raise InstanceError("W_n: must be strictly positive")
        if not (np.isfinite(self.P_max) and self.P_max > 0):
            raise InstanceError("P_max: must be strictly positive")
        if np.any(caps <= 0):
            raise InstanceError("P_max_n: must be strictly positive")
        if not 1 <= int(self.M) <= K:
            raise InstanceError(f"M: must lie in [1, K={K}], got {self.M}")
        for name, arr in (("gain", gain), ("noise", noise), ("weight", weight), ("P_max_n", caps)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "W_n", float(self.W_n))
        object.__setattr__(self, "P_max", float(self.P_max))
        object.__setattr__(self, "M", int(self.M))

    @property
    def K(self) -> int:
        return self.gain.shape[0]

    @property
    def N(self) -> int:
        return self.gain.shape[1]

    @property
    def eta_tilde(self) -> np.ndarray:
        """Normalized noise powers, shape (K, N)."""
        return self.noise / self.gain

    def with_weights(self, weight) -> "Instance":
        return Instance(self.gain, self.noise, weight, self.W_n, self.P_max, self.P_max_n, self.M)

    def with_M(self, M: int) -> "Instance":
        return Instance(self.gain, self.noise, self.weight, self.W_n, self.P_max, self.P_max_n, M)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "N": self.N,
            "M": self.M,
            "W_n": self.W_n,
            "P_max": self.P_max,
            "P_max_n": self.P_max_n.tolist(),
            "weights": self.weight.tolist(),
            "gains": self.gain.tolist(),
            "noises": self.noise.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Instance":
        missing = [f for f in _INSTANCE_FIELDS if f not in data]
        if missing:
            raise InstanceError(f"missing field(s): {', '.join(missing)}")
        K, N = data["K"], data["N"]
        try:
            gains = np.asarray(data["gains"], dtype=float)
            noises = np.asarray(data["noises"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise InstanceError(f"gains/noises: not a numeric matrix ({exc})") from None
        if gains.shape != (K, N):
            raise InstanceError(f"gains: expected shape {(K, N)}, got {gains.shape}")
        if noises.shape != (K, N):
            raise InstanceError(f"noises: expected shape {(K, N)}, got {noises.shape}")
        if len(data["P_max_n"]) != N:
            raise InstanceError(f"P_max_n: expected {N} entries, got {len(data['P_max_n'])}")
        return cls(
            gain=gains,
            noise=noises,
            weight=data["weights"],
            W_n=data["W_n"],
            P_max=data["P_max"],
            P_max_n=data["P_max_n"],
            M=data["M"],
        )

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, source) -> "Instance":
        """Load from a JSON string or a path to a JSON file."""
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text()
        try:
            data = json.loads(source)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"malformed JSON: {exc}") from None
        if not isinstance(data, dict):
            raise InstanceError("instance JSON must be an object")
        return cls.from_dict(data)


@dataclass(frozen=True)
class DecodingOrder:
    pi: np.ndarray  # (N, K): pi[n, i] = user decoded at position i
    pi_inv: np.ndarray  # (N, K): pi_inv[n, k] = position of user k


@dataclass
class OpCounter:
    """Basic-operation tally (additions, multiplications, comparisons)."""

    adds: int = 0
    muls: int = 0
    comparisons: int = 0

    @property
    def total(self) -> int:
        return self.adds + self.muls + self.comparisons

    def add(self, adds=0, muls=0, comparisons=0):
        self.adds += int(adds)
        self.muls += int(muls)
        self.comparisons += int(comparisons)

    def merge(self, other: "OpCounter"):
        self.add(other.adds, other.muls, other.comparisons)

    def as_dict(self) -> dict:
        return {"adds": self.adds, "muls": self.muls, "comparisons": self.comparisons, "total": self.total}


@dataclass(frozen=True)
class SingleCarrierView:
    """One subcarrier's data with users listed in decoding order.

    ``w[i]`` and ``eta[i]`` belong to the user decoded at position ``i``;
    ``users[i]`` maps the position back to the global user index.
    """

    w: np.ndarray
    eta: np.ndarray
    W_n: float
    users: np.ndarray = field(default=None)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        users = np.arange(w.size) if self.users is None else np.asarray(self.users, dtype=int)
        if np.any(np.diff(eta) > 0):
            raise InstanceError("normalized noises must be non-increasing along the decoding order")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "W_n", float(self.W_n))

    @property
    def K(self) -> int:
        return self.w.size

    def restrict(self, positions) -> "SingleCarrierView":
        """Sub-view keeping only the given decoding positions (in order)."""
        positions = np.sort(np.asarray(positions, dtype=int))
        return SingleCarrierView(self.w[positions], self.eta[positions], self.W_n, self.users[positions])


def normalized_noise(inst: Instance, k: int, n: int) -> float:
    return inst.noise[k, n] / inst.gain[k, n]


def decoding_order(inst: Instance) -> DecodingOrder:
    """Sort users per subcarrier by normalized noise, highest first.

    Ties keep ascending user index (stable sort on the negated key).
    """
    eta = inst.eta_tilde
    pi = np.argsort(-eta.T, axis=1, kind="stable")
    pi_inv = np.empty_like(pi)
    rows = np.arange(inst.N)[:, None]
    pi_inv[rows, pi] = np.arange(inst.K)[None, :]
    return DecodingOrder(pi=pi, pi_inv=pi_inv)


def carrier_view(inst: Instance, order: DecodingOrder, n: int) -> SingleCarrierView:
    users = order.pi[n]
    return SingleCarrierView(inst.weight[users], inst.eta_tilde[users, n], inst.W_n, users)


def user_rate(inst: Instance, order: DecodingOrder, p_n, k: int, n: int) -> float:
    """Shannon rate of user ``k`` on subcarrier ``n`` [bit/s] under perfect SIC."""
    p_n = np.asarray(p_n, dtype=float)
    if p_n[k] == 0.0:
        return 0.0
    pos = order.pi_inv[n, k]
    interference = p_n[order.pi[n, pos + 1:]].sum()
    return inst.W_n * np.log2(1.0 + p_n[k] / (interference + normalized_noise(inst, k, n)))


def rate_matrix(inst: Instance, order: DecodingOrder, P) -> np.ndarray:
    """All rates R[k, n] at once."""
    P = np.asarray(P, dtype=float)
    rates = np.zeros_like(P)
    eta = inst.eta_tilde
    for n in range(inst.N):
        pi = order.pi[n]
        p_sorted = P[pi, n]
        # interference seen at position i: power of positions > i
        below = np.concatenate([np.cumsum(p_sorted[::-1])[::-1][1:], [0.0]])
        rates[pi, n] = inst.W_n * np.log2(1.0 + p_sorted / (below + eta[pi, n]))
    return rates


def weighted_sum_rate(inst: Instance, order: DecodingOrder, P) -> float:
    return float(inst.weight @ rate_matrix(inst, order, P).sum(axis=1))


def tails_from_powers(order: DecodingOrder, P) -> np.ndarray:
    """Tail sums x[n, i] = sum of powers decoded at positions >= i; shape (N, K+1)."""
    P = np.asarray(P, dtype=float)
    N, K = order.pi.shape
    x = np.zeros((N, K + 1))
    for n in range(N):
        x[n, :K] = np.cumsum(P[order.pi[n], n][::-1])[::-1]
    return x


def powers_from_tails(order: DecodingOrder, X) -> np.ndarray:
    """Inverse of :func:`tails_from_powers`; rejects non-monotone tails."""
    X = np.asarray(X, dtype=float)
    N, K = order.pi.shape
    if X.shape == (N, K):
        X = np.hstack([X, np.zeros((N, 1))])
    if X.shape != (N, K + 1):
        raise InstanceError(f"tails: expected shape {(N, K + 1)}, got {X.shape}")
    if np.any(X[:, K] != 0.0):
        raise InstanceError("tails: last entry must be 0")
    diffs = X[:, :-1] - X[:, 1:]
    if np.any(diffs < 0):
        raise InstanceError("tails: must be non-increasing along the decoding order")
    P = np.zeros((K, N))
    for n in range(N):
        P[order.pi[n], n] = diffs[n]
    return P


def f_segment(sc: SingleCarrierView, j: int, i: int, x):
    """Objective of positions ``j..i`` when their tails all equal ``x``.

    Evaluated as a difference of weighted logs so that large weights never
    overflow a power.  Accepts scalar or array ``x``.
    """
    head = sc.w[i] * np.log2(x + sc.eta[i])
    if j == 0:
        return sc.W_n * head
    return sc.W_n * (head - sc.w[j - 1] * np.log2(x + sc.eta[j - 1]))


def f_segment_derivative(sc: SingleCarrierView, j: int, i: int, x):
    d = sc.w[i] / (x + sc.eta[i])
    if j > 0:
        d = d - sc.w[j - 1] / (x + sc.eta[j - 1])
    return sc.W_n * d / np.log(2.0)


def objective_offset(inst: Instance, order: DecodingOrder) -> float:
    """Constant dropped by the tail transform: WSR = f(x) + offset."""
    last = order.pi[:, -1]
    cols = np.arange(inst.N)
    eta_last = inst.eta_tilde[last, cols]
    return float(inst.W_n * np.sum(inst.weight[last] * np.log2(1.0 / eta_last)))


def transformed_objective(inst: Instance, order: DecodingOrder, X) -> float:
    """f(x) = sum over subcarriers and positions of f_i(x_i), term by term."""
    X = np.asarray(X, dtype=float)
    total = 0.0
    for n in range(inst.N):
        sc = carrier_view(inst, order, n)
        for i in range(inst.K):
            total += f_segment(sc, i, i, X[n, i])
    return float(total)
