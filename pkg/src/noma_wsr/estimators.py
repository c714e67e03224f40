"""scikit-learn style wrappers around the allocation solvers.

An allocator is configured through ``__init__`` keyword arguments only,
``fit`` takes one :class:`Instance` (or a dict / JSON path describing one)
and stores fitted attributes with a trailing underscore.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .model import Instance, InstanceError, rate_matrix, decoding_order
from .multi_carrier import SolveReport, exhaustive_oracle, ftpc, jspa, mcpc


def check_instance(inst, M: int | None = None) -> Instance:
    """Coerce ``inst`` to a validated :class:`Instance`.

    Accepts an Instance, a dict in the JSON layout, or a path to a JSON file.
    ``M`` overrides the instance's per-subcarrier user limit when given.
    """
    if isinstance(inst, Instance):
        out = inst
    elif isinstance(inst, dict):
        out = Instance.from_dict(inst)
    elif isinstance(inst, (str, Path)):
        out = Instance.from_json(Path(inst))
    else:
        raise InstanceError(f"cannot build an instance from {type(inst).__name__}")
    if M is not None:
        if int(M) < 1:
            raise InstanceError("M: must be at least 1")
        out = out.with_M(min(int(M), out.K))
    return out


def check_power(inst: Instance, power, atol: float = 1e-9) -> np.ndarray:
    """Validate a (K, N) power matrix against the instance budget."""
    power = np.asarray(power, dtype=float)
    if power.shape != (inst.K, inst.N):
        raise InstanceError(f"power: expected shape {(inst.K, inst.N)}, got {power.shape}")
    if not np.all(np.isfinite(power)) or np.any(power < 0):
        raise InstanceError("power: entries must be finite and non-negative")
    per_sub = power.sum(axis=0)
    if per_sub.sum() > inst.P_max * (1 + atol) or np.any(per_sub > inst.P_max_n * (1 + atol)):
        raise InstanceError("power: budget exceeded")
    if np.any(np.count_nonzero(power, axis=0) > inst.M):
        raise InstanceError(f"power: more than M={inst.M} users on a subcarrier")
    return power


class _Allocator(BaseEstimator):
    """Shared fit/predict/score plumbing."""

    def _solve(self, inst: Instance) -> SolveReport:  # pragma: no cover - abstract
        raise NotImplementedError

    def fit(self, inst, y=None):
        inst = check_instance(inst, getattr(self, "M", None))
        report = self._solve(inst)
        self.report_ = report
        self.power_ = report.power
        self.budgets_ = report.budgets
        self.wsr_ = report.wsr
        self.n_iter_ = report.iterations
        self.converged_ = report.converged
        self.n_users_, self.n_subcarriers_ = inst.K, inst.N
        return self

    def predict(self, inst=None) -> np.ndarray:
        """Per-user rates (bit/s) of the fitted power on ``inst``.

        With no argument, the rates on the fitted instance are returned.
        """
        check_is_fitted(self, "power_")
        if inst is None:
            return self.report_.user_rates
        inst = check_instance(inst)
        power = check_power(inst, self.power_)
        return rate_matrix(inst, decoding_order(inst), power).sum(axis=1)

    def score(self, inst, y=None) -> float:
        """Weighted sum-rate of the fitted power on ``inst``."""
        inst = check_instance(inst)
        return float(inst.weight @ self.predict(inst))

    def fit_predict(self, inst, y=None) -> np.ndarray:
        return self.fit(inst).predict()


class JSPAAllocator(_Allocator):
    def __init__(self, M=None, epsilon=1e-4, max_iter=10_000, line_tol=1e-10):
        self.M = M
        self.epsilon = epsilon
        self.max_iter = max_iter
        self.line_tol = line_tol

    def _solve(self, inst):
        return jspa(inst, epsilon=self.epsilon, max_iter=self.max_iter, line_tol=self.line_tol)


class MCPCAllocator(_Allocator):
    """Power control for a fixed ``assignment`` (list of user lists per subcarrier)."""

    def __init__(self, assignment=None, M=None, epsilon=1e-4, max_iter=10_000, line_tol=1e-10):
        self.assignment = assignment
        self.M = M
        self.epsilon = epsilon
        self.max_iter = max_iter
        self.line_tol = line_tol

    def _solve(self, inst):
        if self.assignment is None:
            raise InstanceError("assignment: required for MCPCAllocator")
        return mcpc(inst, self.assignment, epsilon=self.epsilon, max_iter=self.max_iter, line_tol=self.line_tol)


class FTPCAllocator(_Allocator):
    def __init__(self, M=None, decay=0.4):
        self.M = M
        self.decay = decay

    def _solve(self, inst):
        return ftpc(inst, decay=self.decay)


class OracleAllocator(_Allocator):
    def __init__(self, M=None, cap=10**6):
        self.M = M
        self.cap = cap

    def _solve(self, inst):
        return exhaustive_oracle(inst, cap=self.cap)


ALLOCATORS = {
    "jspa": JSPAAllocator,
    "mcpc": MCPCAllocator,
    "ftpc": FTPCAllocator,
    "oracle": OracleAllocator,
}

__all__ = [
    "ALLOCATORS",
    "FTPCAllocator",
    "JSPAAllocator",
    "MCPCAllocator",
    "NotFittedError",
    "OracleAllocator",
    "check_instance",
    "check_power",
]
