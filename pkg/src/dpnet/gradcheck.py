"""Finite-difference verification of tape gradients.

Evaluates a composed op graph once under a tape to get analytic
vector-Jacobian products, then probes every input coordinate with
central differences and compares.  Double precision is required.

Coordinates whose +/- eps probes cross a subgradient kink (a relu or
min/max branch flip) are skipped and flagged rather than failed: the
finite difference is meaningless there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .rng import Lcg64
from .tensor import ConfigError, Tape, Tensor


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    tol: float
    eps: float
    n_checked: int
    n_skipped: int
    rel_err: list[np.ndarray] = field(repr=False, default_factory=list)
    skipped: list[np.ndarray] = field(repr=False, default_factory=list)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        line = (
            f"{status}: max relative error {self.max_rel_err:.3e} "
            f"(tolerance {self.tol:.1e}, eps {self.eps:.1e}, "
            f"{self.n_checked} coordinates checked"
        )
        if self.n_skipped:
            line += f", {self.n_skipped} skipped at kinks"
        return line + ")"


def grad_check(
    f: Callable[..., Tensor],
    xs: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-5,
    cotangent_seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of ``f`` against central differences.

    ``f`` must be pure and built from the primitive ops; it is evaluated
    once under a tape and twice per input coordinate for the numeric
    probe.  Errors are relative: |analytic - numeric| / max(1, |numeric|).
    """
    inputs = [xs] if isinstance(xs, Tensor) else list(xs)
    for x in inputs:
        if x.dtype != np.float64:
            raise ConfigError("grad_check requires float64 inputs")

    with Tape() as tape:
        y = f(*inputs)
    cot_rng = Lcg64(cotangent_seed)
    # Strictly positive cotangent with spread magnitudes: avoids accidental
    # cancellation that an all-ones seed could hide.
    gy = cot_rng.uniform(y.shape, 0.5, 1.5)
    analytic = tape.gradients(y, inputs, cotangent=gy)

    rel_errs: list[np.ndarray] = []
    skip_masks: list[np.ndarray] = []
    max_rel = 0.0
    n_checked = 0
    n_skipped = 0
    gy_flat = gy.reshape(-1)

    for x, ana in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        rel = np.zeros(flat.shape, dtype=np.float64)
        skipped = np.zeros(flat.shape, dtype=bool)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with ops.capture_kinks() as plus:
                y_plus = f(*inputs).data
            flat[i] = orig - eps
            with ops.capture_kinks() as minus:
                y_minus = f(*inputs).data
            flat[i] = orig
            if _kinks_crossed(plus.masks, minus.masks):
                skipped[i] = True
                n_skipped += 1
                continue
            numeric = float(
                ((y_plus - y_minus).reshape(-1) @ gy_flat) / (2.0 * eps)
            )
            err = abs(float(ana.reshape(-1)[i]) - numeric) / max(1.0, abs(numeric))
            rel[i] = err
            max_rel = max(max_rel, err)
            n_checked += 1
        rel_errs.append(rel.reshape(x.shape))
        skip_masks.append(skipped.reshape(x.shape))

    return GradCheckReport(
        passed=bool(max_rel < tol),
        max_rel_err=max_rel,
        tol=tol,
        eps=eps,
        n_checked=n_checked,
        n_skipped=n_skipped,
        rel_err=rel_errs,
        skipped=skip_masks,
    )


def _kinks_crossed(
    plus: list[np.ndarray], minus: list[np.ndarray]
) -> bool:
    if len(plus) != len(minus):
        return True
    for p, m in zip(plus, minus):
        if p.shape != m.shape or not np.array_equal(p, m):
            return True
    return False
