"""Scalar-measurement least squares objectives and malicious-row attacks.

Each node i holds one measurement ``s_i = h_i . x_o + w_i`` of an unknown
vector ``x_o`` and the private cost ``f_i(x) = (h_i . x - s_i)^2``. Malicious
nodes participate in the protocol but feed it gradients of corrupted data, so
the corruption enters only through :func:`gradient` (and, for the static
attack kinds, :func:`apply_attack`), never through :func:`loss`.
"""

import json
from dataclasses import dataclass, replace
from typing import FrozenSet, Iterable, Optional

import numpy as np

from .util import ensure_rng

__all__ = [
    "ObjectiveInstance",
    "AttackSpec",
    "ATTACK_KINDS",
    "sample_instance",
    "loss",
    "gradient",
    "apply_attack",
    "effective_rows",
    "closed_form_solution",
    "hessian_min_eigenvalue",
    "instance_to_json",
    "instance_from_json",
]

ATTACK_KINDS = ("none", "spoof_shift", "mean_shift", "target_pull")


@dataclass(frozen=True, eq=False)
class ObjectiveInstance:
    """Frozen problem data: ground truth, measurement rows, observations.

    Arrays are marked read-only on construction; treat instances as values.
    """

    x_o: np.ndarray
    h: np.ndarray
    s: np.ndarray
    noise_sigma: float = 1.0

    def __post_init__(self):
        x_o = np.asarray(self.x_o, dtype=float)
        h = np.asarray(self.h, dtype=float)
        s = np.asarray(self.s, dtype=float)
        if h.ndim != 2:
            raise ValueError("h must be (n, d)")
        if x_o.shape != (h.shape[1],):
            raise ValueError("x_o length must match h columns")
        if s.shape != (h.shape[0],):
            raise ValueError("s length must match h rows")
        if not (np.isfinite(h).all() and np.isfinite(s).all() and np.isfinite(x_o).all()):
            raise ValueError("instance data must be finite")
        for arr in (x_o, h, s):
            arr.setflags(write=False)
        object.__setattr__(self, "x_o", x_o)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "s", s)

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def d(self) -> int:
        return self.h.shape[1]


@dataclass(frozen=True)
class AttackSpec:
    """What the malicious nodes do to their data or gradients.

    kind "none"        honest behaviour, remaining fields ignored
    kind "spoof_shift" adds ``delta_s`` to each malicious observation
    kind "mean_shift"  malicious rows become (column mean of regular h) - shift
                       and observations (mean of regular s) + shift
    kind "target_pull" malicious gradient is ``gain * (x - target)`` at query
                       time; data rows stay untouched
    """

    kind: str = "none"
    delta_s: float = 0.0
    shift: float = 5.0
    target: Optional[tuple] = None
    gain: float = 1.0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.kind == "target_pull":
            if self.target is None:
                raise ValueError("target_pull needs a target point")
            object.__setattr__(self, "target", tuple(float(v) for v in self.target))


def sample_instance(
    n: int,
    d: int,
    x_o: "np.ndarray | Iterable[float]",
    noise_sigma: float,
    rng: "np.random.Generator | int | None" = None,
    h_sigma: float = 1.0,
) -> ObjectiveInstance:
    """Draw measurement rows h_i ~ N(0, h_sigma^2 I) and noisy observations.

    Observation noise is N(0, noise_sigma^2), independent per node. The draw
    order (h first, then noise) is fixed so seeded runs reproduce exactly.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if noise_sigma < 0 or h_sigma <= 0:
        raise ValueError("noise_sigma must be >= 0 and h_sigma > 0")
    rng = ensure_rng(rng)
    x_o = np.asarray(x_o, dtype=float)
    if x_o.shape != (d,):
        raise ValueError("x_o must have length d")
    h = h_sigma * rng.standard_normal((n, d))
    w = noise_sigma * rng.standard_normal(n)
    s = h @ x_o + w
    return ObjectiveInstance(x_o=x_o, h=h, s=s, noise_sigma=float(noise_sigma))


def loss(inst: ObjectiveInstance, i: int, x: np.ndarray) -> float:
    """Private cost f_i(x) = (h_i . x - s_i)^2. Attacks never change this."""
    r = float(inst.h[i] @ np.asarray(x, dtype=float) - inst.s[i])
    return r * r


def effective_rows(
    inst: ObjectiveInstance,
    malicious: FrozenSet[int],
    attack: Optional[AttackSpec],
) -> tuple:
    """Measurement rows as the network actually experiences them.

    Returns ``(h_eff, s_eff)``; regular rows are always the true ones. For the
    static attack kinds the malicious rows are overlaid; "target_pull" and
    "none" leave the arrays untouched (target_pull corrupts gradients, not
    rows). The inputs are never mutated.
    """
    if attack is None or attack.kind in ("none", "target_pull") or not malicious:
        return inst.h, inst.s
    mal = sorted(malicious)
    for i in mal:
        if not 0 <= i < inst.n:
            raise ValueError(f"malicious id {i} out of range")
    reg = [i for i in range(inst.n) if i not in malicious]
    h_eff = inst.h.copy()
    s_eff = inst.s.copy()
    if attack.kind == "spoof_shift":
        s_eff[mal] = s_eff[mal] + attack.delta_s
    elif attack.kind == "mean_shift":
        if not reg:
            raise ValueError("mean_shift needs at least one regular node")
        h_eff[mal] = inst.h[reg].mean(axis=0) - attack.shift
        s_eff[mal] = inst.s[reg].mean() + attack.shift
    return h_eff, s_eff


def gradient(
    inst: ObjectiveInstance,
    i: int,
    x: np.ndarray,
    attack: Optional[AttackSpec] = None,
    malicious: FrozenSet[int] = frozenset(),
    t: int = 0,
) -> np.ndarray:
    """Gradient node i reports at x: 2 h_i (h_i . x - s_i), with overlays.

    Regular nodes always report the honest gradient. A malicious node reports
    the gradient of its corrupted row (static kinds) or the pulling field
    ``gain * (x - target)`` (kind "target_pull"). ``t`` is accepted for
    schedule-dependent attacks; none of the built-in kinds use it.
    """
    x = np.asarray(x, dtype=float)
    if attack is not None and attack.kind == "target_pull" and i in malicious:
        return attack.gain * (x - np.asarray(attack.target))
    h_eff, s_eff = effective_rows(inst, frozenset(malicious), attack)
    return 2.0 * h_eff[i] * (float(h_eff[i] @ x) - s_eff[i])


def apply_attack(
    inst: ObjectiveInstance,
    malicious: FrozenSet[int],
    attack: Optional[AttackSpec],
) -> ObjectiveInstance:
    """Bake a static attack into a new instance; the input stays untouched.

    Kind "none" (or no malicious nodes) returns the instance as-is. Kind
    "target_pull" is rejected: it exists only at gradient-query time.
    Idempotent for "mean_shift" only up to the regular rows, which it never
    touches, so re-applying after the malicious rows changed is a bug guarded
    here by always starting from the stored rows.
    """
    if attack is None or attack.kind == "none" or not malicious:
        return inst
    if attack.kind == "target_pull":
        raise ValueError("target_pull is dynamic; it cannot be baked into rows")
    h_eff, s_eff = effective_rows(inst, frozenset(malicious), attack)
    return replace(inst, h=h_eff, s=s_eff)


def closed_form_solution(
    inst: ObjectiveInstance, subset: Optional[Iterable[int]] = None
) -> np.ndarray:
    """Least squares minimizer over a node subset via the normal equations.

    Solves ``(A^T A) x = A^T s`` with A the stacked rows of ``subset`` (all
    nodes when None). Raises ``numpy.linalg.LinAlgError`` when the subset does
    not determine x (rank-deficient A^T A).
    """
    idx = sorted(range(inst.n)) if subset is None else sorted(set(int(i) for i in subset))
    if not idx:
        raise ValueError("subset is empty")
    for i in idx:
        if not 0 <= i < inst.n:
            raise ValueError(f"node {i} out of range")
    a = inst.h[idx]
    ata = a.T @ a
    ats = a.T @ inst.s[idx]
    evals = np.linalg.eigvalsh(ata)
    if evals[0] <= 1e-12 * max(evals[-1], 1.0):
        raise np.linalg.LinAlgError("normal equations are singular for this subset")
    return np.linalg.solve(ata, ats)


def hessian_min_eigenvalue(
    inst: ObjectiveInstance, subset: Optional[Iterable[int]] = None
) -> float:
    """Smallest eigenvalue of the subset-average Hessian (2/m) A^T A."""
    idx = sorted(range(inst.n)) if subset is None else sorted(set(int(i) for i in subset))
    if not idx:
        raise ValueError("subset is empty")
    a = inst.h[idx]
    hess = (2.0 / len(idx)) * (a.T @ a)
    return float(np.linalg.eigvalsh(hess)[0])


# ---- serialization ----


def instance_to_json(
    inst: ObjectiveInstance,
    malicious: Iterable[int] = (),
    attack: Optional[AttackSpec] = None,
    indent: Optional[int] = None,
) -> str:
    """Serialize instance + node split + attack to a JSON document."""
    doc = {
        "d": inst.d,
        "x_o": inst.x_o.tolist(),
        "noise_sigma": inst.noise_sigma,
        "rows": [
            {"h": inst.h[i].tolist(), "s": float(inst.s[i])} for i in range(inst.n)
        ],
        "malicious": sorted(int(i) for i in malicious),
    }
    if attack is not None and attack.kind != "none":
        entry = {"kind": attack.kind}
        if attack.kind == "spoof_shift":
            entry["delta_s"] = attack.delta_s
        elif attack.kind == "mean_shift":
            entry["shift"] = attack.shift
        elif attack.kind == "target_pull":
            entry["target"] = list(attack.target)
            entry["gain"] = attack.gain
        doc["attack"] = entry
    return json.dumps(doc, indent=indent)


def instance_from_json(text: str) -> tuple:
    """Inverse of :func:`instance_to_json`.

    Returns ``(instance, malicious, attack_or_None)``; round-trips exactly
    because floats survive JSON with their shortest round-trip repr.
    """
    doc = json.loads(text)
    d = int(doc["d"])
    rows = doc["rows"]
    h = np.asarray([r["h"] for r in rows], dtype=float).reshape(len(rows), d)
    s = np.asarray([r["s"] for r in rows], dtype=float)
    inst = ObjectiveInstance(
        x_o=np.asarray(doc["x_o"], dtype=float),
        h=h,
        s=s,
        noise_sigma=float(doc.get("noise_sigma", 1.0)),
    )
    malicious = frozenset(int(i) for i in doc.get("malicious", []))
    attack = None
    if "attack" in doc:
        entry = dict(doc["attack"])
        kind = entry.pop("kind")
        if "target" in entry:
            entry["target"] = tuple(entry["target"])
        attack = AttackSpec(kind=kind, **entry)
    return inst, malicious, attack
