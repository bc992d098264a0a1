"""Tabular MDP model, JSON I/O, bundled fixtures and the random generator."""

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

PROB_TOL = 1e-12


class MdpValidationError(ValueError):
    """Raised when an MDP (or an MDP file) violates the model invariants."""


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite MDP with transition tensor ``p[s, a, s']``, reward ``r[s, a]``
    and initial distribution ``rho[s]``.

    Arrays are copied and made read-only on construction.
    """

    p: np.ndarray
    r: np.ndarray
    rho: np.ndarray
    r_bound: float = 1.0

    def __post_init__(self):
        for name in ("p", "r", "rho"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        problems = validate_arrays(self.p, self.r, self.rho, self.r_bound)
        if problems:
            raise MdpValidationError("; ".join(problems))

    @property
    def S(self) -> int:
        return self.p.shape[0]

    @property
    def A(self) -> int:
        return self.p.shape[1]

    @property
    def r_max(self) -> float:
        """Largest absolute reward, the ``R_max`` of the bounds."""
        return float(np.abs(self.r).max())

    @property
    def rho_positive(self) -> bool:
        return bool(np.all(self.rho > 0))

    def with_rho(self, rho) -> "Mdp":
        return Mdp(self.p, self.r, rho, self.r_bound)

    def to_dict(self) -> dict:
        return {
            "S": self.S,
            "A": self.A,
            "p": self.p.tolist(),
            "r": self.r.tolist(),
            "rho": self.rho.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def digest(self) -> str:
        """Short content hash, used to tie checkpoints to fixtures."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def validate_arrays(p, r, rho, r_bound=1.0):
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    if p.ndim != 3 or p.shape[0] != p.shape[2]:
        return [f"p: expected shape [S][A][S], got {list(p.shape)}"]
    S, A, _ = p.shape
    if S < 1 or A < 1:
        return ["S and A must be positive"]
    if r.shape != (S, A):
        problems.append(f"r: expected shape [{S}][{A}], got {list(r.shape)}")
    if rho.shape != (S,):
        problems.append(f"rho: expected shape [{S}], got {list(rho.shape)}")
    if problems:
        return problems
    for arr, name in ((p, "p"), (r, "r"), (rho, "rho")):
        if not np.all(np.isfinite(arr)):
            idx = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
            problems.append(f"{name}{_fmt_index(idx)}: non-finite entry")
    if problems:
        return problems
    for s, a, t in np.argwhere(p < 0):
        problems.append(f"p[{s}][{a}][{t}]: negative probability {p[s, a, t]!r}")
    sums = p.sum(axis=2)
    for s, a in np.argwhere(np.abs(sums - 1.0) > PROB_TOL):
        problems.append(f"p[{s}][{a}]: row sums to {sums[s, a]!r}, expected 1")
    for (s,) in np.argwhere(rho < 0):
        problems.append(f"rho[{s}]: negative probability {rho[s]!r}")
    if abs(rho.sum() - 1.0) > PROB_TOL:
        problems.append(f"rho: sums to {rho.sum()!r}, expected 1")
    for s, a in np.argwhere((r < 0) | (r > r_bound)):
        problems.append(f"r[{s}][{a}]: reward {r[s, a]!r} outside [0, {r_bound}]")
    return problems


def _fmt_index(idx):
    return "".join(f"[{i}]" for i in idx)


def _locate(text, path):
    """Best-effort line number of the JSON array entry named by ``path``."""
    key, *idx = path
    start = text.find(f'"{key}"')
    if start < 0:
        return None
    pos = text.find("[", start)
    if pos < 0:
        return None
    depth, counters = 0, []
    # walk the nested arrays, counting commas at each depth
    for i in range(pos, len(text)):
        ch = text[i]
        at_target = depth == len(idx) and counters == idx
        if ch == "[":
            if at_target:
                return text.count("\n", 0, i) + 1
            depth += 1
            counters.append(0)
        elif ch == "]":
            depth -= 1
            counters.pop()
            if depth == 0:
                return None
        elif ch == ",":
            counters[-1] += 1
        elif not ch.isspace() and at_target:
            return text.count("\n", 0, i) + 1
    return None


def load_mdp(path) -> Mdp:
    """Load and validate an MDP JSON file.

    Raises :class:`MdpValidationError` whose message lists every violation,
    prefixed by the file line where the offending entry sits.
    """
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MdpValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    return mdp_from_dict(data, source=str(path), text=text)


def mdp_from_dict(data, source="<dict>", text=None) -> Mdp:
    missing = [k for k in ("S", "A", "p", "r", "rho") if k not in data]
    if missing:
        raise MdpValidationError(f"{source}: missing keys {missing}")
    try:
        p = np.asarray(data["p"], dtype=float)
        r = np.asarray(data["r"], dtype=float)
        rho = np.asarray(data["rho"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise MdpValidationError(f"{source}: ragged or non-numeric array ({exc})") from exc
    problems = []
    if p.ndim == 3 and (p.shape[0], p.shape[1]) != (data["S"], data["A"]):
        problems.append(f"S/A header ({data['S']}, {data['A']}) disagrees with p shape {list(p.shape)}")
    problems += validate_arrays(p, r, rho)
    if problems:
        lines = []
        for msg in problems:
            line = None
            if text is not None and "[" in msg.split(":")[0]:
                head = msg.split(":")[0]
                key = head.split("[")[0]
                idx = [int(x) for x in head[len(key):].strip("[]").split("][")]
                line = _locate(text, (key, *idx))
            lines.append(f"{source}:{line}: {msg}" if line else f"{source}: {msg}")
        raise MdpValidationError("\n".join(lines))
    return Mdp(p, r, rho)


def save_mdp(mdp: Mdp, path) -> None:
    Path(path).write_text(mdp.to_json())


def generate_mdp(S: int, A: int, seed: int, floor: float = 0.01) -> Mdp:
    """Random ergodic MDP with every transition probability at least ``floor``.

    Each ``p[s, a, :]`` is a flat Dirichlet draw mixed with the uniform floor,
    ``floor + (1 - S * floor) * d``; rewards are uniform on [0, 1] and the
    initial distribution is uniform.
    """
    if not 0 < floor < 1.0 / S:
        raise ValueError(f"floor must lie in (0, 1/S) = (0, {1.0 / S}), got {floor}")
    rng = np.random.default_rng(seed)
    d = rng.dirichlet(np.ones(S), size=(S, A))
    p = floor + (1.0 - S * floor) * d
    p /= p.sum(axis=2, keepdims=True)
    r = rng.uniform(0.0, 1.0, size=(S, A))
    rho = np.full(S, 1.0 / S)
    return Mdp(p, r, rho)


def two_state_mdp(rho=(1.0, 0.0)) -> Mdp:
    """Action 0 stays with probability 0.9, action 1 switches with probability 0.9."""
    p = np.empty((2, 2, 2))
    for s in range(2):
        p[s, 0, s], p[s, 0, 1 - s] = 0.9, 0.1
        p[s, 1, 1 - s], p[s, 1, s] = 0.9, 0.1
    r = np.array([[1.0, 1.0], [0.0, 0.0]])
    return Mdp(p, r, np.asarray(rho, dtype=float))


def single_state_mdp() -> Mdp:
    return Mdp(np.ones((1, 2, 1)), np.array([[1.0, 0.0]]), np.ones(1))


FIXTURES = ("fix1", "fix2", "fix3")


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("fictdisc") / "fixtures" / f"{name}.json"))


def load_fixture(name: str) -> Mdp:
    """Load one of the bundled fixtures ``fix1``, ``fix2`` or ``fix3``."""
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; available: {FIXTURES}")
    return load_mdp(fixture_path(name))
