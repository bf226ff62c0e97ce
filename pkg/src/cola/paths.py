"""Layer-composition state space: paths, construction states and the action grammar.

A search state is a committed ``prefix`` of layer indices plus a ``cursor`` into
the original stack.  Every state evaluates as ``prefix + [cursor, N)``, so the
root (empty prefix, cursor 0) is the standard forward pass.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

MAX_BLOCK = 4
MAX_EXTRA_COPIES = 4


class PathError(ValueError):
    """Raised for malformed paths or path text."""


class IllegalActionError(ValueError):
    """An action was applied to a state that does not admit it."""

    def __init__(self, action: "Action", state: "PathState", reason: str) -> None:
        self.action = action
        self.state = state
        self.reason = reason
        super().__init__(f"illegal {action} at cursor={state.cursor} "
                         f"(prefix length {len(state.prefix)}): {reason}")


class SpaceMode(str, enum.Enum):
    JOINT = "joint"
    SKIP_ONLY = "skip"
    RECURRENCE_ONLY = "recur"

    def allows(self, kind: "ActionKind") -> bool:
        if kind is ActionKind.SKIP:
            return self is not SpaceMode.RECURRENCE_ONLY
        if kind is ActionKind.REPEAT:
            return self is not SpaceMode.SKIP_ONLY
        return True


class ActionKind(enum.IntEnum):
    # Integer values give the tie-break order used by selection.
    KEEP = 0
    SKIP = 1
    REPEAT = 2


@dataclass(frozen=True, order=True)
class Action:
    kind: ActionKind
    block: int
    extra_copies: int | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.block <= MAX_BLOCK:
            raise ValueError(f"block size must be in 1..{MAX_BLOCK}, got {self.block}")
        if self.kind is ActionKind.REPEAT:
            if self.extra_copies is None or not 1 <= self.extra_copies <= MAX_EXTRA_COPIES:
                raise ValueError(f"repeat needs extra_copies in 1..{MAX_EXTRA_COPIES}")
        elif self.extra_copies is not None:
            raise ValueError(f"{self.kind.name.lower()} takes no extra_copies")

    @classmethod
    def keep(cls, k: int) -> Action:
        return cls(ActionKind.KEEP, k)

    @classmethod
    def skip(cls, k: int) -> Action:
        return cls(ActionKind.SKIP, k)

    @classmethod
    def repeat(cls, k: int, r: int) -> Action:
        return cls(ActionKind.REPEAT, k, r)

    @property
    def sort_key(self) -> tuple[int, int, int]:
        return (int(self.kind), self.block, self.extra_copies or 0)

    def inserted(self) -> int:
        """Number of layer applications this action appends to the prefix."""
        if self.kind is ActionKind.SKIP:
            return 0
        if self.kind is ActionKind.KEEP:
            return self.block
        return self.block * (self.extra_copies + 1)

    def __str__(self) -> str:
        name = self.kind.name.capitalize()
        if self.kind is ActionKind.REPEAT:
            return f"{name}({self.block},{self.extra_copies})"
        return f"{name}({self.block})"


@dataclass(frozen=True)
class StackSpec:
    num_layers: int
    max_path_len: int = 0  # 0 selects the default cap of 2N

    def __post_init__(self) -> None:
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.max_path_len == 0:
            object.__setattr__(self, "max_path_len", 2 * self.num_layers)
        if self.max_path_len < self.num_layers:
            raise ValueError(f"max_path_len ({self.max_path_len}) must be >= num_layers "
                             f"({self.num_layers})")


@dataclass(frozen=True)
class LayerPath:
    layers: tuple[int, ...]

    def __init__(self, layers: Iterable[int]) -> None:
        object.__setattr__(self, "layers", tuple(int(i) for i in layers))

    def __len__(self) -> int:
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def non_recurrent_depth(self) -> int:
        return len(set(self.layers))

    def validate(self, spec: StackSpec) -> None:
        if not self.layers:
            raise PathError("path is empty")
        if len(self.layers) > spec.max_path_len:
            raise PathError(f"path length {len(self.layers)} exceeds cap {spec.max_path_len}")
        bad = [i for i in self.layers if not 0 <= i < spec.num_layers]
        if bad:
            raise PathError(f"layer index {bad[0]} outside [0, {spec.num_layers})")

    def encode(self) -> str:
        return encode_path(self)

    @classmethod
    def identity(cls, num_layers: int) -> LayerPath:
        return cls(range(num_layers))


@dataclass(frozen=True)
class PathState:
    prefix: tuple[int, ...] = field(default=())
    cursor: int = 0


def initial_state(spec: StackSpec) -> PathState:
    return PathState((), 0)


def _fits(state: PathState, action: Action, spec: StackSpec) -> str | None:
    """Return why ``action`` is not applicable at ``state``, or None if it is."""
    remaining = spec.num_layers - state.cursor
    if action.block > remaining:
        return f"block {action.block} overruns {remaining} remaining layer(s)"
    final_len = len(state.prefix) + action.inserted() + (remaining - action.block)
    if final_len > spec.max_path_len:
        return f"default completion length {final_len} exceeds cap {spec.max_path_len}"
    if final_len == 0:
        return "would leave an empty path"
    return None


def legal_actions(state: PathState, spec: StackSpec,
                  mode: SpaceMode = SpaceMode.JOINT) -> list[Action]:
    """All applicable actions at ``state`` in tie-break order (Keep < Skip < Repeat, k, r)."""
    remaining = spec.num_layers - state.cursor
    out: list[Action] = []
    for k in range(1, min(MAX_BLOCK, remaining) + 1):
        candidates = [Action.keep(k)]
        if mode.allows(ActionKind.SKIP):
            candidates.append(Action.skip(k))
        if mode.allows(ActionKind.REPEAT):
            candidates.extend(Action.repeat(k, r) for r in range(1, MAX_EXTRA_COPIES + 1))
        out.extend(a for a in candidates if _fits(state, a, spec) is None)
    out.sort(key=lambda a: a.sort_key)
    return out


def apply_action(state: PathState, action: Action, spec: StackSpec,
                 mode: SpaceMode = SpaceMode.JOINT) -> PathState:
    if not mode.allows(action.kind):
        raise IllegalActionError(action, state, f"not permitted in {mode.value} mode")
    reason = _fits(state, action, spec)
    if reason is not None:
        raise IllegalActionError(action, state, reason)
    block = tuple(range(state.cursor, state.cursor + action.block))
    if action.kind is ActionKind.SKIP:
        added: tuple[int, ...] = ()
    elif action.kind is ActionKind.KEEP:
        added = block
    else:
        added = block * (action.extra_copies + 1)
    return PathState(state.prefix + added, state.cursor + action.block)


def materialize(state: PathState, spec: StackSpec) -> LayerPath:
    return LayerPath(state.prefix + tuple(range(state.cursor, spec.num_layers)))


def materialized_length(state: PathState, spec: StackSpec) -> int:
    return len(state.prefix) + spec.num_layers - state.cursor


def is_terminal(state: PathState, spec: StackSpec) -> bool:
    return state.cursor >= spec.num_layers


def measure(path: LayerPath | Sequence[int]) -> tuple[int, int]:
    layers = tuple(path)
    return len(layers), len(set(layers))


def encode_path(path: LayerPath | Sequence[int]) -> str:
    return ",".join(str(i) for i in path)


def decode_path(text: str, spec: StackSpec | int) -> LayerPath:
    n = spec if isinstance(spec, int) else spec.num_layers
    if not text:
        raise PathError("empty path text")
    layers = []
    for token in text.split(","):
        if not token.isdigit() or not token.isascii():
            raise PathError(f"malformed token {token!r} in path {text!r}")
        index = int(token)
        if index >= n:
            raise PathError(f"token {token!r} out of range for {n} layers")
        layers.append(index)
    return LayerPath(layers)


def is_strictly_increasing(path: LayerPath | Sequence[int]) -> bool:
    layers = tuple(path)
    return all(a < b for a, b in zip(layers, layers[1:]))


def first_occurrences_are_identity(path: LayerPath | Sequence[int], num_layers: int) -> bool:
    """True iff every layer appears and first appearances run 0, 1, ..., N-1."""
    seen: list[int] = []
    for i in path:
        if i not in seen:
            seen.append(i)
    return seen == list(range(num_layers))
