"""Versioned, frame-indexed storage of the shared public context.

Perception publishes one context per frame; any number of generation stages
read it back, either for the current frame (offset 0) or for past frames
(negative offsets bounded by the ring capacity). Publication is
copy-on-publish: a fully built, immutable context object is swapped into the
ring in one step, so readers can never observe a partially written slot.
"""

from __future__ import annotations

import threading
import zlib
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .errors import KindMismatch, NotYetPublished, OffsetOutOfRange, StaleWrite


class ContextKind(str, Enum):
    AUTOREGRESSIVE = "autoregressive"
    CONDITIONING = "conditioning"


def _payload_checksum(vision, language, action_tokens, conditioning,
                      source_observation_id: int, produced_frame: int) -> int:
    crc = 0
    for arr in (vision, language, conditioning):
        if arr is not None:
            crc = zlib.crc32(np.ascontiguousarray(arr, dtype=np.float64).tobytes(), crc)
    crc = zlib.crc32(repr(tuple(action_tokens)).encode(), crc)
    crc = zlib.crc32(f"{source_observation_id}:{produced_frame}".encode(), crc)
    return crc


@dataclass(frozen=True)
class PublicContext:
    """Latent state shared between perception and generation.

    Exactly the fields matching `kind` are populated: token embeddings for
    autoregressive policies, a single conditioning vector for
    iterative-refinement policies. The checksum is written last at
    construction time so torn reads are assertable in stress tests.
    """

    kind: ContextKind
    source_observation_id: int
    produced_frame: int
    vision_tokens: Optional[np.ndarray] = None
    language_tokens: Optional[np.ndarray] = None
    action_tokens: tuple[int, ...] = ()
    conditioning: Optional[np.ndarray] = None
    checksum: int = field(default=-1)

    def __post_init__(self):
        if self.kind == ContextKind.AUTOREGRESSIVE:
            if self.vision_tokens is None or self.language_tokens is None:
                raise ValueError("autoregressive context requires vision and language tokens")
            if self.conditioning is not None:
                raise ValueError("autoregressive context must not carry a conditioning vector")
        elif self.kind == ContextKind.CONDITIONING:
            if self.conditioning is None:
                raise ValueError("conditioning context requires a conditioning vector")
            if self.vision_tokens is not None or self.language_tokens is not None or self.action_tokens:
                raise ValueError("conditioning context must not carry token fields")
        else:
            raise ValueError(f"unknown context kind: {self.kind!r}")
        object.__setattr__(self, "action_tokens", tuple(self.action_tokens))
        object.__setattr__(self, "checksum", self._compute_checksum())

    def _compute_checksum(self) -> int:
        return _payload_checksum(self.vision_tokens, self.language_tokens,
                                 self.action_tokens, self.conditioning,
                                 self.source_observation_id, self.produced_frame)

    def verify_checksum(self) -> bool:
        return self.checksum == self._compute_checksum()

    def with_action_tokens(self, tokens) -> "PublicContext":
        if self.kind != ContextKind.AUTOREGRESSIVE:
            raise KindMismatch("action tokens only exist on autoregressive contexts")
        return replace(self, action_tokens=tuple(tokens))

    def with_produced_frame(self, frame: int) -> "PublicContext":
        return replace(self, produced_frame=frame)


@dataclass(frozen=True)
class _Slot:
    frame: int
    version: int
    ctx: PublicContext


class ContextStore:
    """Ring of K versioned context slots with one writer and many readers.

    The writer builds a complete immutable context and swaps it into the
    ring under the version counter; readers address slots by frame index
    plus a non-positive offset. K defaults to 2 (double buffer) but is a
    parameter so deeper offsets are testable.
    """

    def __init__(self, capacity: int = 2):
        if capacity < 2:
            raise ValueError("store capacity must be at least 2")
        self.capacity = capacity
        self._slots: list[Optional[_Slot]] = [None] * capacity
        self._version = 0
        self._last_frame: Optional[int] = None
        self._publish_count = 0
        self._lock = threading.Lock()

    @property
    def published_version(self) -> int:
        return self._version

    @property
    def publish_count(self) -> int:
        return self._publish_count

    @property
    def last_frame(self) -> Optional[int]:
        return self._last_frame

    def publish(self, ctx: PublicContext, frame: int) -> int:
        """Publish `ctx` as the context of `frame`; returns the new version.

        Re-publishing the same frame (an intra-frame action-token update)
        supersedes the previous content of that slot.
        """
        with self._lock:
            if self._last_frame is not None and frame < self._last_frame:
                raise StaleWrite(f"publish for frame {frame} after frame {self._last_frame}")
            self._version += 1
            self._publish_count += 1
            stamped = ctx if ctx.produced_frame == frame else ctx.with_produced_frame(frame)
            self._slots[frame % self.capacity] = _Slot(frame=frame, version=self._version, ctx=stamped)
            self._last_frame = frame
            return self._version

    def fetch_entry(self, frame: int, offset: int = 0) -> tuple[int, PublicContext]:
        """Return (version, context) published for frame+offset."""
        if offset > 0 or -offset >= self.capacity:
            raise OffsetOutOfRange(f"offset {offset} outside (-{self.capacity}, 0]")
        target = frame + offset
        slot = self._slots[target % self.capacity]
        if slot is None or slot.frame != target:
            raise NotYetPublished(f"no context published for frame {target}")
        return slot.version, slot.ctx

    def fetch(self, frame: int, offset: int = 0) -> PublicContext:
        return self.fetch_entry(frame, offset)[1]

    def latest_entry(self) -> tuple[int, int, PublicContext]:
        """Return (frame, version, context) of the newest publication."""
        with self._lock:
            if self._last_frame is None:
                raise NotYetPublished("nothing published yet")
            slot = self._slots[self._last_frame % self.capacity]
        return slot.frame, slot.version, slot.ctx

    def update_action_tokens(self, frame: int, tokens) -> int:
        """Replace the latest context's action tokens, bumping the version."""
        with self._lock:
            if self._last_frame is None:
                raise NotYetPublished("nothing published yet")
            slot = self._slots[self._last_frame % self.capacity]
        if slot.ctx.kind != ContextKind.AUTOREGRESSIVE:
            raise KindMismatch("latest context is not autoregressive")
        updated = slot.ctx.with_action_tokens(tokens)
        return self.publish(updated, frame)
