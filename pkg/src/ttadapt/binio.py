"""Little-endian binary readers/writers shared by the TTAP and TTAE formats."""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError


class Reader:
    """Sequential reader tracking the byte offset for error reporting."""

    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.pos = 0

    def _take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(self.path, self.pos, f"truncated while reading {what} ({n} bytes needed)")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def magic(self, expected: bytes) -> None:
        got = self._take(4, "magic")
        if got != expected:
            raise FormatError(self.path, 0, f"bad magic {got!r}, expected {expected!r}")

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self._take(4, what))[0]

    def string(self, what: str) -> str:
        n = self.u32(f"{what} length")
        raw = self._take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(self.path, self.pos - n, f"invalid UTF-8 in {what}") from exc

    def f32_array(self, count: int, what: str) -> np.ndarray:
        raw = self._take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)

    def i32_array(self, count: int, what: str) -> np.ndarray:
        raw = self._take(4 * count, what)
        return np.frombuffer(raw, dtype="<i4").copy()

    def done(self) -> None:
        if self.pos != len(self.blob):
            raise FormatError(self.path, self.pos, f"{len(self.blob) - self.pos} trailing bytes")


class Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def raw(self, b: bytes) -> None:
        self.parts.append(b)

    def u32(self, v: int) -> None:
        self.parts.append(struct.pack("<I", v))

    def string(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.parts.append(raw)

    def f32_array(self, arr: np.ndarray) -> None:
        self.parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    def i32_array(self, arr: np.ndarray) -> None:
        self.parts.append(np.ascontiguousarray(arr, dtype="<i4").tobytes())

    def blob(self) -> bytes:
        return b"".join(self.parts)
