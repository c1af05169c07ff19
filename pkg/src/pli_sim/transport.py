"""Binary wire protocol and simulated network channel.

Wire contract (all integers little-endian, all floats IEEE-754 binary64 LE):

    Envelope
        magic            4 bytes, literal "PLI1"
        msg_type         1 byte   (Register=1, ModelBroadcast=2,
                                   UpdateSubmit=3, Ack=4, Error=5)
        sender_id        16 bytes (utf-8, zero-padded)
        round_id         u32
        nonce            12 bytes
        ciphertext_len   u32      (ciphertext including 16-byte auth tag)
        ciphertext+tag   ciphertext_len bytes

    ParamPayload (plaintext, sealed inside the envelope)
        param_count      u32
        params           param_count x f64
        sample_count     u32      (0 for broadcasts)
        base_version     u32

Encryption is ChaCha20-Poly1305 with a 256-bit pre-shared key per simulation
run. The msg_type, sender_id and round_id header fields are bound into the
AEAD as associated data, so flipping any header bit fails authentication.
Nonces are counter-derived per sender: 1 direction byte, u16 sender index,
u64 counter, 1 zero pad byte; monotone counters make reuse impossible and a
Sealer refuses an explicitly forced repeat before any crypto runs.

The simulated channel delivers envelopes on a tick-based logical clock with
seeded loss and latency; delivered messages keep FIFO order per link.
"""

from __future__ import annotations

import heapq
import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

MAGIC = b"PLI1"
SENDER_ID_LEN = 16
NONCE_LEN = 12
KEY_LEN = 32
TAG_LEN = 16
HEADER_LEN = 4 + 1 + SENDER_ID_LEN + 4 + NONCE_LEN + 4  # 41 bytes

DIR_HUB_TO_CLIENT = 0
DIR_CLIENT_TO_HUB = 1

_U32_MAX = 2**32 - 1


class TransportError(ValueError):
    """Malformed wire data or protocol misuse."""


class DecodeError(TransportError):
    """Payload or envelope bytes do not parse; message names the byte offset."""


class TamperError(TransportError):
    """Authentication failed; the message must be discarded."""


class NonceReuseError(TransportError):
    """An explicit nonce was already used under this key."""


class MsgType(IntEnum):
    REGISTER = 1
    MODEL_BROADCAST = 2
    UPDATE_SUBMIT = 3
    ACK = 4
    ERROR = 5


# ---------------------------------------------------------------------------
# Parameter payload codec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamPayload:
    params: np.ndarray
    sample_count: int = 0
    base_version: int = 0

    def __post_init__(self) -> None:
        params = np.asarray(self.params, dtype=np.float64)
        object.__setattr__(self, "params", params)
        if params.ndim != 1:
            raise TransportError("params must be a flat vector")
        if not np.isfinite(params).all():
            raise TransportError("params must be finite")
        for name in ("sample_count", "base_version"):
            value = getattr(self, name)
            if not 0 <= value <= _U32_MAX:
                raise TransportError(f"{name} must fit in u32, got {value}")
        if params.size > _U32_MAX:
            raise TransportError("param_count exceeds u32")


def encode_payload(p: ParamPayload) -> bytes:
    """Serialize a payload; bit-exact and injective on valid payloads."""
    return (
        struct.pack("<I", p.params.size)
        + p.params.astype("<f8").tobytes()
        + struct.pack("<II", p.sample_count, p.base_version)
    )


def decode_payload(data: bytes) -> ParamPayload:
    """Parse payload bytes, naming the byte offset on any failure."""
    if len(data) < 4:
        raise DecodeError(f"truncated payload: need 4 bytes for count at offset 0, have {len(data)}")
    (count,) = struct.unpack_from("<I", data, 0)
    expected = 4 + 8 * count + 8
    if len(data) != expected:
        raise DecodeError(
            f"payload length {len(data)} does not match declared count {count} "
            f"(expected {expected}) at offset 4"
        )
    params = np.frombuffer(data, dtype="<f8", count=count, offset=4).copy()
    bad = np.flatnonzero(~np.isfinite(params))
    if bad.size:
        raise DecodeError(f"non-finite param at offset {4 + 8 * int(bad[0])}")
    sample_count, base_version = struct.unpack_from("<II", data, 4 + 8 * count)
    return ParamPayload(params, sample_count, base_version)


# ---------------------------------------------------------------------------
# Envelope and AEAD
# ---------------------------------------------------------------------------


def encode_sender_id(sender: str | bytes) -> bytes:
    """Zero-pad a sender identifier to the fixed 16-byte field."""
    raw = sender.encode("utf-8") if isinstance(sender, str) else bytes(sender)
    if len(raw) > SENDER_ID_LEN:
        raise TransportError(f"sender id longer than {SENDER_ID_LEN} bytes")
    return raw.ljust(SENDER_ID_LEN, b"\x00")


def decode_sender_id(field16: bytes) -> str:
    return field16.rstrip(b"\x00").decode("utf-8")


def make_nonce(direction: int, sender_index: int, counter: int) -> bytes:
    """12-byte nonce: direction byte | u16 sender index | u64 counter | pad."""
    if direction not in (DIR_HUB_TO_CLIENT, DIR_CLIENT_TO_HUB):
        raise TransportError("direction must be 0 or 1")
    return struct.pack("<BHQ", direction, sender_index, counter) + b"\x00"


@dataclass(frozen=True)
class Envelope:
    msg_type: MsgType
    sender_id: bytes
    round_id: int
    nonce: bytes
    ciphertext: bytes  # includes the auth tag

    def __post_init__(self) -> None:
        if len(self.sender_id) != SENDER_ID_LEN:
            raise TransportError("sender_id must be exactly 16 bytes")
        if len(self.nonce) != NONCE_LEN:
            raise TransportError("nonce must be exactly 12 bytes")
        if not 0 <= self.round_id <= _U32_MAX:
            raise TransportError("round_id must fit in u32")

    def to_bytes(self) -> bytes:
        return (
            MAGIC
            + struct.pack("<B", int(self.msg_type))
            + self.sender_id
            + struct.pack("<I", self.round_id)
            + self.nonce
            + struct.pack("<I", len(self.ciphertext))
            + self.ciphertext
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Envelope":
        if len(data) < HEADER_LEN:
            raise DecodeError(f"truncated envelope: {len(data)} bytes, header needs {HEADER_LEN}")
        if data[:4] != MAGIC:
            raise DecodeError(f"bad magic {data[:4]!r} at offset 0")
        msg_type_raw = data[4]
        try:
            msg_type = MsgType(msg_type_raw)
        except ValueError:
            raise DecodeError(f"unknown msg_type {msg_type_raw} at offset 4") from None
        sender_id = data[5:21]
        (round_id,) = struct.unpack_from("<I", data, 21)
        nonce = data[25:37]
        (clen,) = struct.unpack_from("<I", data, 37)
        ciphertext = data[HEADER_LEN:]
        if len(ciphertext) != clen:
            raise DecodeError(
                f"ciphertext_len {clen} does not match actual {len(ciphertext)} at offset 37"
            )
        return cls(msg_type, sender_id, round_id, nonce, ciphertext)


def _assoc_data(msg_type: MsgType, sender_id: bytes, round_id: int) -> bytes:
    return struct.pack("<B", int(msg_type)) + sender_id + struct.pack("<I", round_id)


def seal(
    key: bytes,
    msg_type: MsgType,
    sender_id: str | bytes,
    round_id: int,
    nonce: bytes,
    payload: bytes,
) -> Envelope:
    """Encrypt payload bytes into an envelope, authenticating the header."""
    if len(key) != KEY_LEN:
        raise TransportError(f"key must be {KEY_LEN} bytes")
    if len(nonce) != NONCE_LEN:
        raise TransportError(f"nonce must be {NONCE_LEN} bytes")
    sid = encode_sender_id(sender_id) if not (
        isinstance(sender_id, (bytes, bytearray)) and len(sender_id) == SENDER_ID_LEN
    ) else bytes(sender_id)
    aead = ChaCha20Poly1305(key)
    ciphertext = aead.encrypt(nonce, payload, _assoc_data(msg_type, sid, round_id))
    return Envelope(msg_type, sid, round_id, nonce, ciphertext)


def open_envelope(env: Envelope, key: bytes) -> bytes:
    """Authenticate and decrypt; raises TamperError on any modification."""
    if len(key) != KEY_LEN:
        raise TransportError(f"key must be {KEY_LEN} bytes")
    aead = ChaCha20Poly1305(key)
    try:
        return aead.decrypt(
            env.nonce, env.ciphertext, _assoc_data(env.msg_type, env.sender_id, env.round_id)
        )
    except InvalidTag:
        raise TamperError("envelope failed authentication; discarded") from None


class Sealer:
    """Per-sender sealing endpoint with counter-derived, never-reused nonces."""

    def __init__(self, key: bytes, sender_id: str | bytes, sender_index: int, direction: int):
        if len(key) != KEY_LEN:
            raise TransportError(f"key must be {KEY_LEN} bytes")
        if not 0 <= sender_index < 2**16:
            raise TransportError("sender_index must fit in u16")
        self._key = key
        self._sender_id = encode_sender_id(sender_id)
        self._sender_index = sender_index
        self._direction = direction
        self._counter = 0
        self._used: set[bytes] = set()

    @property
    def sender_id(self) -> bytes:
        return self._sender_id

    def seal(
        self, msg_type: MsgType, round_id: int, payload: bytes, *, nonce: bytes | None = None
    ) -> Envelope:
        if nonce is None:
            nonce = make_nonce(self._direction, self._sender_index, self._counter)
            self._counter += 1
        if nonce in self._used:
            raise NonceReuseError(f"nonce {nonce.hex()} already used under this key")
        self._used.add(nonce)
        return seal(self._key, msg_type, self._sender_id, round_id, nonce, payload)


# ---------------------------------------------------------------------------
# Simulated channel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatencySpec:
    kind: str  # "fixed" | "uniform"
    lo: int
    hi: int

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "uniform"):
            raise TransportError(f"unknown latency kind {self.kind!r}")
        if self.lo < 0 or self.hi < self.lo:
            raise TransportError("latency bounds must satisfy 0 <= lo <= hi")

    @classmethod
    def fixed(cls, ticks: int) -> "LatencySpec":
        return cls("fixed", ticks, ticks)

    @classmethod
    def uniform(cls, lo: int, hi: int) -> "LatencySpec":
        return cls("uniform", lo, hi)

    @classmethod
    def parse(cls, text: str) -> "LatencySpec":
        text = text.strip()
        if ":" in text:
            lo, hi = text.split(":", 1)
            return cls.uniform(int(lo), int(hi))
        return cls.fixed(int(text))


@dataclass(frozen=True)
class ChannelConfig:
    loss_probability: float = 0.0
    latency: LatencySpec = LatencySpec.fixed(1)
    seed: int | None = None  # None: the harness derives one from its master seed

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_probability <= 1.0:
            raise TransportError("loss_probability must lie in [0, 1]")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise TransportError("seed must fit in 64 unsigned bits")


class LogicalClock:
    """Tick counter; the only notion of time in the simulation."""

    def __init__(self) -> None:
        self.now = 0

    def advance(self, ticks: int = 1) -> int:
        if ticks < 0:
            raise ValueError("clock cannot run backwards")
        self.now += ticks
        return self.now


@dataclass(frozen=True)
class Delivery:
    envelope: Envelope
    src: str
    dst: str
    send_tick: int
    deliver_tick: int
    seq: int


class SimulatedChannel:
    """Seeded lossy, latent message transport over a logical clock.

    Per send the generator draws once for the drop decision and, for delivered
    messages with a uniform latency spec, once more for the latency; this draw
    order is part of the determinism contract. Delivery ticks are clamped to
    be non-decreasing per (src, dst) link, preserving FIFO order.
    """

    def __init__(self, cfg: ChannelConfig, clock: LogicalClock):
        if cfg.seed is None:
            raise TransportError("channel seed must be resolved before use")
        self.cfg = cfg
        self.clock = clock
        self._rng = np.random.default_rng(cfg.seed)
        self._pending: list[tuple[int, int, Delivery]] = []
        self._seq = 0
        self._last_tick: dict[tuple[str, str], int] = {}
        self.bytes_sent = 0
        self.audit: list[dict] = []

    def send(self, env: Envelope, src: str, dst: str) -> Delivery | None:
        """Queue an envelope; returns None when the message is dropped."""
        wire = env.to_bytes()
        self.bytes_sent += len(wire)
        seq = self._seq
        self._seq += 1
        dropped = self._rng.random() < self.cfg.loss_probability
        if dropped:
            self.audit.append(
                {
                    "event": "drop",
                    "src": src,
                    "dst": dst,
                    "msg_type": int(env.msg_type),
                    "round_id": env.round_id,
                    "bytes": len(wire),
                    "tick": self.clock.now,
                }
            )
            return None
        if self.cfg.latency.kind == "fixed":
            latency = self.cfg.latency.lo
        else:
            latency = int(self._rng.integers(self.cfg.latency.lo, self.cfg.latency.hi + 1))
        link = (src, dst)
        deliver = max(self.clock.now + latency, self._last_tick.get(link, 0))
        self._last_tick[link] = deliver
        delivery = Delivery(env, src, dst, self.clock.now, deliver, seq)
        heapq.heappush(self._pending, (deliver, seq, delivery))
        self.audit.append(
            {
                "event": "send",
                "src": src,
                "dst": dst,
                "msg_type": int(env.msg_type),
                "round_id": env.round_id,
                "bytes": len(wire),
                "tick": self.clock.now,
                "deliver_tick": deliver,
            }
        )
        return delivery

    def poll(self) -> list[Delivery]:
        """Pop every delivery due at or before the current tick, in order."""
        out = []
        while self._pending and self._pending[0][0] <= self.clock.now:
            out.append(heapq.heappop(self._pending)[2])
        return out

    def drain(self) -> list[Delivery]:
        """Advance the clock far enough to flush all pending deliveries."""
        if self._pending:
            horizon = max(tick for tick, _, _ in self._pending)
            if horizon > self.clock.now:
                self.clock.advance(horizon - self.clock.now)
        return self.poll()

    def write_audit(self, path) -> None:
        with open(path, "w") as fh:
            for event in self.audit:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
