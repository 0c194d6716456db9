"""Hashing, coalescing, salting and per-token message encryption."""

from __future__ import annotations

import hashlib
import json
import os
import zlib
from dataclasses import dataclass
from decimal import Decimal
from typing import Any, Callable, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

MASK64 = (1 << 64) - 1

HASH_ALGORITHMS = {"sha256": hashlib.sha256, "sha3_256": hashlib.sha3_256, "blake2s": hashlib.blake2s}


@dataclass(frozen=True)
class HashConfig:
    algorithm_id: str = "sha256"
    hash_bits: int = 40
    coalesce_constant: int = 42

    def __post_init__(self) -> None:
        if self.algorithm_id not in HASH_ALGORITHMS:
            raise ValueError(f"unsupported hash algorithm {self.algorithm_id!r}")
        if not 1 <= self.hash_bits <= 63:
            raise ValueError("hash_bits must lie in [1, 63]")
        if not 0 <= self.coalesce_constant < 1 << self.hash_bits:
            raise ValueError("coalesce_constant must fit in hash_bits")

    @property
    def mask(self) -> int:
        return (1 << self.hash_bits) - 1


DEFAULT_HASH = HashConfig()


@dataclass(frozen=True)
class SaltSpec:
    task_number: int
    y_constant: int

    def __post_init__(self) -> None:
        if not 0 <= self.task_number <= 999:
            raise ValueError("task_number must have three digits")
        if not 0 <= self.y_constant <= MASK64:
            raise ValueError("y_constant must be an unsigned 64-bit integer")

    @property
    def function_name(self) -> str:
        return f"salt_{self.task_number:03d}"


def string_hash(s: str, cfg: HashConfig = DEFAULT_HASH) -> int:
    digest = HASH_ALGORITHMS[cfg.algorithm_id](s.encode("utf-8")).digest()
    return int.from_bytes(digest, "big") & cfg.mask


def canonical_scalar(value: Any) -> Any:
    """JSON-ready form of one cell: the single rendering used for hashing and comparison."""
    if value is None or isinstance(value, (bool, int, str)):
        return value
    if isinstance(value, float):
        if value.is_integer() and abs(value) < 1 << 53:
            return int(value)
        return value
    if isinstance(value, Decimal):
        return int(value) if value == value.to_integral_value() else float(value)
    if isinstance(value, (bytes, bytearray, memoryview)):
        return bytes(value).hex()
    if hasattr(value, "isoformat"):
        return value.isoformat()
    raise TypeError(f"cannot serialize value of type {type(value).__name__}")


def canonical_json(values: Sequence[Any]) -> str:
    return json.dumps([canonical_scalar(v) for v in values], separators=(",", ":"), ensure_ascii=False)


def row_serialization(table_name: str, column_values: Sequence[Any], disambiguator: str = "") -> str:
    return canonical_json([table_name, *column_values]) + disambiguator


def row_hash(
    table_name: str,
    column_values: Sequence[Any],
    cfg: HashConfig = DEFAULT_HASH,
    disambiguator: str = "",
) -> int:
    """Hash of a row, prefixed by the name of its table so equal rows of two tables differ."""
    return string_hash(row_serialization(table_name, column_values, disambiguator), cfg)


def nn(x: int | None, cfg: HashConfig = DEFAULT_HASH) -> int:
    return cfg.coalesce_constant if x is None else x


def salt_apply(spec: SaltSpec, x: int | float | None, cfg: HashConfig = DEFAULT_HASH) -> int:
    """nn(x) XOR Y, computed on the unsigned 64-bit image of x."""
    value = nn(x, cfg)
    return (int(value) & MASK64) ^ spec.y_constant


# -- message envelopes -------------------------------------------------------------

CHECK_SIZE = 8
NONCE_SIZE = 12
_KDF_INFO = b"sqlab message key"


@dataclass(frozen=True)
class CipherEnvelope:
    token_check: bytes
    nonce: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        return self.token_check + self.nonce + self.ciphertext

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CipherEnvelope":
        blob = bytes(blob)
        if len(blob) < CHECK_SIZE + NONCE_SIZE + 16:
            raise ValueError("envelope too short")
        return cls(
            blob[:CHECK_SIZE],
            blob[CHECK_SIZE : CHECK_SIZE + NONCE_SIZE],
            blob[CHECK_SIZE + NONCE_SIZE :],
        )


def _token_bytes(token: int) -> bytes:
    return (int(token) & MASK64).to_bytes(8, "big")


def _token_check(token: int, nonce: bytes) -> bytes:
    return hashlib.blake2b(_token_bytes(token), key=nonce, digest_size=CHECK_SIZE).digest()


def _derive_key(token: int, nonce: bytes) -> bytes:
    hkdf = HKDF(algorithm=hashes.SHA256(), length=32, salt=nonce, info=_KDF_INFO)
    return hkdf.derive(_token_bytes(token))


def encrypt_message(
    token: int,
    plaintext: str,
    randbytes: Callable[[int], bytes] = os.urandom,
) -> CipherEnvelope:
    """Encrypt ``plaintext`` so that only ``token`` opens it.

    ``randbytes`` supplies the nonce; the builder passes a seeded generator so
    that rebuilds are byte-identical.
    """
    if not plaintext:
        raise ValueError("plaintext must be non-empty")
    nonce = randbytes(NONCE_SIZE)
    check = _token_check(token, nonce)
    sealed = AESGCM(_derive_key(token, nonce)).encrypt(nonce, zlib.compress(plaintext.encode("utf-8"), 9), check)
    return CipherEnvelope(check, nonce, sealed)


def decrypt_probe(token: int, envelope: CipherEnvelope | bytes) -> str | None:
    """Plaintext when ``token`` opens the envelope, None otherwise."""
    try:
        if not isinstance(envelope, CipherEnvelope):
            envelope = CipherEnvelope.from_bytes(envelope)
        if _token_check(token, envelope.nonce) != envelope.token_check:
            return None
        packed = AESGCM(_derive_key(token, envelope.nonce)).decrypt(
            envelope.nonce, envelope.ciphertext, envelope.token_check
        )
        return zlib.decompress(packed).decode("utf-8")
    except (InvalidTag, ValueError, zlib.error, UnicodeDecodeError, TypeError, OverflowError):
        return None
