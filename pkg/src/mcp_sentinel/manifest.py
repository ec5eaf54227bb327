"""Tool descriptors, canonical serialization, RSA-PSS manifest signing, and a
versioned registry that pins descriptor digests to expose post-approval edits.
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from .errors import InvalidDescriptor, KeyTooShort, SigningFailure, UnverifiedManifest

MIN_KEY_BITS = 2048

# Characters allowed in tool identifiers (URI-safe unreserved set).
_TOOL_ID_CHARS = frozenset(
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~"
)


class ToolCategory(str, Enum):
    INFORMATION_RETRIEVAL = "InformationRetrieval"
    PRODUCTIVITY = "Productivity"
    SYSTEM_UTILITY = "SystemUtility"


class ActionTag(str, Enum):
    FILE_READ_SENSITIVE = "FileReadSensitive"
    NETWORK_SEND = "NetworkSend"
    SHELL_EXEC = "ShellExec"
    DATA_WRITE = "DataWrite"
    BENIGN = "Benign"


#: Action tags whose execution counts as unsafe.
UNSAFE_TAGS = frozenset(
    {
        ActionTag.FILE_READ_SENSITIVE,
        ActionTag.NETWORK_SEND,
        ActionTag.SHELL_EXEC,
        ActionTag.DATA_WRITE,
    }
)


class Variant(str, Enum):
    BENIGN = "Benign"
    ADVERSARIAL = "Adversarial"


@dataclass(frozen=True)
class ToolDescriptor:
    """One tool's identity, natural-language description, schema, and tags.

    Immutable; every attack and every defense in this package operates on
    values of this type. The description is treated as an opaque payload and
    is never normalized (attacks live in exact phrasing).
    """

    tool_id: str
    name: str
    category: ToolCategory
    description: str
    input_schema: tuple[tuple[str, str], ...] = ()
    action_tags: frozenset[ActionTag] = frozenset({ActionTag.BENIGN})
    sensitivity_weight: float = 0.5
    variant: Variant = Variant.BENIGN

    def __post_init__(self) -> None:
        if not self.tool_id:
            raise InvalidDescriptor("tool_id must be non-empty")
        bad = set(self.tool_id) - _TOOL_ID_CHARS
        if bad:
            raise InvalidDescriptor(f"tool_id contains non URI-safe characters: {sorted(bad)}")
        if not (0.0 < self.sensitivity_weight <= 1.0):
            raise InvalidDescriptor(
                f"sensitivity_weight must be in (0, 1], got {self.sensitivity_weight}"
            )
        if not self.action_tags:
            raise InvalidDescriptor("action_tags must not be empty")
        for pair in self.input_schema:
            if len(pair) != 2 or not pair[0]:
                raise InvalidDescriptor(f"malformed input_schema entry: {pair!r}")

    @property
    def is_adversarial(self) -> bool:
        return self.variant is Variant.ADVERSARIAL

    @property
    def unsafe_tags(self) -> frozenset[ActionTag]:
        return self.action_tags & UNSAFE_TAGS


def canonicalize(descriptor: ToolDescriptor) -> bytes:
    """Deterministic byte encoding of a descriptor.

    Fields are emitted in fixed order, sets are sorted, floats use the
    shortest round-trip decimal, and the output is compact UTF-8 JSON, so
    structurally equal descriptors always map to identical bytes.
    """
    payload = {
        "tool_id": descriptor.tool_id,
        "name": descriptor.name,
        "category": descriptor.category.value,
        "description": descriptor.description,
        "input_schema": [[n, t] for n, t in descriptor.input_schema],
        "action_tags": sorted(t.value for t in descriptor.action_tags),
        "sensitivity_weight": descriptor.sensitivity_weight,
        "variant": descriptor.variant.value,
    }
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def descriptor_digest(descriptor: ToolDescriptor) -> str:
    """Hex SHA-256 of the canonical descriptor bytes."""
    return hashlib.sha256(canonicalize(descriptor)).hexdigest()


def descriptor_to_dict(descriptor: ToolDescriptor) -> dict:
    return {
        "tool_id": descriptor.tool_id,
        "name": descriptor.name,
        "category": descriptor.category.value,
        "description": descriptor.description,
        "input_schema": [[n, t] for n, t in descriptor.input_schema],
        "action_tags": sorted(t.value for t in descriptor.action_tags),
        "sensitivity_weight": descriptor.sensitivity_weight,
        "variant": descriptor.variant.value,
    }


def descriptor_from_dict(data: dict) -> ToolDescriptor:
    try:
        return ToolDescriptor(
            tool_id=data["tool_id"],
            name=data["name"],
            category=ToolCategory(data["category"]),
            description=data["description"],
            input_schema=tuple((str(n), str(t)) for n, t in data.get("input_schema", ())),
            action_tags=frozenset(ActionTag(t) for t in data.get("action_tags", ["Benign"])),
            sensitivity_weight=float(data.get("sensitivity_weight", 0.5)),
            variant=Variant(data.get("variant", "Benign")),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise InvalidDescriptor(f"malformed descriptor object: {exc}") from exc


# --- keys ---------------------------------------------------------------------

def generate_keypair(bits: int = MIN_KEY_BITS) -> tuple[rsa.RSAPrivateKey, rsa.RSAPublicKey]:
    if bits < MIN_KEY_BITS:
        raise KeyTooShort(f"RSA key must be >= {MIN_KEY_BITS} bits, got {bits}")
    private = rsa.generate_private_key(public_exponent=65537, key_size=bits)
    return private, private.public_key()


def key_fingerprint(public_key: rsa.RSAPublicKey) -> str:
    """Hex SHA-256 of the public key's DER SubjectPublicKeyInfo encoding."""
    der = public_key.public_bytes(
        serialization.Encoding.DER,
        serialization.PublicFormat.SubjectPublicKeyInfo,
    )
    return hashlib.sha256(der).hexdigest()


def save_private_key_pem(key: rsa.RSAPrivateKey, path: Path) -> None:
    pem = key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )
    path.write_bytes(pem)
    path.chmod(0o600)


def save_public_key_pem(key: rsa.RSAPublicKey, path: Path) -> None:
    pem = key.public_bytes(
        serialization.Encoding.PEM,
        serialization.PublicFormat.SubjectPublicKeyInfo,
    )
    path.write_bytes(pem)


def load_private_key_pem(path: Path) -> rsa.RSAPrivateKey:
    key = serialization.load_pem_private_key(path.read_bytes(), password=None)
    if not isinstance(key, rsa.RSAPrivateKey):
        raise SigningFailure(f"{path} does not hold an RSA private key")
    return key


def load_public_key_pem(path: Path) -> rsa.RSAPublicKey:
    key = serialization.load_pem_public_key(path.read_bytes())
    if not isinstance(key, rsa.RSAPublicKey):
        raise SigningFailure(f"{path} does not hold an RSA public key")
    return key


_PSS_PADDING = padding.PSS(
    mgf=padding.MGF1(hashes.SHA256()),
    salt_length=padding.PSS.DIGEST_LENGTH,
)


# --- signed manifests ----------------------------------------------------------

@dataclass(frozen=True)
class SignedManifest:
    """A descriptor plus the RSA-PSS signature anchoring its canonical bytes."""

    descriptor: ToolDescriptor
    canonical_bytes: bytes
    digest: str
    signature: bytes
    key_fingerprint: str
    signed_at: datetime


class VerifyDecision(str, Enum):
    ACCEPT = "Accept"
    REJECT = "Reject"


class VerifyReason(str, Enum):
    DIGEST_MISMATCH = "DigestMismatch"
    BAD_SIGNATURE = "BadSignature"
    KEY_MISMATCH = "KeyMismatch"


@dataclass(frozen=True)
class VerificationResult:
    decision: VerifyDecision
    reason: VerifyReason | None = None

    @property
    def accepted(self) -> bool:
        return self.decision is VerifyDecision.ACCEPT


def _utc_now_seconds() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def sign_manifest(
    descriptor: ToolDescriptor,
    private_key: rsa.RSAPrivateKey,
    signed_at: datetime | None = None,
) -> SignedManifest:
    """Sign a descriptor's canonical bytes with RSA-PSS over SHA-256."""
    if private_key.key_size < MIN_KEY_BITS:
        raise KeyTooShort(
            f"signing key is {private_key.key_size} bits; minimum is {MIN_KEY_BITS}"
        )
    canonical = canonicalize(descriptor)
    digest = hashlib.sha256(canonical).hexdigest()
    try:
        signature = private_key.sign(canonical, _PSS_PADDING, hashes.SHA256())
    except Exception as exc:  # provider errors surface as a domain failure
        raise SigningFailure(str(exc)) from exc
    return SignedManifest(
        descriptor=descriptor,
        canonical_bytes=canonical,
        digest=digest,
        signature=signature,
        key_fingerprint=key_fingerprint(private_key.public_key()),
        signed_at=signed_at or _utc_now_seconds(),
    )


def verify_manifest(manifest: SignedManifest, public_key: rsa.RSAPublicKey) -> VerificationResult:
    """Accept iff the stored digest matches the canonical bytes and the
    signature verifies over those bytes under the given public key.

    Never raises: every failure mode maps to a Reject with a reason code.
    """
    actual_digest = hashlib.sha256(manifest.canonical_bytes).hexdigest()
    if actual_digest != manifest.digest:
        return VerificationResult(VerifyDecision.REJECT, VerifyReason.DIGEST_MISMATCH)
    if key_fingerprint(public_key) != manifest.key_fingerprint:
        return VerificationResult(VerifyDecision.REJECT, VerifyReason.KEY_MISMATCH)
    try:
        public_key.verify(
            manifest.signature, manifest.canonical_bytes, _PSS_PADDING, hashes.SHA256()
        )
    except InvalidSignature:
        return VerificationResult(VerifyDecision.REJECT, VerifyReason.BAD_SIGNATURE)
    except Exception:
        return VerificationResult(VerifyDecision.REJECT, VerifyReason.BAD_SIGNATURE)
    return VerificationResult(VerifyDecision.ACCEPT)


def _format_rfc3339(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_rfc3339(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


def manifest_to_dict(manifest: SignedManifest) -> dict:
    """Manifest file form: canonical bytes are re-derived on load, never stored."""
    return {
        "descriptor": descriptor_to_dict(manifest.descriptor),
        "digest": manifest.digest,
        "signature": base64.b64encode(manifest.signature).decode("ascii"),
        "key_fingerprint": manifest.key_fingerprint,
        "signed_at": _format_rfc3339(manifest.signed_at),
    }


def manifest_from_dict(data: dict) -> SignedManifest:
    try:
        descriptor = descriptor_from_dict(data["descriptor"])
        return SignedManifest(
            descriptor=descriptor,
            canonical_bytes=canonicalize(descriptor),
            digest=str(data["digest"]),
            signature=base64.b64decode(data["signature"]),
            key_fingerprint=str(data["key_fingerprint"]),
            signed_at=_parse_rfc3339(str(data["signed_at"])),
        )
    except InvalidDescriptor:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise InvalidDescriptor(f"malformed manifest object: {exc}") from exc


def save_manifest(manifest: SignedManifest, path: Path) -> None:
    path.write_text(json.dumps(manifest_to_dict(manifest), indent=2) + "\n", encoding="utf-8")


def load_manifest(path: Path) -> SignedManifest:
    return manifest_from_dict(json.loads(path.read_text(encoding="utf-8")))


# --- registry -------------------------------------------------------------------

class RugPullStatus(str, Enum):
    CONSISTENT = "Consistent"
    RUG_PULL_DETECTED = "RugPullDetected"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class RegistryEntry:
    tool_id: str
    version: int
    digest: str
    key_fingerprint: str
    approved_at: datetime

    def to_dict(self) -> dict:
        return {
            "tool_id": self.tool_id,
            "version": self.version,
            "digest": self.digest,
            "key_fingerprint": self.key_fingerprint,
            "approved_at": _format_rfc3339(self.approved_at),
        }

    @classmethod
    def from_dict(cls, data: dict) -> RegistryEntry:
        return cls(
            tool_id=data["tool_id"],
            version=int(data["version"]),
            digest=data["digest"],
            key_fingerprint=data["key_fingerprint"],
            approved_at=_parse_rfc3339(data["approved_at"]),
        )


class DescriptorRegistry:
    """Append-only versioned digest pins keyed by tool_id.

    Pins are never rewritten in place: re-approval appends a new version so
    rug-pull forensics can replay the full history. Writers are serialized;
    readers see immutable entry tuples and need no lock.
    """

    def __init__(self, log_path: Path | None = None):
        self._entries: dict[str, tuple[RegistryEntry, ...]] = {}
        self._lock = threading.Lock()
        self.log_path = log_path

    def register(self, manifest: SignedManifest, public_key: rsa.RSAPublicKey) -> int:
        """Pin a verified manifest's digest; returns the new version number."""
        result = verify_manifest(manifest, public_key)
        if not result.accepted:
            raise UnverifiedManifest(
                f"manifest for {manifest.descriptor.tool_id!r} rejected: {result.reason}"
            )
        with self._lock:
            history = self._entries.get(manifest.descriptor.tool_id, ())
            entry = RegistryEntry(
                tool_id=manifest.descriptor.tool_id,
                version=len(history) + 1,
                digest=manifest.digest,
                key_fingerprint=manifest.key_fingerprint,
                approved_at=_utc_now_seconds(),
            )
            self._entries[manifest.descriptor.tool_id] = history + (entry,)
            if self.log_path is not None:
                with self.log_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry.to_dict()) + "\n")
        return entry.version

    def latest(self, tool_id: str) -> RegistryEntry | None:
        history = self._entries.get(tool_id, ())
        return history[-1] if history else None

    def history(self, tool_id: str) -> tuple[RegistryEntry, ...]:
        return self._entries.get(tool_id, ())

    def tool_ids(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def check_rug_pull(self, presented: ToolDescriptor) -> RugPullStatus:
        """Compare a presented descriptor against its latest pinned digest."""
        entry = self.latest(presented.tool_id)
        if entry is None:
            return RugPullStatus.UNKNOWN
        if descriptor_digest(presented) == entry.digest:
            return RugPullStatus.CONSISTENT
        return RugPullStatus.RUG_PULL_DETECTED

    def snapshot(self) -> DescriptorRegistry:
        """Detached copy sharing no mutable state with the original."""
        clone = DescriptorRegistry()
        clone._entries = dict(self._entries)
        return clone

    @classmethod
    def load(cls, path: Path) -> DescriptorRegistry:
        """Replay a JSONL event log into an in-memory registry."""
        registry = cls(log_path=path)
        if path.exists():
            with path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    entry = RegistryEntry.from_dict(json.loads(line))
                    history = registry._entries.get(entry.tool_id, ())
                    registry._entries[entry.tool_id] = history + (entry,)
        return registry


def register(registry: DescriptorRegistry, manifest: SignedManifest,
             public_key: rsa.RSAPublicKey) -> int:
    """Function form of DescriptorRegistry.register."""
    return registry.register(manifest, public_key)


def check_rug_pull(registry: DescriptorRegistry, presented: ToolDescriptor) -> RugPullStatus:
    """Function form of DescriptorRegistry.check_rug_pull."""
    return registry.check_rug_pull(presented)
