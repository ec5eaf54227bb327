"""Exception taxonomy shared across the gateway and the evaluation harness."""

from __future__ import annotations


class SentinelError(Exception):
    """Base class for all domain errors raised by this package."""


# --- manifest / registry -----------------------------------------------------

class InvalidDescriptor(SentinelError):
    """A tool descriptor violates one of its structural invariants."""


class KeyTooShort(SentinelError):
    """RSA key below the 2048-bit minimum."""


class SigningFailure(SentinelError):
    """The crypto provider failed while producing a signature."""


class UnverifiedManifest(SentinelError):
    """Attempt to register a manifest that does not verify."""


# --- adversary ---------------------------------------------------------------

class MissingFixture(SentinelError):
    """A requested tool fixture file does not exist."""


class DuplicateToolId(SentinelError):
    """Two tools in one testbed share a tool_id."""


class AlreadyAdversarial(SentinelError):
    """Poisoning applied to a descriptor that is already adversarial."""


class TriggerNotInContext(SentinelError):
    """A shadowing rule's trigger names a tool or category absent from context."""


class NoOpMutation(SentinelError):
    """A rug-pull mutation left the canonical descriptor bytes unchanged."""


class NoAdversarialTool(SentinelError):
    """Prompt optimization requires at least one adversarial tool in context."""


# --- defense -----------------------------------------------------------------

class InvalidRule(SentinelError):
    """A static filter rule failed to compile at load time."""


class VetterUnavailable(SentinelError):
    """The external vetting endpoint timed out, refused, or answered garbage."""


# --- policy ------------------------------------------------------------------

class EmptyContext(SentinelError):
    """Tool selection asked over an empty context."""


class DegenerateVariance(SentinelError):
    """Pooled utility variance is zero; deviation coefficient undefined."""


class SupportMismatch(SentinelError):
    """Two selection distributions are defined over different tool sets."""


class EmptyDescriptor(SentinelError):
    """Descriptor drift asked for an empty text."""


# --- statistics --------------------------------------------------------------

class InvalidCounts(SentinelError):
    """Interval requested for counts outside 0 <= k <= n, n >= 1."""


class ZeroExpectedCell(SentinelError):
    """A contingency table has an expected cell count of zero."""


class InsufficientGroups(SentinelError):
    """One-way ANOVA needs >= 2 groups with >= 2 samples each."""


class DegenerateInput(SentinelError):
    """Correlation input too short or with zero variance."""


class InsufficientData(SentinelError):
    """Not enough trials in a group to compute the requested statistic."""


# --- harness / cli -----------------------------------------------------------

class ConfigInvalid(SentinelError):
    """An experiment or CLI configuration failed validation."""


class EmptyGroup(SentinelError):
    """Rate computation over an empty trial group."""


class WeightsNotNormalized(SentinelError):
    """Composite risk weights do not sum to one."""


class SinkWriteFailure(SentinelError):
    """The trial record sink could not be written."""
