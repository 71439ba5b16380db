"""Exception hierarchy for neuronlock.

Every failure mode raised by the library derives from NeuronLockError so
callers (and the CLI) can catch one base class. Names follow the error
vocabulary used throughout the module contracts.
"""

from __future__ import annotations


class NeuronLockError(Exception):
    """Base class for all neuronlock errors."""


# --- container -------------------------------------------------------------

class ContainerError(NeuronLockError):
    """Malformed or inconsistent weight container."""


class BadMagic(ContainerError):
    pass


class UnsupportedVersion(ContainerError):
    pass


class UnknownDtype(ContainerError):
    pass


class TruncatedTensor(ContainerError):
    """Byte length of a tensor region disagrees with the declared shapes."""


class OutOfRange(ContainerError):
    """Neuron reference outside the container's neuron index space."""


class ShapeMismatch(ContainerError):
    pass


class EncryptedModelError(ContainerError):
    """Operation requires plaintext weights but the container is encrypted."""


# --- selector ----------------------------------------------------------------

class SelectorError(NeuronLockError):
    pass


class MismatchedNeuronCount(SelectorError):
    pass


class DuplicateTask(SelectorError):
    pass


class UnknownTask(SelectorError):
    pass


class AllZeroScores(SelectorError):
    """Selection is undefined when every score is zero after shifting."""


class ThresholdUnreachable(SelectorError):
    """Accuracy never falls below the target even with all neurons pruned."""


# --- policy layer ------------------------------------------------------------

class PolicyError(NeuronLockError):
    pass


class IndexOutOfRange(PolicyError):
    """Selected neuron index exceeds the partition's neuron space."""


class MissingTaskPolicy(PolicyError):
    pass


class InvalidPolicy(PolicyError):
    pass


class EmptyAttributeSet(PolicyError):
    pass


class BadMasterKey(PolicyError):
    pass


# --- execution layer ---------------------------------------------------------

class CipherError(NeuronLockError):
    pass


class SpanTooLarge(CipherError):
    """Neuron spans exceed the per-neuron counter block budget."""


class MissingSubsetKey(CipherError):
    pass


# --- decryptor ---------------------------------------------------------------

class DetectionError(NeuronLockError):
    pass


class UnsupportedDtype(DetectionError):
    pass


class RangesOverlap(DetectionError):
    """Decrypted and undecrypted metric ranges admit no separating threshold."""


class KeyMapLengthMismatch(NeuronLockError):
    pass


class ArtifactMismatch(NeuronLockError):
    """Artifacts passed to a command do not belong to the same encryption run."""
