"""Exception hierarchy shared by every layer of the framework.

Store-level errors map onto wire status bytes in :mod:`plasmaflow.ipc`;
everything else stays in-process.
"""


class PlasmaFlowError(Exception):
    """Base class for all framework errors."""


# --- arena ---

class IoFailure(PlasmaFlowError):
    """Backing file could not be created, opened, or mapped."""


class InvalidCapacity(PlasmaFlowError):
    """Requested arena capacity is zero or negative."""


class OutOfBounds(PlasmaFlowError):
    """Read or write extends past the end of the arena."""


class CoherencyViolation(PlasmaFlowError):
    """Attempted write through a remote (read-only) arena view."""


# --- allocator ---

class OutOfMemory(PlasmaFlowError):
    """No free region can accommodate the request."""


class InvalidSize(PlasmaFlowError):
    """Zero-sized allocation request."""


class UnknownOffset(PlasmaFlowError):
    """Deallocation of an offset that is not currently allocated."""


# --- store ---

class ObjectExists(PlasmaFlowError):
    """Object id already present locally or on a peer store."""


class ObjectNotFound(PlasmaFlowError):
    """No entry for the given object id."""


class AlreadySealed(PlasmaFlowError):
    """Seal requested for an object that is already sealed."""


class NotReferenced(PlasmaFlowError):
    """Release without a matching reference (client protocol bug)."""


# --- networking ---

class PeerUnreachable(PlasmaFlowError):
    """Peer store could not be reached, even after one reconnect."""


class ProtocolError(PlasmaFlowError):
    """Malformed, truncated, or oversized wire frame."""


class ConnectionLost(PlasmaFlowError):
    """Remote end closed the connection."""


class BindFailure(PlasmaFlowError):
    """Server socket could not be bound at startup."""


class ConnectFailure(PlasmaFlowError):
    """Client could not connect to the store socket."""


class VersionMismatch(PlasmaFlowError):
    """Client and store disagree on the protocol version."""


# --- benchmark harness ---

class CapacityError(PlasmaFlowError):
    """Benchmark footprint exceeds the producer arena capacity."""


class EmptySample(PlasmaFlowError):
    """Statistics requested over an empty record set."""


class ConfigError(PlasmaFlowError):
    """Daemon configuration file is invalid."""
