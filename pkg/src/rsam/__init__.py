"""Reliable service consumption over unreliable links.

A middleware gateway that tracks, deduplicates and caches upstream requests,
paired with a client SDK that generates stable request identities and queues
work while offline. The wire contract is a pair of request headers
(X-RSAM-Client-Id, X-RSAM-Forced) and a response state header (X-RSAM-State).
"""

from .protocol import (
    ClientRequestId,
    DecisionKind,
    Lifecycle,
    LifecycleEvent,
    OutcomeState,
    RsamOutcome,
    ServiceDescriptor,
    decide,
    encode_id,
    generate_client_id,
    parse_id,
    transition,
    validate_id,
)

__version__ = "0.1.0"

__all__ = [
    "ClientRequestId",
    "DecisionKind",
    "Lifecycle",
    "LifecycleEvent",
    "OutcomeState",
    "RsamOutcome",
    "ServiceDescriptor",
    "decide",
    "encode_id",
    "generate_client_id",
    "parse_id",
    "transition",
    "validate_id",
    "__version__",
]
