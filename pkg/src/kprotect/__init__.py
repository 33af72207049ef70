"""k-protected federated query engine.

Services hold private datasets keyed by an identifier attribute; a mediator
composes them along a plan while only ever handling order-preserving
ciphertexts, and invokes every child service with a range that matches at
least ``k`` of its identifiers.
"""

from .audit import (
    AuditReport,
    breach_probability,
    check_round_bound,
    replay_experiment,
    round_bound,
    verify_k_protection,
    verify_nesting,
)
from .errors import KProtectError
from .estimator import KProtectionGeneralizer
from .mediator import GenCache, Mediator, ResultTable, alpha_for, execute_plan
from .opes import OpesKey, decrypt, encrypt, keygen
from .plan import CompositionPlan, PlanNode, effective_k
from .ranges import CandidateRange, IdRange
from .service import ConsentTable, DataService, ServiceConfig
from .store import BucketPolicy, TimestampedStore, load_event_log, replay_events
from .transcript import InvocationTranscript
from .transport import InProcessTransport, ServiceServer, TcpTransport

__version__ = "0.1.0"

__all__ = [
    "AuditReport",
    "BucketPolicy",
    "CandidateRange",
    "CompositionPlan",
    "ConsentTable",
    "DataService",
    "GenCache",
    "IdRange",
    "InProcessTransport",
    "InvocationTranscript",
    "KProtectError",
    "KProtectionGeneralizer",
    "Mediator",
    "OpesKey",
    "PlanNode",
    "ResultTable",
    "ServiceConfig",
    "ServiceServer",
    "TcpTransport",
    "TimestampedStore",
    "alpha_for",
    "breach_probability",
    "check_round_bound",
    "decrypt",
    "effective_k",
    "encrypt",
    "execute_plan",
    "keygen",
    "load_event_log",
    "replay_events",
    "replay_experiment",
    "round_bound",
    "verify_k_protection",
    "verify_nesting",
]
