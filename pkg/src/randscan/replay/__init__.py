"""Transaction replay with dynamic taint: fixtures, interpreter, detectors."""

from .detectors import (  # noqa: F401
    AttackReport,
    detect_manipulation,
    detect_rollback,
    is_profit_tx,
    is_rollback_tx,
)
from .fixtures import (  # noqa: F401
    Account,
    BlockEnv,
    FixtureError,
    TransactionRecord,
    WorkItem,
    WorldStateFixture,
    address_hex,
    ingest_suspects,
    load_fixture,
    parse_fixture,
)
from .interpreter import ExecutionTrace, ReplayEngine, ReplayError  # noqa: F401
