"""Region-based reliable memory ("havens") with parity, replication and
checksum protection, seeded fault injection, and a haven-backed CG solver."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BadInput,
    BoundsError,
    ConfigError,
    CreateFailed,
    DanglingHandle,
    HavenError,
    InvalidHaven,
    LiveReferences,
    NotSymmetric,
    OutOfMemory,
    ParseError,
    ProtectionRelaxed,
    Uncorrectable,
)
from .heap import PAGE_WORDS, HavenId, HavenStats, ObjectHandle, PageStore  # noqa: E402
from .protection import (  # noqa: E402
    DEFAULT_UNIT_SPAN,
    WORD_BITS,
    ScrubReport,
    SchemeKind,
    SignatureUnit,
    init_units,
)
from .faults import FaultModel, InjectionLog, InjectionSpec, Injector, run_epoch  # noqa: E402
from .cg import (  # noqa: E402
    MONOLITHIC,
    Outcome,
    PlacementStrategy,
    RunOutcome,
    SparseMatrix,
    Strategy,
    build_poisson,
    cg_solve,
    direct_solve,
    load_matrix,
)
from .campaign import bench_placements, bench_strategies, paired_overhead_pct, run_campaign, trial_seed  # noqa: E402
from .config import CampaignConfig, load_config  # noqa: E402
