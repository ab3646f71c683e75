"""Location-based driving volatility from connected-vehicle messages,
crash-frequency count models, and proactive intersection screening."""

from .countmodel import (
    DesignMatrix,
    ModelFit,
    build_design,
    fit_negative_binomial,
    fit_poisson,
    lagrange_multiplier_test,
    mcfadden_rho2,
)
from .geomatch import (
    IntersectionSite,
    MatchedPoint,
    great_circle_distance,
    load_inventory,
    match_points,
)
from .hotspot import HotspotRow, rank_sites, volatility_score
from .ingest import BsmRecord, IngestAudit, check_accel_consistency, parse_bsm_file
from .randparam import (
    RandomParamFit,
    RandomParamSpec,
    average_marginal_effects,
    fit_random_poisson,
    halton_sequence,
)
from .volatility import LbvSummary, coefficient_of_variation, compute_all, compute_lbv, summarize_lbv

__version__ = "0.1.0"
