"""Model-independent bounds for bond-option payoffs via weak optimal transport."""

__version__ = "0.1.0"

from .couplings import (  # noqa: E402
    Coupling,
    KernelAtom,
    KernelDistribution,
    adapted_distance,
    anticomonotone,
    comonotone,
    disintegrate,
    embed_J,
    intensity_hat,
    lambda_member,
    martingale_coupling,
)
from .dual_certificates import (  # noqa: E402
    DualTriplet,
    SMap,
    build_psi,
    build_s_map,
    caplet_certificate,
    caplet_triplets,
    find_threshold,
    inf_convolution,
    verify_hedge,
)
from .lp_core import LinearProgram, LpSolution, solve_lp  # noqa: E402
from .market import (  # noqa: E402
    BoundsReport,
    MarketQuotes,
    PayoffSpec,
    extract_mu,
    extract_nu,
    extremal_model_report,
    price_bounds,
    transform_payoff,
)
from .measures import (  # noqa: E402
    DiscreteMeasure,
    EnvelopeGrid,
    barycenter,
    convex_envelope,
    convex_order_check,
    quantile,
    wasserstein,
)
from .theta import PiecewiseLinear  # noqa: E402
from .wot_solvers import (  # noqa: E402
    CostSpec,
    WotSolution,
    classical_ot,
    convexified_wot,
    relaxed_wot,
    weak_monotone_rearrangement,
    wot_lower_barycentric,
    wot_upper_barycentric,
)
