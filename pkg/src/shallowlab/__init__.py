"""shallowlab: a numerical laboratory for two-layer network training.

Trains V phi(W X) against quadratic loss with explicit Jacobian/adjoint
machinery, measures every constant its convergence theory needs
(near-isometry, smoothness, confinement radius, certified step size,
width requirement, concentration failure probability), validates the
Hermite / Khatri-Rao spectral picture of the feature Gram by Monte Carlo,
and tracks how far training strays from its linearization across
initialization families.
"""

from .activations import (
    ActivationProfile,
    DerivativeBounds,
    HomogeneityEstimate,
    catalog_names,
    derivative_bounds,
    eval_all,
    get_activation,
    homogeneity_exponents,
)
from .certificates import (
    GramDiagnostics,
    InitScheme,
    LazyRegimeReport,
    ProbeParams,
    TheoryConstants,
    WidthCertificate,
    certify_init,
    constants_at_init,
    failure_probability,
    gram_bounds,
    khatri_rao_sigma_min,
    lazy_regime_report,
    learning_rate,
    monte_carlo_gram,
    width_from_spectra,
    width_requirement,
)
from .errors import (
    ConfigError,
    DegenerateCertificateError,
    DimensionError,
    DivergenceError,
    EstimationError,
    IdxFormatError,
    InfeasibleDataError,
    UnusableOrderError,
)
from .harness import (
    ExperimentConfig,
    SweepReport,
    build_splits,
    emit_report,
    init_weights,
    load_idx,
    one_hot_labels,
    render_report,
    sample_cluster_data,
    sample_unit_sphere_data,
    sgd_train,
    teacher_student_sweep,
)
from .hermite import (
    HermiteExpansion,
    expected_gram,
    hermite_coefficients,
    hermite_poly,
    quadrature_inner_product,
)
from .linalg import (
    RngStream,
    SpectralExtremes,
    gaussian_matrix,
    khatri_rao_gram,
    singular_values,
    svd_extremes,
    sym_eig_extremes,
    weyl_check,
)
from .network import (
    Dataset,
    NetParams,
    forward,
    gradient,
    jacobian_adjoint,
    jacobian_apply,
    jacobian_extremes,
    jacobian_matrix,
    loss,
)
from .training import (
    FlowTrace,
    TrainingTrace,
    confinement_check,
    gd_train,
    gradient_flow,
    rate_certificate,
)

__version__ = "0.1.0"
