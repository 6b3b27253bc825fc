"""Prototype maps for rare spatial fields.

Computes a small set of prototype maps (and their probability masses) that
best represent the distribution of a rare, expensive-to-simulate spatial
field, by combining importance-sampled Lloyd quantization with a wavelet
FPCA + Gaussian-process map surrogate, plus the matching error metrics.
"""

from raremap_quant.core import (
    GridMap,
    InnerProductWeights,
    PrototypeSet,
    VoronoiAssignment,
    empirical_quantization_error,
    nearest_prototype,
    weighted_inner_product,
)
from raremap_quant.fpca import FpcaModel, fit_fpca
from raremap_quant.metamodel import (
    ForestConfig,
    MapMetamodel,
    MetamodelConfig,
    cross_validate_metamodel,
    fit_metamodel,
    predict_map,
    predict_maps,
)
from raremap_quant.metrics import (
    BootstrapConfig,
    PerturbationConfig,
    metric_summary,
)
from raremap_quant.quantizer import (
    LloydConfig,
    QuantizationResult,
    initialize_prototypes,
    lloyd_step,
    prototype_maps_algorithm,
)
from raremap_quant.sampling import (
    Product,
    SampleStream,
    density_from_config,
    named_seed,
)

__version__ = "0.1.0"
