"""Semi-supervised calibration of multinomial logit choice models.

Partially labeled choice data are fit with expectation-maximization (EM),
cluster-and-label (CL), or the adaptive cluster-and-label variants XCL1
and XCL2, and compared against a labeled-only baseline with rank metrics.
"""

from .choice_data import (
    Dataset,
    Request,
    SoftLabeledDataset,
    SynthConfig,
    load_dataset,
    mask_labels,
    synth_generate,
    write_dataset,
)
from .errors import (
    ChoiceDataError,
    ConfigError,
    DivergenceError,
    FitError,
    NumericError,
    ParseError,
    SchemaError,
    SsdcmError,
    UnderdeterminedModel,
)
from .mnl import AIRLINE_SGD, HOTEL_SGD, Coefficients, SgdConfig, explode_rol, fit_mnl, log_likelihood, predict_rank
from .ssl import FitReport, XclConfig, bic_value, fit_baseline, fit_cl, fit_em, fit_xcl1, fit_xcl2

__version__ = "0.1.0"
