"""mixlogit: panel mixed multinomial logit estimation by maximum
simulated likelihood, plus a pivoted stated-choice design and choice
simulation studio for end-to-end verification."""

__version__ = "0.1.0"

from .data import (
    ChoiceDataset,
    ChoiceTask,
    Respondent,
    build_alternative_universe,
    encode_income,
    load_choice_data,
)
from .modelspec import (
    ModelSpec,
    bundled_spec,
    count_parameters,
    parse_spec,
    realize_coefficients,
    transform_param,
)

__all__ = [
    "ChoiceDataset", "ChoiceTask", "Respondent",
    "build_alternative_universe", "encode_income", "load_choice_data",
    "ModelSpec", "bundled_spec", "count_parameters", "parse_spec",
    "realize_coefficients", "transform_param",
    "__version__",
]
