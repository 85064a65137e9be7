from .interfaces import (  # noqa: F401
    ColumnMetadata,
    CompareVerdicts,
    ExcessExtrema,
    ForgeTapes,
    RunChshExperiment,
)
from .tabular import CardinalRegimes, SweepRates  # noqa: F401
