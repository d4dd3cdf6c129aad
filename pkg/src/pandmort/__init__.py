"""pandmort: multi-population mortality calibration and forecasting with a
pandemic layer on top of a two-layer common-trend baseline."""

from .datastore import (
    AgeIndex,
    AnnualPanel,
    BaselineModel,
    CodaFit,
    CovidLayer,
    ForecastSet,
    ScenarioSpec,
    SeasonalEffect,
    WeeklyPanel,
    load_model,
    save_model,
)

__version__ = "0.1.0"

__all__ = [
    "AgeIndex", "AnnualPanel", "BaselineModel", "CodaFit", "CovidLayer",
    "ForecastSet", "ScenarioSpec", "SeasonalEffect", "WeeklyPanel",
    "load_model", "save_model", "__version__",
]
