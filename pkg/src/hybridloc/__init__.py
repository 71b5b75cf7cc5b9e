"""UAV-aided ground user localization with a hybrid (path loss + learned antenna gain) channel model."""

from .channel import Measurement, PathLossParams, UavPose, synthesize_dataset
from .citymap import Building, CityMap, classify, generate_city, is_los
from .learning import HybridChannelModel, fit_pathloss, predict, train_gain
from .netgain import GainNetwork
from .pso import LocalizationResult, PsoConfig, localize, localize_all, objective

__version__ = "0.1.0"
