"""Simulation and correlation analysis of heralded biphotons."""
from .convchan import (ConversionChannel, ConversionChannelSpec, ConverterSettings, Spectrum,
                       acceptance_transmission, calibrate_window_shape, conversion_efficiency,
                       transform_stream)
from .correlator import (BinningSpec, CorrelogramResult, CrossCorrelator, HeraldedAutocorrelator,
                         HeraldedResult, cross_correlogram, heralded_autocorr, peak_stats)
from .errors import (BiphotonLabError, CalibrationError, ConfigError, DomainError, FormatError,
                     InvalidModelError, OrderingError, ResolutionError)
from .model import (BiphotonModel, SourceSettings, eval_conditional_autocorr, eval_cross_correlation,
                    pairing_ratios, waveform_pdf, waveform_spectrum_fwhm)
from .purity import (PurityParams, apply_purity_conditional, apply_purity_cross, estimate_purity,
                     invert_purity_cross)
from .simkit import Detector, DetectorSpec, apply_detector, hbt_split, simulate_source
from .tags import TagStream, delay_stream, merge_streams, read_ttag, write_ttag

__version__ = "0.1.0"
