"""Blind signal classification for two-user downlink NOMA.

A UT receiving a frame does not know whether it carries one user's symbols
(OMA) or a power-multiplexed pair (NOMA), which modulation mode was used,
or whether it has to run SIC. This package provides the mode tables, the
maximum-likelihood and pilot-rotation classifiers, the SINR and capacity
expressions, and a paired Monte Carlo engine to compare them.
"""

from .analysis import (CapacityInputs, capacity, mc_error_prob, optimize_theta, qfunc,
                       sinr_condition, sinr_correct, sinr_misclassified)
from .channel import ChannelRealization, TransmitFrame, sample_channel, transmit_frame
from .mlc import (ClassificationResult, Hypothesis, classify_joint, classify_three_step,
                  likelihood)
from .modset import (ConstellationSet, ModeTable, ModulationError, ModulationMode,
                     base_constellation, case_table, composite_constellation, make_table)
from .prc import PhasePlan, assign_nonuniform, assign_uniform, classify_prc, estimate_rotation
from .receiver import DetectionOutcome, receive_end_to_end
from .sim import CurvePoint, SimConfig, run_sweep, run_trial

__version__ = "0.1.0"
