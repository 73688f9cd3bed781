"""Asynchronous intensity-event representation: transcoders, decoders and tools."""

from ._validation import ConfigError, NotFittedError
from .core import (AdderEvent, AdderStream, FormatError, SourceKind, StreamHeader,
                   StreamReader, StreamWriter, dumps, load, loads)
from .edi import ApsFrame, EdiDeblurrer, deblur, event_sum, optimize_theta, reconstruct_sequence
from .event_transcoder import EventTranscoder, LatentState, OrderingError
from .framed import FramedTranscoder
from .pixel import PixelList, PixelNode
from .reconstruct import (DvsRecovery, FrameReconstructor, measure_precision,
                          reconstruct_frames, recover_dvs)
from .stats import RateReport, event_rate, psnr, recovered_fraction, sweep
from .synthetic import DavisScene, SyntheticScene, corpus, davis_corpus

__version__ = "0.1.0"

__all__ = [
    "AdderEvent", "AdderStream", "ApsFrame", "ConfigError", "DavisScene", "DvsRecovery",
    "EdiDeblurrer", "EventTranscoder", "FormatError", "FrameReconstructor", "FramedTranscoder",
    "LatentState", "NotFittedError", "OrderingError", "PixelList", "PixelNode", "RateReport",
    "SourceKind", "StreamHeader", "StreamReader", "StreamWriter", "SyntheticScene", "corpus",
    "davis_corpus",
    "deblur", "dumps", "event_rate", "event_sum", "load", "loads", "measure_precision",
    "optimize_theta", "psnr", "reconstruct_frames", "reconstruct_sequence", "recover_dvs",
    "recovered_fraction", "sweep",
]
