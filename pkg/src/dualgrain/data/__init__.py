from .augment import DEFAULT_SEGMENT_FRAC, make_views, segment_shuffle_augment
from .csvio import export_csv, ingest_csv
from .schedule import SessionSchedule, SessionSpec, build_schedule
from .signals import ChannelScaler, GeneratorSpec, SignalSample, class_signature, generate_synthetic

__all__ = [
    "DEFAULT_SEGMENT_FRAC",
    "ChannelScaler",
    "GeneratorSpec",
    "SessionSchedule",
    "SessionSpec",
    "SignalSample",
    "build_schedule",
    "class_signature",
    "export_csv",
    "generate_synthetic",
    "ingest_csv",
    "make_views",
    "segment_shuffle_augment",
]
