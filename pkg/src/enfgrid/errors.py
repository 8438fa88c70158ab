"""Exception hierarchy shared by every stage of the pipeline."""


class EnfGridError(Exception):
    """Base class for all errors raised by this package."""


# -- waveform ingestion -----------------------------------------------------

class WavError(EnfGridError):
    pass


class MalformedWav(WavError):
    pass


class UnsupportedEncoding(WavError):
    pass


class EmptyWav(WavError):
    pass


class RecordingTooShort(EnfGridError):
    pass


# -- spectral analysis ------------------------------------------------------

class InvalidWindow(EnfGridError):
    pass


class BandOutOfRange(EnfGridError):
    pass


class NyquistViolation(EnfGridError):
    pass


# -- network engine ---------------------------------------------------------

class ShapeMismatch(EnfGridError):
    pass


class DegenerateBatch(EnfGridError):
    pass


class GraphNotRecorded(EnfGridError):
    pass


class CheckpointError(EnfGridError):
    pass


# -- model / training -------------------------------------------------------

class ConfigInvalid(EnfGridError):
    pass


class EmptyClass(EnfGridError):
    pass


class LabelOutOfRange(EnfGridError):
    pass


# -- decisions --------------------------------------------------------------

class InvalidDistribution(EnfGridError):
    pass


class EmptyInput(EnfGridError):
    pass


class UnknownRecType(EnfGridError):
    pass


# -- corpus -----------------------------------------------------------------

class InvalidProfile(EnfGridError):
    pass


class LayoutError(EnfGridError):
    pass


class UnknownSource(EnfGridError):
    pass
