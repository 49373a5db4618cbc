"""Exception types shared across the package."""


class MdmError(Exception):
    """Base class for all package errors."""


class FormatError(MdmError, ValueError):
    """Input bytes do not form a well-formed container (RIFF, SMF, dump files)."""


class UnsupportedCodecError(FormatError):
    def __init__(self, codec_tag: int, name: str = "unknown"):
        self.codec_tag = codec_tag
        super().__init__(f"unsupported WAV codec tag 0x{codec_tag:04x} ({name})")


class ConfigError(MdmError, ValueError):
    pass


class ShapeError(MdmError, ValueError):
    pass


class ValidationError(MdmError, ValueError):
    pass


class NumericFault(MdmError, FloatingPointError):
    """NaN or Inf produced by a tensor op while debug checking is on."""
