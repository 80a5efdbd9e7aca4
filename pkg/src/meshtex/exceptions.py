"""Exception hierarchy shared by all meshtex modules."""


class MeshtexError(Exception):
    """Base class for all errors raised by this package."""


# -- geometry ---------------------------------------------------------------

class MissingUVsError(MeshtexError):
    """Mesh carries no UV coordinates; texturing is impossible."""


class MalformedFaceError(MeshtexError):
    """A face references an index outside its vertex/uv/normal arrays."""


class ImproperRemapError(MeshtexError):
    """Requested axis remap is a reflection, not a proper rotation."""


# -- camera / raster --------------------------------------------------------

class BehindCameraError(MeshtexError):
    """Point lies behind the near plane and cannot be projected."""


class EmptyFrameError(MeshtexError):
    """Rasterization produced no foreground pixels (bad camera or remap)."""


class UnfilledAtlasError(MeshtexError):
    """Atlas sampling would read a texel that never received a value."""


# -- atlas ------------------------------------------------------------------

class ShapeMismatchError(MeshtexError):
    """Array shapes disagree with the operation's contract."""


class NoSeedsError(MeshtexError):
    """Voronoi fill requested on an atlas with no valid texel."""


class ChannelMismatchError(MeshtexError):
    """Atlas channel count does not match what the operation requires."""


# -- diffusion --------------------------------------------------------------

class BadRangeError(MeshtexError):
    """Noise-schedule parameters outside their valid range."""


class BadTimestepOrderError(MeshtexError):
    """DDIM step called with t_prev >= t."""


class DenoiserUnavailableError(MeshtexError):
    """Denoiser endpoint cannot be reached or failed its health probe."""


class UnknownViewError(MeshtexError):
    """Denoiser queried for a view id it has no target for."""


# -- guidance ---------------------------------------------------------------

class DimensionMismatchError(MeshtexError):
    """Attention operands have inconsistent inner dimensions."""


# -- backend ----------------------------------------------------------------

class LengthMismatchError(MeshtexError):
    """Tensor payload byte length disagrees with its declared shape."""


class BadBase64Error(MeshtexError):
    """Tensor payload data is not valid base64."""


class BackendError(MeshtexError):
    """Remote denoiser returned an error or malformed response."""


# -- cli --------------------------------------------------------------------

class ConfigError(MeshtexError):
    """Run configuration is invalid (unknown key, bad type, bad combination)."""
