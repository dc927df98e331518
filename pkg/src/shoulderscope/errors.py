"""Exception types raised across the library.

Every error the package raises on bad input or a failed processing stage
derives from :class:`ShoulderScopeError`, so callers can catch one base
class at the CLI boundary and map it to an exit code.
"""


class ShoulderScopeError(Exception):
    """Base class for all library-specific errors."""


# --- homogeneous geometry / camera model ---

class PointAtInfinity(ShoulderScopeError):
    """Dehomogenization was asked for a point with w ~ 0."""


class BehindCamera(ShoulderScopeError):
    """A world point projected with non-positive camera depth."""


class DegenerateConfiguration(ShoulderScopeError):
    """Camera/plane arrangement does not induce an invertible plane map."""


class SingularMatrix(ShoulderScopeError):
    """A matrix that must be invertible is singular (or numerically so)."""


# --- raster processing ---

class MalformedHeader(ShoulderScopeError):
    """PGM data does not start with a valid binary P5 header."""


class TruncatedData(ShoulderScopeError):
    """PGM raster holds fewer bytes than the header promises."""


class BadSigma(ShoulderScopeError):
    """Gaussian smoothing requested with sigma <= 0."""


class TooSmall(ShoulderScopeError):
    """Image is below the minimum size an operator needs."""


class BadThresholds(ShoulderScopeError):
    """Edge-detector thresholds violate 0 < low < high."""


class ParallelLines(ShoulderScopeError):
    """Two lines are too close to parallel to intersect reliably."""


# --- sparse optical flow ---

class TooManyLevels(ShoulderScopeError):
    """Pyramid would shrink the image below the minimum level size."""


class EmptySequence(ShoulderScopeError):
    """A frame sequence with fewer than two frames cannot be tracked."""


# --- screen-quad detection and homography estimation ---

class InsufficientLines(ShoulderScopeError):
    """Fewer than two usable lines per direction family were found."""


class DegenerateQuad(ShoulderScopeError):
    """Candidate screen corners do not form a strictly convex quad."""


class CollinearPoints(ShoulderScopeError):
    """Three of the correspondence points are (nearly) collinear."""


class RankDeficient(ShoulderScopeError):
    """The homography system admits no unique least-squares solution."""


# --- tap timing ---

class NoValidTracks(ShoulderScopeError):
    """No feature track survived long enough to vote on tap frames."""


# --- touched-key recognition ---

class BadFactor(ShoulderScopeError):
    """Upscale factor must be a positive integer."""


class OutOfBounds(ShoulderScopeError):
    """A requested region or point lies outside the image."""


class EmptyInput(ShoulderScopeError):
    """An operation got an empty pixel/point collection."""


class EmptyCluster(ShoulderScopeError):
    """A cluster that must contain pixels is empty."""


class NoKeyHit(ShoulderScopeError):
    """None of the mapped touch points landed on any key."""


class PipelineAbort(ShoulderScopeError):
    """A recognition stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, message: str = ""):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed" + (f": {message}" if message else ""))


# --- keyboard layouts ---

class UnknownPreset(ShoulderScopeError):
    """No built-in device preset with that name."""


class BadInput(ShoulderScopeError):
    """A numeric argument is outside its physical domain."""


# --- synthetic scenes ---

class QuadOutOfFrame(ShoulderScopeError):
    """The mapped screen quad does not fit inside the output image."""


class ContactOutsideKeys(ShoulderScopeError):
    """A scripted contact point lies outside every key rectangle."""
