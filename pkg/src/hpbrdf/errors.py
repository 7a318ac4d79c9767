"""Exception types raised across the toolkit.

Every error carries a short machine-parsable ``category`` used by the CLI
when it reports failures on a single line.
"""


class HpbrdfError(Exception):
    category = "error"


class MismatchedPropagation(HpbrdfError):
    category = "mismatched-propagation"


class NumericalFailure(HpbrdfError):
    category = "numerical-failure"


class ZeroIntensity(HpbrdfError):
    category = "zero-intensity"


class BelowHorizon(HpbrdfError):
    category = "below-horizon"


class InsufficientMeasurements(HpbrdfError):
    category = "insufficient-measurements"


class RankDeficient(HpbrdfError):
    category = "rank-deficient"

    def __init__(self, message, rank=None):
        super().__init__(message)
        self.rank = rank


class NonFinite(HpbrdfError):
    category = "non-finite"


class DegenerateHalfVector(HpbrdfError):
    category = "degenerate-half-vector"


class EmptyTable(HpbrdfError):
    category = "empty-table"


class UnfilledBin(HpbrdfError):
    category = "unfilled-bin"


class FormatError(HpbrdfError):
    category = "format"


class BadMagic(FormatError):
    category = "bad-magic"


class TruncatedFile(FormatError):
    category = "truncated-file"


class DimMismatch(FormatError):
    category = "dim-mismatch"


class SingularDiattenuator(HpbrdfError):
    category = "singular-diattenuator"


class DegenerateDepolarizer(HpbrdfError):
    category = "degenerate-depolarizer"


class InsufficientSamples(HpbrdfError):
    category = "insufficient-samples"


class NoVisibleBands(HpbrdfError):
    category = "no-visible-bands"


class DivergedLoss(HpbrdfError):
    category = "diverged-loss"


class ConfigError(HpbrdfError):
    category = "config"
