"""Exception hierarchy.

Every error carries ``code``, the process exit status the CLI uses for the
train / evaluate / explain / report commands (1-9). ``infer`` and
``select-frame`` use their own table, see :mod:`ensemble_pad.cli`.
"""
from __future__ import annotations


class PadError(Exception):
    code = 1

    @property
    def name(self) -> str:
        return type(self).__name__


# -- files / config ---------------------------------------------------------

class MissingFile(PadError, FileNotFoundError):
    code = 2


class InvalidConfig(PadError, ValueError):
    code = 3


# -- dataset ----------------------------------------------------------------

class ManifestError(PadError, ValueError):
    code = 5


class MalformedRecord(ManifestError):
    def __init__(self, line: int, reason: str = ""):
        self.line = line
        super().__init__(f"line {line}: {reason}" if reason else f"line {line}")


class LabelTaxonomyViolation(ManifestError):
    pass


class DuplicatePath(ManifestError):
    pass


class SplitLeakage(ManifestError):
    def __init__(self, subject_id: str):
        self.subject_id = subject_id
        super().__init__(subject_id)


class TooFewSubjects(ManifestError):
    pass


class BadFractions(ManifestError):
    pass


# -- image operations ---------------------------------------------------------

class ImageError(PadError, ValueError):
    code = 9


class EmptyImage(ImageError):
    pass


class CropOutOfBounds(ImageError):
    pass


class EmptyVideo(ImageError):
    pass


class NoFaceFound(ImageError):
    pass


class BoxOutOfBounds(ImageError):
    pass


class BadBandFraction(ImageError):
    pass


class BadWeights(ImageError):
    pass


class ShapeMismatch(ImageError):
    pass


class BadAlpha(ImageError):
    pass


# -- training -----------------------------------------------------------------

class SpatialCollapse(InvalidConfig):
    pass


class SingleClassTrainingSet(PadError, ValueError):
    code = 4


class NonFiniteLoss(PadError, ArithmeticError):
    code = 6

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite loss in epoch {epoch}")


# -- checkpoints / bundles ---------------------------------------------------

class BundleError(PadError):
    code = 7


class CorruptCheckpoint(BundleError):
    pass


class ConfigMismatch(BundleError):
    pass


class UnknownMember(BundleError, KeyError):
    def __init__(self, member_id: str, available):
        self.member_id = member_id
        self.available = sorted(available)
        super().__init__(f"unknown member {member_id!r}; available: {', '.join(self.available)}")

    def __str__(self) -> str:
        return self.args[0]


# -- protocol -------------------------------------------------------------------

class EmptyProtocol(PadError, ValueError):
    code = 8


class UnresolvedProtocolRows(PadError):
    code = 8

    def __init__(self, rows):
        self.rows = list(rows)
        listing = "; ".join(f"{s}/{c} (need {n}, found {f})" for s, c, n, f in self.rows)
        super().__init__(f"{len(self.rows)} unresolved rows: {listing}")


# -- scores / metrics ------------------------------------------------------------

class ScoreError(PadError, ValueError):
    code = 9


class EmptyScores(ScoreError):
    pass


class EvenMajority(ScoreError):
    pass


class SingleClassValidation(ScoreError):
    pass


class SingleClassScores(ScoreError):
    pass


class NoAttackSamples(ScoreError, ZeroDivisionError):
    pass


class NoBonafideSamples(ScoreError, ZeroDivisionError):
    pass


class ModelTooLarge(PadError, ValueError):
    code = 9
