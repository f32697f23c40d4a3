"""Exception hierarchy.

``InputError`` subclasses describe bad user input (CLI exit code 2);
``InternalError`` subclasses signal a defect (exit code 1).
"""


class BayesFCError(Exception):
    pass


class InputError(BayesFCError):
    pass


class InternalError(BayesFCError):
    pass


class MalformedCsv(InputError):
    pass


class NonFiniteSample(InputError):
    pass


class DuplicateChannelName(InputError):
    pass


class InvalidRecording(InputError):
    pass


class BandOutOfRange(InputError):
    pass


class SignalTooShort(InputError):
    pass


class WindowLongerThanSignal(InputError):
    pass


class CyclicCouplingSpec(InputError):
    pass


class ConstantChannel(InputError):
    pass


class TooFewSegments(InputError):
    pass


class LengthMismatch(InputError):
    pass


class DegenerateRanks(InputError):
    pass


class DegenerateMarginals(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class TooFewSamplesPerClass(InputError):
    pass


class NonFiniteScore(InternalError):
    pass


class NonFiniteActivation(InternalError):
    pass


class ZeroDegree(InternalError):
    pass
