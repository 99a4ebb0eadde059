"""Error categories raised by the detection pipeline.

Each category carries the process exit code the management commands use
when they fail with it.
"""


class BotDetectorError(Exception):
    exit_code = 1
    category = 'error'


class ConfigError(BotDetectorError):
    exit_code = 2
    category = 'config'


class MissingArtifactError(BotDetectorError):
    exit_code = 3
    category = 'missing-artifact'

    def __init__(self, path, producer):
        self.path = path
        self.producer = producer
        super().__init__(
            f'{path} not found; run the `{producer}` subcommand first'
        )


class InputError(BotDetectorError):
    exit_code = 4
    category = 'input'


class MalformedRowError(InputError):

    def __init__(self, path, line, reason):
        self.path = path
        self.line = line
        self.reason = reason
        super().__init__(f'{path}:{line}: {reason}')


class LabelError(InputError):
    pass


class ShapeError(BotDetectorError):
    exit_code = 5
    category = 'shape'


class NumericalError(BotDetectorError):
    exit_code = 5
    category = 'numerical'


class NonFiniteGradientError(NumericalError):

    def __init__(self, block):
        self.block = block
        super().__init__(f'non-finite gradient in parameter block {block!r}')


class TrainingDivergedError(NumericalError):

    def __init__(self, epoch, loss, detail=''):
        self.epoch = epoch
        self.loss = loss
        message = f'training diverged at epoch {epoch}: loss={loss}'
        if detail:
            message = f'{message} ({detail})'
        super().__init__(message)


class NormalizationError(BotDetectorError):
    exit_code = 4
    category = 'normalization'


class EvaluationError(BotDetectorError):
    exit_code = 6
    category = 'evaluation'
