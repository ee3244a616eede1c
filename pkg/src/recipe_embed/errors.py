"""Exception types shared across the package."""


class RecipeEmbedError(Exception):
    pass


class DimensionError(RecipeEmbedError, ValueError):
    pass


class EmptyInputError(RecipeEmbedError, ValueError):
    pass


class DegenerateInputError(RecipeEmbedError, ValueError):
    pass


class LabelError(RecipeEmbedError, ValueError):
    pass


class ConfigError(RecipeEmbedError, ValueError):
    pass


class TrainingDivergence(RecipeEmbedError, RuntimeError):
    """Raised on a non-finite loss or gradient.

    ``checkpoint`` holds the last good parameter snapshot when one exists.
    """

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class ParseError(RecipeEmbedError, ValueError):
    def __init__(self, message, locus=None):
        if locus is not None:
            message = f"{locus}: {message}"
        super().__init__(message)
        self.locus = locus


class IntegrityError(RecipeEmbedError, ValueError):
    pass


class SamplingError(RecipeEmbedError, ValueError):
    pass


class NotFoundError(RecipeEmbedError, LookupError):
    pass
