"""Exception taxonomy. The CLI maps these onto distinct exit codes."""


class TabphraseError(Exception):
    """Base class for all package errors."""


class ConfigError(TabphraseError):
    """Invalid configuration: bad values, missing sections, unusable flags."""


class DataError(TabphraseError):
    """Malformed or unusable input data (CSV, manifest, lookup table)."""


class TrainingError(TabphraseError):
    """Training could not proceed or produced unusable state."""


class ShapeMismatch(TabphraseError):
    """An operation received inputs with incompatible shapes.

    Carries the name of the offending operation so failures deep in a
    recorded graph are attributable.
    """

    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op


class NanProduced(TabphraseError):
    """An operation produced a NaN while NaN debugging was enabled."""

    def __init__(self, op_id: str):
        super().__init__(f"NaN produced by operation {op_id}")
        self.op_id = op_id
