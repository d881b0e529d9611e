"""Shared exception types.

DataError covers invalid or inconsistent input data (bad manifests,
impossible split requests, missing pipeline artifacts); the CLI maps it
to exit code 2. NumericalAbort covers non-finite losses or parameters
during training; the CLI maps it to exit code 3.
"""


class DataError(ValueError):
    pass


class NumericalAbort(RuntimeError):
    pass
