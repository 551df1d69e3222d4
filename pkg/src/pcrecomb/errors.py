"""Exception types raised across the package."""


class PcrError(Exception):
    """Base class for pipeline errors."""


class ParseError(PcrError, ValueError):
    def __init__(self, offset: int, detail: str = ""):
        self.offset = offset
        self.detail = detail
        msg = f"parse error at byte {offset}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class NoPositionDataError(PcrError, ValueError):
    def __init__(self, path=None):
        super().__init__("no position data" + (f" in {path}" if path else ""))


class UnsupportedFormatError(PcrError, ValueError):
    pass


class SchemaError(PcrError, ValueError):
    def __init__(self, field: str, detail: str = "missing required field"):
        self.field = field
        super().__init__(f"{detail}: {field!r}")


class MetadataInconsistentError(PcrError, ValueError):
    def __init__(self, detail: str):
        super().__init__(f"metadata inconsistent with cloud ({detail})")


class RegistrationDivergedError(PcrError, RuntimeError):
    def __init__(self, detail: str = "", diagnostics=None):
        self.diagnostics = diagnostics or []
        super().__init__("registration diverged" + (f": {detail}" if detail else ""))


class AttributeConflictError(PcrError, TypeError):
    pass


class OffGridAzimuthError(PcrError, ValueError):
    pass
