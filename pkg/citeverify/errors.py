"""
Exception hierarchy for the verification pipeline.

InputError subclasses map to CLI exit code 2, FailureBudgetExceeded to 3.
"""


class CiteVerifyError(Exception):
    """Base class for all citeverify errors."""


class InputError(CiteVerifyError):
    """An input file is missing, unreadable or malformed."""


class ClaimFileError(InputError):
    def __init__(self, message, line=None, claim_id=None):
        self.line = line
        self.claim_id = claim_id
        where = []
        if line is not None:
            where.append(f"line {line}")
        if claim_id:
            where.append(f"claim_id={claim_id!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class DuplicateClaimError(ClaimFileError):
    pass


class CorpusFileError(InputError):
    pass


class VerdictFileError(InputError):
    pass


class AuditFileError(InputError):
    pass


class MissingWindowError(CiteVerifyError):
    def __init__(self, claim_id, condition):
        self.claim_id = claim_id
        self.condition = condition
        super().__init__(f"Condition {condition} needs a year window but claim {claim_id!r} has none")


class RetrievalError(CiteVerifyError):
    def __init__(self, message, service=None, query=None):
        self.service = service
        self.query = query
        super().__init__(message)


class SkipRecord(CiteVerifyError):
    """Raised by normalize_record for index records that carry no title."""


class EmptyCellError(CiteVerifyError):
    pass


class InsufficientClustersError(CiteVerifyError):
    pass


class ClaimSetMismatchError(CiteVerifyError):
    pass


class UnknownGroupKeyError(CiteVerifyError):
    pass


class KappaUndefinedError(CiteVerifyError):
    pass


class FailureBudgetExceeded(CiteVerifyError):
    def __init__(self, failed, total, budget):
        self.failed = failed
        self.total = total
        self.budget = budget
        super().__init__(f"{failed}/{total} citations hit retrieval errors (budget {budget:.0%})")
