import sys
from ergodic_lab.logging.logger import logging


def error_message_detail(error,error_detail:sys):
    _,_,exc_tb=error_detail.exc_info()

    if exc_tb is not None:
        file_name=exc_tb.tb_frame.f_code.co_filename
        line_no=exc_tb.tb_lineno
    else:
        # raised directly, not re-wrapped: report the first frame outside this file
        frame=error_detail._getframe(1)
        while frame is not None and frame.f_code.co_filename==__file__:
            frame=frame.f_back
        file_name=frame.f_code.co_filename if frame is not None else "<unknown>"
        line_no=frame.f_lineno if frame is not None else 0

    error_message="Error occured in python script [{0}] line number [{1}] error message [{2}]".format(
        file_name,line_no,str(error)
    )
    return error_message


class CustomException(Exception):
    def __init__(self,error_message,error_detail:sys=sys):
        super().__init__(error_message)
        self.message=str(error_message)
        self.error_message=error_message_detail(error_message,error_detail=error_detail)
        logging.debug(self.error_message)

    def __str__(self):
        return self.error_message


class DomainError(CustomException):
    """Argument outside the mathematical domain of an operation."""


class RangeError(CustomException):
    """Requested index window is not covered by the available data."""


class StructuralError(CustomException):
    """A model, group or combinatorial object violates a structural invariant."""


class ResourceError(CustomException):
    """A configured size limit (window, support, tuple count) was exceeded."""


class CoverageError(CustomException):
    """Group enumeration cannot certify the requested radius."""

    def __init__(self,error_message,max_certifiable=None,error_detail:sys=sys):
        super().__init__(error_message,error_detail)
        self.max_certifiable=max_certifiable


class AccuracyError(CustomException):
    """A numerical procedure did not reach its tolerance."""

    def __init__(self,error_message,achieved=None,error_detail:sys=sys):
        super().__init__(error_message,error_detail)
        self.achieved=achieved


class ConfigError(CustomException):
    """Malformed experiment configuration or definition file."""


class InvariantViolation(CustomException):
    """Internal consistency check failed."""
