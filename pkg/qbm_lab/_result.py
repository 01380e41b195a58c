"""
Definition of the Result type used by every fallible operation in qbm_lab
"""

__all__ = [
    "Result",
    "Ok",
    "Err",
    "UnwrapError",
    ]

import inspect

from typing import TypeVar, Union, Tuple, Literal, Optional, Callable, Iterable, List
from typing_extensions import TypeGuard

T = TypeVar("T")
U = TypeVar("U")
E = TypeVar("E")
F = TypeVar("F", bound=BaseException)

OkT = Tuple[Literal["ok"], T]
ErrT = Tuple[Literal["err"], E]

Result = Union[OkT[T], ErrT[E]]


class UnwrapError(Exception):
    """
    Error that is raised when unwrapping a Result to the wrong variant
    """
    __slots__ = ()


def _caller_location() -> str:
    # two frames up: the unwrap method, then whoever called it
    if (cur := inspect.currentframe()) is not None and (unwrap := cur.f_back) is not None and (
        caller := unwrap.f_back
        ) is not None:
        return f"{caller.f_code.co_filename}:{caller.f_lineno} "
    return ""


class ClassOk:
    """
    Constructor and inspector class for the Ok variant of a Result
    """
    __slots__ = ()

    @staticmethod
    def __call__(value: T, /) -> OkT[T]:
        """
        Wraps a value in an Ok variant
        """
        return ("ok", value)

    @staticmethod
    def is_instance(result: Result[T, E], /) -> TypeGuard[OkT[T]]:
        """
        Returns True if the Result is an Ok variant
        """
        return result[0] == "ok"

    @staticmethod
    def get(result: Result[T, E], /) -> Optional[T]:
        """
        Returns the Ok value or None
        """
        if result[0] == "err":
            return None

        return result[1]

    @staticmethod
    def unwrap(result: Result[T, E], /) -> T:
        """
        Returns the Ok value or raises UnwrapError
        """
        if result[0] == "err":
            raise UnwrapError(
                f"{_caller_location()}Result type was Err variant, expected Ok variant\n"
                f"Err: {type(result[1]).__name__}='{result[1]}'"
                )

        return result[1]

    @staticmethod
    def expect(result: Result[T, F], /) -> T:
        """
        Returns the Ok value, or raises the carried exception of an Err variant as is

        Meant for code paths (tests, experiment drivers) where an Err is already a bug or a
        reportable failure and the original error type should propagate
        """
        if result[0] == "err":
            raise result[1]

        return result[1]

    @staticmethod
    def map(result: Result[T, E], call: Callable[[T], U]) -> Result[U, E]:
        """
        Maps the Ok value with a function, or returns the Err variant unchanged
        """
        if result[0] == "ok":
            return ("ok", call(result[1]))

        return result

    @staticmethod
    def and_then(result: Result[T, E], call: Callable[[T], Result[U, E]]) -> Result[U, E]:
        """
        Chains a fallible function onto an Ok value, short circuiting on Err
        """
        if result[0] == "ok":
            return call(result[1])

        return result

    @staticmethod
    def collect(results: Iterable[Result[T, E]], /) -> Result[List[T], E]:
        """
        Turns an iterable of Results into a Result of a list, stopping at the first Err
        """
        out: List[T] = []

        for i in results:
            if i[0] == "err":
                return i
            out.append(i[1])

        return ("ok", out)


class ClassErr:
    """
    Constructor and inspector class for the Err variant of a Result
    """
    __slots__ = ()

    @staticmethod
    def __call__(value: E, /) -> ErrT[E]:
        """
        Wraps a value in an Err variant
        """
        return ("err", value)

    @staticmethod
    def is_instance(result: Result[T, E], /) -> TypeGuard[ErrT[E]]:
        """
        Returns True if the Result is an Err variant
        """
        return result[0] == "err"

    @staticmethod
    def get(result: Result[T, E], /) -> Optional[E]:
        """
        Returns the Err value or None
        """
        if result[0] == "ok":
            return None

        return result[1]

    @staticmethod
    def unwrap(result: Result[T, E], /) -> E:
        """
        Returns the Err value or raises UnwrapError
        """
        if result[0] == "ok":
            raise UnwrapError(
                f"{_caller_location()}Result type was Ok variant, expected Err variant\n"
                f"Ok: {type(result[1]).__name__}='{result[1]}'"
                )

        return result[1]

    @staticmethod
    def map(result: Result[T, E], call: Callable[[E], U]) -> Result[T, U]:
        """
        Maps the Err value with a function, or returns the Ok variant unchanged
        """
        if result[0] == "err":
            return ("err", call(result[1]))

        return result


Ok: ClassOk = ClassOk()
Err: ClassErr = ClassErr()
