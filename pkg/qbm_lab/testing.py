"""
Testing library for qbm_lab that allows writing tests next to the code they check,
and running the whole registered suite from the cli
"""
import time as _time
import math as _math
import logging as _logging
import typing as _typing
import traceback as _traceback

if _typing.TYPE_CHECKING:
    Func = _typing.TypeVar("Func", bound=_typing.Callable[[], None])

__all__ = [
    "test",
    "run_tests",
    "registered",
    "assert_close",
    ]

_logger = _logging.getLogger(__name__)

_test_list: _typing.List[_typing.Callable[[], None]] = []


def test(c: "Func", /) -> "Func":
    """
    Decorator to add a function to the testing library
    """

    _test_list.append(c)

    return c


def registered() -> _typing.Iterator[str]:
    """
    Returns an iterator of the qualified names of every registered test
    """
    return (f"{i.__module__}.{i.__name__}" for i in _test_list)


def assert_close(
    actual: float, expected: float, *, rel: float = 0.0, abs_: float = 0.0, what: str = ""
    ) -> None:
    """
    Asserts |actual - expected| <= max(rel * |expected|, abs_), with a readable message
    """
    bound = max(rel * abs(expected), abs_)
    diff = abs(actual - expected)

    if not diff <= bound or _math.isnan(diff):
        label = f"{what}: " if what else ""
        raise AssertionError(
            f"{label}got {actual!r}, expected {expected!r} (|diff|={diff:.3e} > {bound:.3e})"
            )


def run_tests(match: _typing.Optional[str] = None) -> int:
    """
    Runs all tests in the list whose qualified name contains match, printing any exceptions,
     with the return int indicating how many tests failed.
    0 may be treated as no tests failing, or success.
    """

    failure = 0
    ran = 0

    for i in _test_list:
        name = f"{i.__module__}.{i.__name__}"
        if match is not None and match not in name:
            continue

        ran += 1
        start = _time.monotonic()
        try:
            i()
        except Exception as err:  # pylint: disable=broad-except
            # allow catching broad exceptions here to allow running all tests
            print(f"FAIL {name}")
            _traceback.print_exception(type(err), err, err.__traceback__)
            failure += 1
        else:
            _logger.info("ok %s (%.2fs)", name, _time.monotonic() - start)

    print(f"{ran - failure}/{ran} tests passed")

    return failure
