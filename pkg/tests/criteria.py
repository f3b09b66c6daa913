"""One pass/fail line per acceptance criterion."""

from contextlib import contextmanager

RESULTS: dict[int, str] = {}


@contextmanager
def criterion(number: int, title: str):
    try:
        yield
    except BaseException as exc:
        line = f"criterion {number:2d} FAIL  {title}  ({type(exc).__name__}: {str(exc)[:120]})"
        RESULTS[number] = line
        print(line)
        raise
    line = f"criterion {number:2d} PASS  {title}"
    if " FAIL " not in RESULTS.get(number, ""):  # parametrized criteria pass only if every case does
        RESULTS[number] = line
    print(line)
