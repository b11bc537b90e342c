"""Module with miscellaneous utility functions."""
import os
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Callable, Iterable, TypeVar

import numpy as np

_log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class NoExceptionFormatter(logging.Formatter):
    """
    Formatter to specifically remove any exception traceback from logging output.

    See: https://stackoverflow.com/questions/6177520/python-logging-exc-info-only-for-file-handler
    """

    def format(self, record: logging.LogRecord) -> str:
        """Remove cached exception traceback message."""
        # Clear cached exception message
        record.exc_text = ""
        return super(NoExceptionFormatter, self).format(record)

    def formatException(self, exc: Any) -> str:
        """Remove exception details."""
        return ""


def recursive_update(any_dict: Dict[Any, Any], update_dict: Dict[Any, Any]) -> Dict[Any, Any]:
    """Similar to dict.update(), but updates nested dictionaries recursively and never sets a key's value to None."""
    for key, value in update_dict.items():
        if value is None:
            continue
        elif isinstance(value, Dict):
            any_dict[key] = recursive_update(dict(any_dict.get(key) or {}), value)
        else:
            any_dict[key] = value
    return any_dict


def ensure_dir_exists(dir_path: str) -> None:
    """Create directory and complete path of parent directories, if needed."""
    if dir_path and not os.path.exists(dir_path):
        os.makedirs(dir_path)


def decorate(decorators: List[Callable[..., Any]]) -> Callable[..., Any]:
    """Use this decorator function to apply a list of decorators to a function.

    Useful when sharing a common group of decorators among functions.

    The original use case is with click decorators (see: https://github.com/pallets/click/issues/108)
    """

    def func_with_shared_decorators(func: Callable[..., Any]) -> Callable[..., Any]:
        for option in reversed(decorators):
            func = option(func)
        return func

    return func_with_shared_decorators


def only_file_stem(file_path: str) -> str:
    """Get name of file without directory path and extension."""
    file_name_only = os.path.basename(file_path)
    file_name_only = os.path.splitext(file_name_only)[0]
    return file_name_only


def pairwise_sum(values: np.ndarray) -> float:
    """Sum with a fixed-shape pairwise tree, so the result only depends on the array contents."""
    flat = np.ravel(np.asarray(values, dtype=float))
    if flat.size == 0:
        return 0.0
    size = 1
    while size < flat.size:
        size *= 2
    level = np.zeros(size)
    level[: flat.size] = flat
    while level.size > 1:
        level = level[0::2] + level[1::2]
    return float(level[0])


def parallel_map(func: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """Map `func` over `items` on a thread pool; results keep the order of `items`."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))
