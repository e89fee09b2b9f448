import time
from abc import ABC, abstractmethod
from typing import Any

from taintledger.utils.logger import setup_logger


class BaseAnalysis(ABC):
    """Read-only computation over committed chain data.

    Subclasses implement ``run``; calling the instance runs it and logs the
    elapsed time under the analysis name.
    """

    name: str = ""

    def __init__(self):
        self.logger = setup_logger(self.__class__.__name__)

    def __call__(self, *args, **kwargs) -> Any:
        started = time.perf_counter()
        result = self.run(*args, **kwargs)
        self.logger.debug(f"{self.name or self.__class__.__name__} finished in {time.perf_counter() - started:.3f}s")
        return result

    @abstractmethod
    def run(self, *args, **kwargs) -> Any: ...
