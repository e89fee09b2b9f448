from typing import Type, TypeVar

from taintledger.analysis.base_analysis import BaseAnalysis
from taintledger.analysis.benchmark import Benchmark
from taintledger.analysis.census import DepositProbeAnalysis, MotifAnalysis, ProducerCensusAnalysis
from taintledger.analysis.reports import ImpurityReport
from taintledger.analysis.rules_lab import RulesLab
from taintledger.analysis.tracker import FundTracker

T = TypeVar("T", bound=BaseAnalysis)

ANALYSES: dict[str, Type[BaseAnalysis]] = {
    cls.name: cls
    for cls in (FundTracker, RulesLab, MotifAnalysis, DepositProbeAnalysis, ProducerCensusAnalysis, ImpurityReport, Benchmark)
}


class AnalysisFactory:
    """Factory for creating analysis instances by command name."""

    @staticmethod
    def create_analysis(analysis_type: str, *args, **kwargs) -> T:
        if analysis_type not in ANALYSES:
            raise ValueError(f"Unknown analysis type: {analysis_type}")
        return ANALYSES[analysis_type](*args, **kwargs)
