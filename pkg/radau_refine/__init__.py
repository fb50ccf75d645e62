from enum import Enum

__project__ = "radau-refine"
__version__ = "0.2.0"


class Direction(Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class DirectionPolicy(Enum):
    BOTH = "both"
    FORWARD_ONLY = "forward"
    BACKWARD_ONLY = "backward"
    AUTO = "auto"

    def uses(self, direction: Direction) -> bool:
        if self is DirectionPolicy.FORWARD_ONLY:
            return direction is Direction.FORWARD
        if self is DirectionPolicy.BACKWARD_ONLY:
            return direction is Direction.BACKWARD
        return True


class IntegratorMethod(Enum):
    DP54 = "dp54"
    V98 = "v98"


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"
    NUMERIC_FAILURE = "numeric_failure"


class RunStatus(Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    NLP_FAILED = "nlp_failed"


class RefinementAction(Enum):
    NONE = "none"
    P_REFINE = "p_refine"
    H_REFINE = "h_refine"
    MERGE = "merge_with_next"
    P_REDUCE = "p_reduce"


class SimulationStatus(Enum):
    OK = "ok"
    FAILED = "failed"
