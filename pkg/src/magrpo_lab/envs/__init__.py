from .assembly import (
    AUX,
    LEVELS,
    MAIN,
    CoopAssemblyEnv,
    FeedbackMode,
    LadderBreakdown,
    LadderWeights,
    generate_feedback,
    ladder_evaluate,
    ladder_reward,
)
from .data import AssemblyData, DatasetError, default_dataset, load_dataset, save_dataset
from .expr import ParseError, UnresolvedSymbolError, evaluate_expression
from .joint import JointControlEnv
from .matrix import MATRIX_TASK, POSG1, POSG2, TABLE3, MatrixGameEnv, matrix_reward
from .passk import pass_at_k


def make_coop_env(data: AssemblyData | None = None, **kwargs) -> CoopAssemblyEnv:
    data = data or default_dataset()
    return CoopAssemblyEnv(data.tasks, data.aux_catalog, data.main_catalog, **kwargs)
