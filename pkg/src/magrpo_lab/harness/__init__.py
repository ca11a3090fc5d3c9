from .config import (
    ConfigError,
    EnvSection,
    EvalSection,
    ExperimentConfig,
    ExportSection,
    TrainSection,
    config_from_dict,
    parse_config,
    with_overrides,
)
from .run import (
    EvaluationReport,
    ExportSummary,
    RunFailed,
    RunResult,
    analyze_game,
    build_env,
    evaluate,
    evaluate_policies,
    export_plot_data,
    final_window_means,
    read_log,
    run_experiment,
)
