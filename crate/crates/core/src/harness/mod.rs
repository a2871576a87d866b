//! Experiment plumbing behind the command-line tool: configs, datasets on
//! disk, sweeps with persisted run records, summary tables, embedding
//! analysis, the gradient-check suite and fixed benchmark protocols.

pub mod analyze;
pub mod arms;
pub mod commands;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod protocol;
pub mod summary;
pub mod sweep;

pub use analyze::{analyze, AnalysisBundle, Comparison, EmbeddingStats};
pub use arms::{run_arm, ArmResult, ArmTask};
pub use commands::{
    stain_normalize_command, train_da_command, train_dg_command, train_mil_command, StainMethod, TrainReport,
};
pub use config::{
    load_config, parse_config, Arm, DataConfig, Evaluation, ImbalanceConfig, RunConfig, SweepMode, TrainDaConfig,
    TrainDgConfig, TrainMilConfig,
};
pub use data::{gen_data, Dataset, Manifest};
pub use gradcheck::{run_gradcheck_suite, GradcheckOptions, GradcheckSuite};
pub use summary::{summarize, write_summary, Summary};
pub use sweep::{collect_records, plan, run_sweep, Cell, CellStatus, RunRecord, SweepOutcome};
