//! Runtime support: kernel/communication autotuning, hierarchical runtime
//! statistics, case configuration, and the CLI entry points.

pub mod autotune;
pub mod case;
pub mod config;
pub mod stats;

pub use autotune::{autotune, standard_registry, KernelVariantRegistry, TuningReport};
pub use case::{run_case, scale_study, tune_case, CaseSummary, ScaleStudy};
pub use config::{parse_config, serialize_config, CaseConfig};
