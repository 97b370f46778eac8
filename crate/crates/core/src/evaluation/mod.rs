//! Metrics, codebook diagnostics, token locality and experiment harnesses.

pub mod ablation;
pub mod locality;
pub mod metrics;
pub mod report;
pub mod suite;
pub mod sweep;

pub use ablation::{run_ablation, AblationCell, AblationReport, AblationRow, AblationSummary};
pub use locality::{
    displaced_joints, joint_displacements, locality_index, locality_matrix, locality_window, render_swap, swap_plan, swap_token,
    LocalityMatrix, SwapExample, CONTROL_PERMUTATIONS, DISPLACEMENT_THRESHOLD, LOCALITY_WINDOW,
};
pub use metrics::{bone_length_violation, mpjpe, occluded_pck, pck, per_joint_pck, usage_stats, UsageStats};
pub use report::{
    codebook_stats, reconstruction_report, run_benchmark, BenchmarkScores, MetricsReport, OcclusionBenchmark,
    REPORT_THRESHOLDS,
};
pub use suite::{cell_threads, mean_sd, run_cells, SuiteConfig, THREADS_ENV};
pub use sweep::{run_sweep, SweepParam, SweepPoint, SweepReport};
