//! Evaluation, traces, self-checks and scripted probes.

pub mod checks;
pub mod eval;
pub mod probe;
pub mod trace;

pub use checks::{gradient_check, module_gradient_checks, planner_check, planner_mazes, planner_suite, probe_suite, selfcheck, CheckItem, SelfCheckReport};
pub use eval::{evaluate, generate_testset, oracle_eval, run_episode, EpisodeResult, EvalConfig, EvalStats, PolicyKind, SizeStats};
pub use probe::{cell_path, localization_probe, steer_toward, PathFollower, ProbeOutcome};
pub use trace::{export_trace, parse_trace, replay_matches, TraceRecord};
