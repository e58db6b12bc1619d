//! Along-orbit linearization, bounded solutions of the inhomogeneous
//! difference systems, growth probes and shadow replays.

pub mod frames;
pub mod growth;
pub mod oracle;
pub mod shadow;
pub mod solve;

pub use frames::{check_frame_identities, normal_basis, projection, sample_orbit_frames, FrameIdentityReport, OrbitFrame};
pub use growth::{estimate_l1_growth, estimate_l1_growth_with, GrowthReport, GrowthRow, GrowthVerdict};
pub use oracle::{scalar_oracle, OracleObjective, ORACLE_GRID};
pub use shadow::{
    anchor_deviation_ratio, cauchy_differences, replay_from_shadow, shadow_replay, shadow_search, verify_5_4,
    verify_5_6, K5Entry, K5Fit, RegimeSummary, ShadowBudget, ShadowReplayReport, ShadowResult, ShadowStatus,
};
pub use solve::{
    min_norm_solve, reduce_4_2_to_4_1, solve_eq_4_1, solve_eq_4_2, solve_scalar_4_1, BoundedSolveResult, InhomKind,
    InhomPattern, InhomSeq, SolverKind, RESIDUAL_TOL,
};
