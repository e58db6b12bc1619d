//! d-methods, the perturbation methods Ψ₀/Ψ₁ and their defect analysis.

pub mod construct;
pub mod defect;
pub mod gamma;
pub mod verify;

pub use construct::{
    build_method, build_method_with_ub, choose_g_tilde, omega_eval, Anchors, ChartCheck, Cursor,
    DMethodInstance, MethodConfig, Track, D_MAX,
};
pub use defect::{
    case_bounds, classify_case, fit_envelope, fit_reports, measure_defect, CaseBounds, CaseSummary, DefectCase, DefectGrid,
    DefectReport, EnvelopeFit,
};
pub use gamma::{interp_gamma, smoothstep, BumpGamma};
pub use verify::{verify_dmethod, FnMethod, Method, VerifyGrid, VerifyOutcome};
