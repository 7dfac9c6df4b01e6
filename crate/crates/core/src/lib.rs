//! Nonlocal approximations of the Griffith fracture energy.

pub mod domain;
pub mod energy;
pub mod error;
pub mod harness;
pub mod limits;
pub mod minimize;
pub mod quad;
pub mod slicing;

pub use domain::{eval, minkowski_support, sample, AnalyticField, BoxDomain, FieldConfig, Grid, PlaneSegment, SampledField};
pub use energy::{ball_candidates, f_eps, f_eps_double, f_eps_xi, fp_eps, Ball, BallFamily, BallStrategy, EnergyReport, Field, Region};
pub use error::{Error, Result};
pub use harness::{audit_inequalities, run_sweep, AuditReport, AuditSpec, ExtrapolationResult, FieldSource, SweepSpec};
pub use quad::{build_direction_rule, gaussian_moment, integrate, DirectionRule, Moment, RuleParams};
