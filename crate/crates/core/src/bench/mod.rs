//! Benchmark harness: synthetic problems, perturbation, bake-offs and
//! performance profiles.

pub mod bakeoff;
pub mod perturb;
pub mod profile;
pub mod synthetic;

pub use bakeoff::{run_bakeoff, BakeoffManifest};
pub use perturb::{perturb, PerturbSpec};
pub use profile::{performance_profile, ProfileInput};
pub use synthetic::{generate_synthetic, Layout, SyntheticSpec};
