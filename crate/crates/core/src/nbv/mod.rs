//! Next-best-view planning for detection and localization.
//!
//! Object candidates from a first image are combined into plausible scene
//! realizations whose renderings stand in for future observations. The
//! belief over the searched object's pose is a particle set; each step picks
//! the camera placement maximizing the mutual information between particles
//! and realizations, acquires it, refines the particles with multi-view
//! registration and resamples them.

pub mod baselines;
pub mod mi;
pub mod particles;
pub mod planner;
pub mod render_cache;
pub mod sampling;

pub use baselines::{dis_baseline, random_baseline};
pub use mi::{likelihood, mutual_information, realization_avg_cd};
pub use particles::{Particle, ParticleSet};
pub use planner::{select_action, AcquiredView, Detection, NbvConfig, NbvOutcome, NbvSession, SimViewSource, StepTelemetry, Strategy, ViewSource};
pub use render_cache::{render_realization_maps, RenderCache};
pub use sampling::{candidate_probability, sample_combinations, PlacedCandidate, SceneRealization};
