//! Monte Carlo simulation of single-electron diffraction onto hemispheric
//! detector arrays.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffraction`]: electron kinematics, the circular-aperture far-field
//!   pattern, and inverse-transform sampling of emission directions.
//! - [`geometry`]: Fibonacci tessellation of the hemisphere into sensor caps,
//!   direction lookup, and the per-sensor reference map.
//! - [`branching`]: amplitudes over the sensor basis, branch bookkeeping for
//!   the BHSI, MWI and CI views, and the per-electron disposition ledger.
//! - [`detector`]: stochastic sensor response, inter-layer transport and the
//!   per-electron event pipeline.
//! - [`coincidence`]: timing-hierarchy validation, click grouping and the
//!   dual-layer event taxonomy.
//! - [`runner`]: configuration, orchestration, persistence and reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod branching;
pub mod coincidence;
pub mod constants;
pub mod detector;
pub mod diffraction;
pub mod geometry;
pub mod quad;
pub mod rng;
pub mod runner;

pub use branching::{
    BookkeepingTrace, BranchSet, BranchTable, Disposition, DispositionLedger, EnvTag,
    InterpretationMode, Label, ReadoutState, WaveState,
};
pub use coincidence::{Category, CoincidenceRecord, TimingConfig};
pub use detector::{ClickEvent, ResponseModel, TransitModel};
pub use diffraction::{BeamSpec, DiffractionProfile, PinholeSpec};
pub use geometry::{Direction, DualLayerLayout, Landing, Layer, ReferenceMap, SensorId, SensorLayout};
pub use rng::{StreamDomain, Substream};
pub use runner::{ExperimentConfig, RunArtifacts};
