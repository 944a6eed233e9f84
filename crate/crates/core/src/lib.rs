//! Continual class-incremental learning with closed-loop generative replay.
//!
//! An auxiliary-classifier GAN is trained task after task. Old classes are
//! rehearsed from the generator's *current* state (no frozen copies), the
//! generated samples are quality-gated before use, and a small episodic
//! buffer of real images chosen for heterogeneity anchors the replay.
//!
//! Layout:
//! - [`data`]: dataset ingestion, disjoint-class task sequences, single-headed eval sets.
//! - [`nn`]: a small manual-backprop network library plus the generator and
//!   discriminator/classifier families.
//! - [`losses`]: adversarial and classification objectives.
//! - [`buffer`]: the episodic memory and its selection schemes.
//! - [`filtering`]: class-conditional, soft-rejection and discriminator-rejection filters.
//! - [`continual`]: the closed-loop trainer and every baseline.
//! - [`harness`]: configs, metrics, run records, reports and plots.

pub mod archive;
pub mod buffer;
pub mod continual;
pub mod data;
pub mod error;
pub mod filtering;
pub mod harness;
pub mod losses;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
