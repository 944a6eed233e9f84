//! Continual training: closed-loop replay and the baselines it is compared to.

pub mod batch;
pub mod config;
pub mod ewc;
pub mod train;

pub use batch::{assemble_extended_batch, plan_batch, BatchPlan, Composition, EpochSampler, ExtendedBatch, ReplayRequest};
pub use config::{BufferConfig, EwcConfig, MemoryAccounting, Method, MethodConfig, Mixing, PlateauConfig, SolverConfig};
pub use ewc::{estimate_fisher, FisherState};
pub use train::{memory_equiv_images, train, train_baseline, train_clogan, FilterRate, ScalarRow, TaskSamples, TrainOutcome, TrainedModel};
