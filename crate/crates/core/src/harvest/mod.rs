//! The labeling loop: label events, the recompute queue, retraining cycles,
//! harvest metrics and user simulation.

pub mod curve;
pub mod engine;
pub mod events;
pub mod scheduler;
pub mod simulate;

pub use curve::{harvest_curve, peak_per_minute, HarvestCurve, HarvestPoint, ALL_BOOKS};
pub use engine::{
    Book, ClassState, ClassSummary, CycleDurations, CycleFailure, CyclePlan, CycleRecord, CycleReport, Engine,
    EngineConfig, LabelBatch, LabelInput, Page, RejectedLabel, RetrainedClass, SubmitReceipt, ZoneRecord,
};
pub use events::{append_jsonl, read_jsonl, Action, LabelEvent, LabelState, Mode, PositiveLabel, TornRecord};
pub use scheduler::{book_heat, BookHeat, HeatStatus, Reason, RecomputeQueue, RecomputeRequest};
pub use simulate::{simulate_user, Interaction, Policy, SessionReport, Simulation, SimulationConfig};
