pub mod cardinality;
pub mod controller;
pub mod edge;
pub mod error;
pub mod experiments;
pub mod fermat;
pub mod fsd;
pub mod flowset;
pub mod hash;
pub mod modular;
pub mod simnet;
pub mod tower;

pub use cardinality::{linear_count, LinearCount};
pub use edge::{Deployment, EdgeSwitch, EncoderLayout, SketchGroup, SwitchConfig, TaggedPacket};
pub use error::{Error, Result};
pub use fermat::{Blocklist, DecodeOutcome, DecodeStatus, FermatBucket, FermatParams, FermatSketch, Sign};
pub use flowset::Flowset;
pub use fsd::{choose_threshold, mrac, tower_fsd, EmConfig, SizeDistribution};
pub use tower::{classify, ClassifierThresholds, Hierarchy, Sampler, SizeEstimate, TowerConfig, TowerLevel, TowerSketch};
pub use controller::{
    accumulation_tasks, detect_losses, shift_attention, Controller, ControllerParams, ControllerState, EpochAnalysis, EpochRecord, Mode,
    TaskResults,
};
pub use simnet::{
    generate, oracle_diff, EpochClock, EpochOutcome, GroundTruth, LossSpec, Simulator, VictimSelection, Workload, WorkloadSpec,
};
