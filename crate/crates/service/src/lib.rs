//! Distributed coverage evaluation and the long-term experience store.

pub mod coordinator;
pub mod error;
pub mod isolate;
pub mod protocol;
pub mod store;
pub mod worker;

pub use coordinator::{Coordinator, RemoteHarness};
pub use error::{Result, ServiceError};
pub use isolate::ProcessHarness;
pub use protocol::{CaseResult, JobRequest, JobResult, WorkerInfo};
pub use store::{ExperienceRecord, ExperienceStore, StoreReader};
pub use worker::{KillSwitch, Worker, WorkerServer, DEFAULT_TIMEOUT};
