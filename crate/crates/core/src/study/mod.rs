//! The hypertension control study: record encoding, configuration, batching and
//! the evaluation strategies.

pub mod batch;
pub mod config;
pub mod output;
pub mod pipeline;
pub mod record;

pub use config::{Mode, StudyConfig};
pub use output::{open_at_analyst, OutputRow, OutputShare, StudyOutput};
pub use pipeline::{prepare_upload, run_study, PartnerUpload, StepLog, Uploads};
pub use record::{encode_record, CodedRecord};
