pub mod colgen;
pub mod data_ingest;
pub mod domain;
pub mod engine;
pub mod experiments;
pub mod forecasting;
pub mod formulations;
pub mod oracle;
