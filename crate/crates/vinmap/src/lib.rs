pub mod config;
pub mod formats;
pub mod ingest;
pub mod pipeline;
pub mod table;
