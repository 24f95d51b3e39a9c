//! Dataset ingestion and export, run configuration, plots and reports.

pub mod config;
pub mod g2o;
pub mod report;
pub mod svg;

pub use config::RunConfig;
pub use g2o::{parse_g2o, read_g2o, write_g2o, DatasetRecord, EdgeRecord, VertexRecord};
pub use report::StageReport;
pub use svg::emit_svg;
