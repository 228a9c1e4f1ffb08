//! End-to-end experiment flows shared by the command-line tool and the
//! acceptance tests, plus report and image export helpers.

pub mod dataset;
pub mod export;
pub mod prediction;
pub mod report;
pub mod segmentation;
