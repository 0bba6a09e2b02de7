//! Selective state-space scan and the visual state-space block.

mod scan;
mod vss;

pub use scan::{
    cross_scan_2d, reset_state_updates, selective_scan, state_updates, ScanDirection, ScanParams, SsmConfig,
};
pub use vss::VssBlock;
