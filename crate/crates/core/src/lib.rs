//! Deterministic simulator of an LSM key-value store paired with a
//! dual-interface SSD that absorbs writes while the host LSM is stalled.

pub mod accel;
pub mod bench;
pub mod device;
pub mod entry;
pub mod lsm;
pub mod merge;
pub mod query;
pub mod sim;
