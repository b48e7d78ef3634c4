pub mod analysis;
pub mod cli;
pub mod control_plane;
pub mod data_plane;
pub mod harness;
pub mod par;
pub mod sm_engine;
pub mod topology;
