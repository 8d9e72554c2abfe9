//! Object-level data association and loop detection for object SLAM.

pub mod config;
pub mod geom;
pub mod mapdb;
pub mod assoc;
pub mod baseline;
pub mod loopdet;
pub mod sim;
pub mod eval;
pub mod io;
pub mod pipeline;
pub mod scenario;
