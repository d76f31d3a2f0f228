//! Online multi-object tracking on the ground plane.

mod assignment;
mod kalman;
mod online;

pub use assignment::{hungarian, Assignment};
pub use kalman::{KalmanFilter, KalmanParams, KalmanState, CHI2_95_4DOF};
pub use online::{
    affinity_to_distance, fuse_distances, AssociationConfig, TrackRecord, TrackStatus, Tracker,
    Tracklet,
};
