//! Loop-closure smoothing of vehicle trajectories on SE(3) with a
//! white-noise-on-acceleration motion prior.

pub mod factors;
pub mod frontend;
pub mod io;
pub mod lie;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod sim;
pub mod solver;
pub mod trajectory;
pub mod wnoa;

pub type Pose = lie::Pose<f64>;
pub type Twist = lie::Twist<f64>;
pub type Rotation = lie::Rotation<f64>;
pub type Posef = lie::Pose<f32>;
pub type Twistf = lie::Twist<f32>;
pub type Rotationf = lie::Rotation<f32>;
