pub mod se3;
pub mod trajectory;
pub mod kinematics;
pub mod hand_stream;
pub mod orchestrator;
pub mod scenario;
pub mod harness;
