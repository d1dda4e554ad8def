pub mod autodiff;
pub mod connectivity;
pub mod joints;
pub mod metrics;
pub mod mesh;
pub mod nn;
pub mod rig;
pub mod skinning;
pub mod synth;
