pub mod calibrate;
pub mod eval;
pub mod forgetting;
pub mod importance;
pub mod lora;
pub mod remote;
pub mod serve;
pub mod sweep;
pub mod synth;
pub mod train;
pub mod verify;
