pub mod amplitude;
pub mod buffer;
pub mod channel;
pub mod detect;
pub mod dsp;
pub mod geom;
pub mod harness;
pub mod locate;
pub mod lte;
pub mod route;
pub mod seed;
