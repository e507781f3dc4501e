pub mod conv;
mod correlation;
pub mod elementwise;
pub mod norm;
mod layout;
mod reduce;
mod sample;
mod softmax;
mod spatial;
