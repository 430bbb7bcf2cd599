mod conv;
mod elementwise;
mod shape;

pub use conv::{dims4, Conv2dGeometry, ResampleMatrix};
