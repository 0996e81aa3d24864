pub mod dense;
pub mod skyline;

pub use skyline::Skyline;
