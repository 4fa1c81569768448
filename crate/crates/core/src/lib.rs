pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod features;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod seeding;
pub mod training;

pub use error::{Error, Result};
