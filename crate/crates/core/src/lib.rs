pub mod cli;
pub mod inference;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod transcend;
