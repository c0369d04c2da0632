pub mod backbone;
pub mod bd;
pub mod bitstream;
pub mod context;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod flowviz;
pub mod frame;
pub mod intra;
pub mod latent;
pub mod mcn;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod nn;
pub mod pipeline;
pub mod residual;
pub mod train;
pub mod warp;

pub use error::{NvcError, Result};
