//! Experimental environments and their exact stationary ratios.

mod baird;
mod garnet;
mod ratio;

pub use baird::{build_baird, BairdInstance, DASHED, HUB, SOLID};
pub use garnet::{embed_qstar_features, garnet_generate, GarnetInstance, GarnetParams};
pub use ratio::{exact_stationary_ratio, RatioTable};
