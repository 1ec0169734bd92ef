//! Ultrasound B-mode simulation, scatterer-map reconstruction and image
//! metrics.

pub mod cli;
pub mod conv;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod inverse;
pub mod io;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod psf;
pub mod rng;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/data-model.md")]
    pub mod data_model {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub mod simulation {}
    #[doc = include_str!("../../../book/src/phantoms.md")]
    pub mod phantoms {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    pub mod reconstruction {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
}
