//! Poultry vocalization analysis: audio front end, self-supervised acoustic
//! units, letter transcripts, a small sentiment transformer and corpus
//! analytics, with a batch pipeline on top.

pub mod acoustic;
pub mod analytics;
pub mod audio;
pub mod dsp;
pub mod error;
pub mod neural;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete `f64` instantiations of the scalar-generic types.
pub type Waveform = audio::Waveform<f64>;
pub type Segment = audio::Segment<f64>;
pub type Tensor = neural::Tensor<f64>;
pub type Graph = neural::Graph<f64>;
pub type ParamStore = neural::ParamStore<f64>;
pub type MfccExtractor = dsp::MfccExtractor<f64>;
pub type PolyphaseResampler = audio::PolyphaseResampler<f64>;

/// Thread pool with exactly `workers` threads.
pub(crate) fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::InvalidConfig("workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| Error::InvalidConfig(e.to_string()))
}
