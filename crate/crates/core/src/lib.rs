pub mod arch;
pub mod checkpoint;
pub mod error;
pub mod extract;
pub mod g2g;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod tensor;
pub mod toy;
pub mod wavelet;
pub mod wgan;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use image::{Image, ImagePatch};
pub use rng::Rng;
pub use tensor::Tensor;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct Readme;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/tensors.md")]
    struct Tensors;
    #[doc = include_str!("../../../book/src/wavelets.md")]
    struct Wavelets;
    #[doc = include_str!("../../../book/src/noise.md")]
    struct Noise;
    #[doc = include_str!("../../../book/src/wgan.md")]
    struct Wgan;
    #[doc = include_str!("../../../book/src/g2g.md")]
    struct G2g;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
}
