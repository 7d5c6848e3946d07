//! Feature-map-to-image translation with a wavelet output stage, and the
//! adversarial and perceptual losses used to train it.

mod adversarial;
mod perceptual;
mod translator;
mod wavelet;

pub use adversarial::{adv_losses, discriminator_loss, generator_loss, DiscLoss, Discriminator};
pub use perceptual::PerceptualLite;
pub use translator::{upsample_image, TranslatorConfig, TranslatorNet, UpsampleHead};
pub use wavelet::{haar_fwt, haar_iwt, iwt_op, WaveletCoeffs};
