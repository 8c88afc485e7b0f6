//! The harmonization networks: generator, global discriminator and the
//! domain-verification discriminator with its partial-convolution encoder.

mod attention;
mod discriminator;
mod domain;
mod generator;
mod partial_conv;
mod plan;
mod spectral;

pub use attention::AttentionBlock;
pub use discriminator::PatchDiscriminator;
pub use domain::{domain_verify, DomainEncoder};
pub use generator::{Generator, GeneratorConfig, GEN_IN_CHANNELS, GEN_OUT_CHANNELS};
pub use generator::{load_generator, save_generator};
pub use partial_conv::partial_conv;
pub use plan::{NormPlan, VALID_PLAN_FORMS};
pub use spectral::SpectralConv;
