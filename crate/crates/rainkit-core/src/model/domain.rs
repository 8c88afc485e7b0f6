//! Domain-verification discriminator: a shared partial-convolution encoder
//! embeds the masked foreground and the masked background of an image, and
//! the verification score is the inner product of the two embeddings. The
//! partial convolutions guarantee the foreground code never sees background
//! pixels (and vice versa).

use super::partial_conv::partial_conv;
use super::spectral::SpectralConv;
use crate::error::Result;
use crate::graph::{Tape, Var};
use crate::optim::{ParamId, ParamStore};
use crate::tensor::{Element, Tensor};
use rand_chacha::ChaCha8Rng;

pub struct DomainEncoder<T: Element> {
    stages: Vec<SpectralConv<T>>,
    param_ids: Vec<ParamId>,
    embed_dim: usize,
}

impl<T: Element> DomainEncoder<T> {
    /// Stride-2 partial convolutions doubling from `base` up to the embedding
    /// width, finished with global average pooling. Weights are spectrally
    /// normalized like the global discriminator's.
    pub fn build(
        store: &mut ParamStore<T>,
        prefix: &str,
        base: usize,
        levels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let first = store.len();
        let mut stages = Vec::new();
        let mut c_in = 3;
        for i in 0..levels {
            let c_out = base << i;
            stages.push(SpectralConv::build(
                store,
                &format!("{prefix}.pconv{i}"),
                c_out,
                c_in,
                4,
                2,
                1,
                rng,
            ));
            c_in = c_out;
        }
        let param_ids = (first..store.len()).map(ParamId).collect();
        DomainEncoder { stages, param_ids, embed_dim: c_in }
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.param_ids
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Embed the mask==1 region of `img`: l = E(img o M, M), shape (N,E,1,1).
    pub fn embed(
        &mut self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        img: Var,
        mask: &Tensor<T>,
        training: bool,
        trainable: bool,
    ) -> Result<Var> {
        let mut x = tape.mask_mul(img, mask)?;
        let mut m = mask.clone();
        for stage in &mut self.stages {
            let (w_sn, b) = stage.normalized_params(tape, store, training, trainable)?;
            let (y, m_next) = partial_conv(tape, x, &m, w_sn, b, stage.stride, stage.pad)?;
            x = tape.leaky_relu(y, 0.2);
            m = m_next;
        }
        Ok(tape.spatial_mean(x))
    }

    pub fn spectral_layers(&self) -> Vec<&SpectralConv<T>> {
        self.stages.iter().collect()
    }

    pub fn spectral_layers_mut(&mut self) -> Vec<&mut SpectralConv<T>> {
        self.stages.iter_mut().collect()
    }

    pub fn spectral_layer_names(&self) -> Vec<String> {
        (0..self.stages.len()).map(|i| format!("pconv{i}")).collect()
    }
}

/// Verification score D_v(I, M) = l_f . l_b where l_f embeds the foreground
/// region and l_b the background region with the same encoder weights.
pub fn domain_verify<T: Element>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    enc: &mut DomainEncoder<T>,
    img: Var,
    mask: &Tensor<T>,
    training: bool,
    trainable: bool,
) -> Result<Var> {
    let inv = mask.map(|v| T::one() - v);
    let lf = enc.embed(tape, store, img, mask, training, trainable)?;
    let lb = enc.embed(tape, store, img, &inv, training, trainable)?;
    tape.dot_channels(lf, lb)
}
