//! Skip-connection attention: gate the concatenated encoder/decoder features
//! with a sigmoid of a 1x1 convolution over themselves.

use crate::error::Result;
use crate::graph::{Tape, Var};
use crate::optim::{init_bias, init_conv_weight, ParamId, ParamStore};
use crate::tensor::{Element, Shape};
use rand_chacha::ChaCha8Rng;

pub struct AttentionBlock<T: Element> {
    pub weight: ParamId,
    pub bias: ParamId,
    channels: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Element> AttentionBlock<T> {
    /// `channels` is the concatenated channel count (encoder + decoder).
    pub fn build(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = init_conv_weight(
            store,
            format!("{name}.w"),
            Shape::new(channels, channels, 1, 1),
            rng,
        );
        let bias = init_bias(store, format!("{name}.b"), channels);
        AttentionBlock { weight, bias, channels, _marker: std::marker::PhantomData }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// F_in = concat(enc, dec); W = sigmoid(conv1x1(F_in)); out = W o F_in.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        enc: Var,
        dec: Var,
        trainable: bool,
    ) -> Result<Var> {
        let f_in = tape.concat_channels(enc, dec)?;
        let w = if trainable {
            tape.param(store, self.weight)
        } else {
            tape.param_frozen(store, self.weight)
        };
        let b = if trainable {
            tape.param(store, self.bias)
        } else {
            tape.param_frozen(store, self.bias)
        };
        let pre = tape.conv2d(f_in, w, Some(b), 1, 0)?;
        let gate = tape.sigmoid(pre);
        tape.mul(gate, f_in)
    }
}
