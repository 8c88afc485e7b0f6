//! Spectrally normalized convolution for discriminators. The largest singular
//! value of the (C_out x C_in*k*k) weight matrix is tracked by one power
//! iteration per training forward; the weight enters the graph divided by it.

use crate::error::Result;
use crate::graph::{Tape, Var};
use crate::optim::{init_bias, init_conv_weight, ParamId, ParamStore};
use crate::tensor::{Element, Shape, Tensor};
use rand_chacha::ChaCha8Rng;

pub struct SpectralConv<T: Element> {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
    u: Vec<T>,
}

fn normalize<T: Element>(v: &mut [T]) {
    let mut sq = T::zero();
    for x in v.iter() {
        sq = sq + *x * *x;
    }
    let norm = sq.sqrt() + T::from_f64(1e-12);
    for x in v.iter_mut() {
        *x = *x / norm;
    }
}

/// One step of power iteration on the matrix view of `w`: refreshes `u` and
/// returns the right vector `v = normalize(W^T u_prev)`.
fn power_iterate<T: Element>(w: &Tensor<T>, u: &mut [T], update_u: bool) -> Vec<T> {
    let shape = w.shape();
    let rows = shape.n;
    let cols = shape.c * shape.h * shape.w;
    let mut v = vec![T::zero(); cols];
    for r in 0..rows {
        let wr = &w.data()[r * cols..][..cols];
        let ur = u[r];
        for c in 0..cols {
            v[c] = v[c] + wr[c] * ur;
        }
    }
    normalize(&mut v);
    if update_u {
        let mut nu = vec![T::zero(); rows];
        for r in 0..rows {
            let wr = &w.data()[r * cols..][..cols];
            let mut acc = T::zero();
            for c in 0..cols {
                acc = acc + wr[c] * v[c];
            }
            nu[r] = acc;
        }
        normalize(&mut nu);
        u.copy_from_slice(&nu);
    }
    v
}

impl<T: Element> SpectralConv<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        store: &mut ParamStore<T>,
        name: &str,
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = init_conv_weight(store, format!("{name}.w"), Shape::new(c_out, c_in, k, k), rng);
        let bias = init_bias(store, format!("{name}.b"), c_out);
        let mut u: Vec<T> = Tensor::<T>::rand_normal(Shape::new(1, 1, 1, c_out), 0.0, 1.0, rng)
            .data()
            .to_vec();
        normalize(&mut u);
        SpectralConv { weight, bias, stride, pad, u }
    }

    /// Lease the weight and bias onto the tape with the weight spectrally
    /// normalized. Training mode performs one power iteration (persisting the
    /// left vector) before normalizing.
    pub fn normalized_params(
        &mut self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        training: bool,
        trainable: bool,
    ) -> Result<(Var, Var)> {
        let v = power_iterate(store.value(self.weight), &mut self.u, training);
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
        let w_sn = tape.spectral_scale(w, &self.u, &v)?;
        Ok((w_sn, b))
    }

    /// Spectrally normalized conv forward.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        training: bool,
        trainable: bool,
    ) -> Result<Var> {
        let (w_sn, b) = self.normalized_params(tape, store, training, trainable)?;
        tape.conv2d(x, w_sn, Some(b), self.stride, self.pad)
    }

    /// Current singular-value estimate u^T W v (for tests and diagnostics).
    pub fn sigma_estimate(&self, store: &ParamStore<T>) -> T {
        let w = store.value(self.weight);
        let mut u = self.u.clone();
        let v = power_iterate(w, &mut u, false);
        let shape = w.shape();
        let cols = shape.c * shape.h * shape.w;
        let mut sigma = T::zero();
        for r in 0..shape.n {
            let wr = &w.data()[r * cols..][..cols];
            let mut acc = T::zero();
            for c in 0..cols {
                acc = acc + wr[c] * v[c];
            }
            sigma = sigma + u[r] * acc;
        }
        sigma
    }

    /// Run `iters` power iterations without touching the graph.
    pub fn warm_up(&mut self, store: &ParamStore<T>, iters: usize) {
        for _ in 0..iters {
            power_iterate(store.value(self.weight), &mut self.u, true);
        }
    }

    /// True operator norm of the normalized weight W / sigma_estimate, found
    /// by an independent, fresh power iteration. Converged estimates give 1.
    pub fn normalized_operator_norm(&self, store: &ParamStore<T>, iters: usize) -> T {
        let sigma = self.sigma_estimate(store) + T::from_f64(1e-12);
        let w_sn = store.value(self.weight).map(|v| v / sigma);
        let rows = w_sn.shape().n;
        let mut u = vec![T::one(); rows];
        normalize(&mut u);
        for _ in 0..iters {
            power_iterate(&w_sn, &mut u, true);
        }
        let v = power_iterate(&w_sn, &mut u.clone(), false);
        let cols = w_sn.shape().c * w_sn.shape().h * w_sn.shape().w;
        let mut s = T::zero();
        for r in 0..rows {
            let wr = &w_sn.data()[r * cols..][..cols];
            let mut acc = T::zero();
            for c in 0..cols {
                acc = acc + wr[c] * v[c];
            }
            s = s + u[r] * acc;
        }
        s
    }

    pub fn u_state(&self) -> &[T] {
        &self.u
    }

    pub fn set_u_state(&mut self, u: &[T]) {
        assert_eq!(self.u.len(), u.len(), "spectral u length");
        self.u.copy_from_slice(u);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_finds_dominant_singular_value() {
        // diag(3, 1) as a (2, 2, 1, 1) "conv" weight: sigma -> 3.
        let mut rng = crate::rng::rng_from(31, "sn", 0);
        let mut store = ParamStore::<f32>::new();
        let mut sc = SpectralConv::build(&mut store, "d", 2, 2, 1, 1, 0, &mut rng);
        store.set_value(
            sc.weight,
            Tensor::from_vec(Shape::new(2, 2, 1, 1), vec![3.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        sc.warm_up(&store, 20);
        let sigma = sc.sigma_estimate(&store);
        assert!((sigma - 3.0).abs() < 1e-3, "sigma = {sigma}");
    }

    #[test]
    fn orthogonal_weight_is_left_unchanged() {
        let mut rng = crate::rng::rng_from(32, "sn2", 0);
        let mut store = ParamStore::<f32>::new();
        let mut sc = SpectralConv::build(&mut store, "d", 2, 2, 1, 1, 0, &mut rng);
        let rot = vec![0.6, -0.8, 0.8, 0.6]; // rotation matrix, sigma = 1
        store.set_value(sc.weight, Tensor::from_vec(Shape::new(2, 2, 1, 1), rot.clone()).unwrap());
        sc.warm_up(&store, 30);
        let mut tape = Tape::<f32>::new(false);
        let x = tape.leaf(Tensor::ones(Shape::new(1, 2, 1, 1)));
        let y = sc.forward(&mut tape, &store, x, true, false).unwrap();
        // y = W_sn x + b with b = 0; compare against W x
        let expect = [rot[0] + rot[1], rot[2] + rot[3]];
        for (a, b) in tape.value(y).data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn scaling_weight_leaves_normalized_weight_unchanged() {
        let mut rng = crate::rng::rng_from(33, "sn3", 0);
        let mut store = ParamStore::<f32>::new();
        let mut sc = SpectralConv::build(&mut store, "d", 3, 2, 3, 1, 1, &mut rng);
        sc.warm_up(&store, 30);
        let mut tape = Tape::<f32>::new(false);
        let xin = Tensor::rand_uniform(Shape::new(1, 2, 5, 5), -1.0, 1.0, &mut rng);
        let x = tape.leaf(xin.clone());
        let y1 = sc.forward(&mut tape, &store, x, false, false).unwrap();
        let y1v = tape.value(y1).clone();

        let scaled = store.value(sc.weight).map(|v| v * 10.0);
        store.set_value(sc.weight, scaled);
        sc.warm_up(&store, 30);
        let mut tape2 = Tape::<f32>::new(false);
        let x2 = tape2.leaf(xin);
        let y2 = sc.forward(&mut tape2, &store, x2, false, false).unwrap();
        for (a, b) in y1v.data().iter().zip(tape2.value(y2).data()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }
}
