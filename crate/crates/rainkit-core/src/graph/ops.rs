//! Elementwise, reduction, mask and channel-broadcast ops.
//!
//! Broadcasting is deliberately narrow: masks are (N,1,H,W) over channels, and
//! per-channel statistics are (N,C,1,1) or (1,C,1,1) over space (and batch).
//! Everything else requires exact shape agreement.

use super::{BackFn, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};
use rayon::prelude::*;

const PAR_MIN: usize = 1 << 16;
const PAR_CHUNK: usize = 1 << 15;

fn ew_unary<T: Element>(x: &[T], f: impl Fn(T) -> T + Sync) -> Vec<T> {
    if x.len() >= PAR_MIN {
        let mut out = vec![T::zero(); x.len()];
        out.par_chunks_mut(PAR_CHUNK)
            .zip(x.par_chunks(PAR_CHUNK))
            .for_each(|(o, i)| {
                for (o, v) in o.iter_mut().zip(i) {
                    *o = f(*v);
                }
            });
        out
    } else {
        x.iter().map(|&v| f(v)).collect()
    }
}

fn ew_binary<T: Element>(a: &[T], b: &[T], f: impl Fn(T, T) -> T + Sync) -> Vec<T> {
    debug_assert_eq!(a.len(), b.len());
    if a.len() >= PAR_MIN {
        let mut out = vec![T::zero(); a.len()];
        out.par_chunks_mut(PAR_CHUNK)
            .zip(a.par_chunks(PAR_CHUNK).zip(b.par_chunks(PAR_CHUNK)))
            .for_each(|(o, (x, y))| {
                for ((o, x), y) in o.iter_mut().zip(x).zip(y) {
                    *o = f(*x, *y);
                }
            });
        out
    } else {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    }
}

/// acc[i] += f(g[i], s[i]) with an auxiliary saved buffer.
fn acc_with<T: Element>(acc: &mut [T], g: &[T], s: &[T], f: impl Fn(T, T) -> T + Sync) {
    if acc.len() >= PAR_MIN {
        acc.par_chunks_mut(PAR_CHUNK)
            .zip(g.par_chunks(PAR_CHUNK).zip(s.par_chunks(PAR_CHUNK)))
            .for_each(|(a, (g, s))| {
                for ((a, g), s) in a.iter_mut().zip(g).zip(s) {
                    *a = *a + f(*g, *s);
                }
            });
    } else {
        for ((a, g), s) in acc.iter_mut().zip(g).zip(s) {
            *a = *a + f(*g, *s);
        }
    }
}

fn acc_plain<T: Element>(acc: &mut [T], g: &[T], f: impl Fn(T) -> T + Sync) {
    if acc.len() >= PAR_MIN {
        acc.par_chunks_mut(PAR_CHUNK)
            .zip(g.par_chunks(PAR_CHUNK))
            .for_each(|(a, g)| {
                for (a, g) in a.iter_mut().zip(g) {
                    *a = *a + f(*g);
                }
            });
    } else {
        for (a, g) in acc.iter_mut().zip(g) {
            *a = *a + f(*g);
        }
    }
}

fn same_shape<T: Element>(op: &'static str, tape: &Tape<T>, a: Var, b: Var) -> Result<Shape> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb {
        return Err(Error::ShapeMismatch {
            op,
            dim: "shape",
            expected: sa.to_string(),
            got: sb.to_string(),
        });
    }
    Ok(sa)
}

/// Check a (N,C,1,1) / (1,C,1,1) statistics operand against data shape `xs`.
fn stat_shape<T: Element>(op: &'static str, tape: &Tape<T>, x: Shape, s: Var) -> Result<Shape> {
    let ss = tape.shape(s);
    if ss.c != x.c || ss.h != 1 || ss.w != 1 || (ss.n != 1 && ss.n != x.n) {
        return Err(Error::ShapeMismatch {
            op,
            dim: "stats operand",
            expected: format!("{n}x{c}x1x1 or 1x{c}x1x1", n = x.n, c = x.c),
            got: ss.to_string(),
        });
    }
    Ok(ss)
}

fn mask_shape<T: Element>(op: &'static str, _tape: &Tape<T>, x: Shape, m: &Tensor<T>) -> Result<()> {
    let ms = m.shape();
    if ms.n != x.n || ms.c != 1 || ms.h != x.h || ms.w != x.w {
        return Err(Error::ShapeMismatch {
            op,
            dim: "mask",
            expected: format!("{}x1x{}x{}", x.n, x.h, x.w),
            got: ms.to_string(),
        });
    }
    Ok(())
}

impl<T: Element> Tape<T> {
    fn unary(
        &mut self,
        op: &'static str,
        x: Var,
        f: impl Fn(T) -> T + Sync,
        // backward factor from (incoming grad, saved value)
        saved_is_output: bool,
        df: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Var {
        let xt = self.value(x).clone();
        let out = Tensor::from_vec(xt.shape(), ew_unary(xt.data(), f)).expect("unary shape");
        out.debug_check_finite(op);
        let saved = if saved_is_output { out.clone() } else { xt };
        let needs = self.needs(x);
        let back: BackFn<T> = Box::new(move |g, sink| {
            sink.acc(x, |gx| acc_with(gx, g, saved.data(), &df));
        });
        self.push(out, needs, Some(back))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary("relu", x, |v| if v > T::zero() { v } else { T::zero() }, false, |g, x| {
            if x > T::zero() {
                g
            } else {
                T::zero()
            }
        })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let a = T::from_f64(slope);
        self.unary(
            "leaky_relu",
            x,
            move |v| if v > T::zero() { v } else { a * v },
            false,
            move |g, x| if x > T::zero() { g } else { a * g },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(
            "sigmoid",
            x,
            |v| T::one() / (T::one() + (-v).exp()),
            true,
            |g, y| g * y * (T::one() - y),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary("tanh", x, |v| v.tanh(), true, |g, y| g * (T::one() - y * y))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary("abs", x, |v| v.abs(), false, |g, x| {
            if x > T::zero() {
                g
            } else if x < T::zero() {
                -g
            } else {
                T::zero()
            }
        })
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary("neg", x, |v| -v, false, |g, _| -g)
    }

    /// 1/x. Caller keeps x away from zero (denominators carry +eps).
    pub fn recip(&mut self, x: Var) -> Var {
        self.unary("recip", x, |v| T::one() / v, true, |g, y| -g * y * y)
    }

    /// sqrt(x + eps); the epsilon keeps the output (and gradient) finite at x=0.
    pub fn sqrt_add(&mut self, x: Var, eps: f64) -> Var {
        let e = T::from_f64(eps);
        let half = T::from_f64(0.5);
        self.unary("sqrt_add", x, move |v| (v + e).sqrt(), true, move |g, y| g * half / y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let k = T::from_f64(c);
        self.unary("scale", x, move |v| k * v, false, move |g, _| k * g)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let k = T::from_f64(c);
        self.unary("add_scalar", x, move |v| v + k, false, |g, _| g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = same_shape("add", self, a, b)?;
        let out = Tensor::from_vec(
            shape,
            ew_binary(self.value(a).data(), self.value(b).data(), |x, y| x + y),
        )?;
        out.debug_check_finite("add");
        let needs = self.needs(a) || self.needs(b);
        let back: BackFn<T> = Box::new(move |g, sink| {
            sink.acc(a, |ga| acc_plain(ga, g, |g| g));
            sink.acc(b, |gb| acc_plain(gb, g, |g| g));
        });
        Ok(self.push(out, needs, Some(back)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = same_shape("sub", self, a, b)?;
        let out = Tensor::from_vec(
            shape,
            ew_binary(self.value(a).data(), self.value(b).data(), |x, y| x - y),
        )?;
        out.debug_check_finite("sub");
        let needs = self.needs(a) || self.needs(b);
        let back: BackFn<T> = Box::new(move |g, sink| {
            sink.acc(a, |ga| acc_plain(ga, g, |g| g));
            sink.acc(b, |gb| acc_plain(gb, g, |g| -g));
        });
        Ok(self.push(out, needs, Some(back)))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = same_shape("mul", self, a, b)?;
        let at = self.value(a).clone();
        let bt = self.value(b).clone();
        let out = Tensor::from_vec(shape, ew_binary(at.data(), bt.data(), |x, y| x * y))?;
        out.debug_check_finite("mul");
        let needs = self.needs(a) || self.needs(b);
        let back: BackFn<T> = Box::new(move |g, sink| {
            sink.acc(a, |ga| acc_with(ga, g, bt.data(), |g, b| g * b));
            sink.acc(b, |gb| acc_with(gb, g, at.data(), |g, a| g * a));
        });
        Ok(self.push(out, needs, Some(back)))
    }

    /// Concatenate along the channel dimension.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                dim: "N/H/W",
                expected: format!("{}x_x{}x{}", sa.n, sa.h, sa.w),
                got: sb.to_string(),
            });
        }
        let shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let plane = sa.plane();
        let (la, lb) = (sa.c * plane, sb.c * plane);
        let mut data = vec![T::zero(); shape.numel()];
        {
            let (at, bt) = (self.value(a).data(), self.value(b).data());
            for n in 0..sa.n {
                let dst = &mut data[n * (la + lb)..][..la + lb];
                dst[..la].copy_from_slice(&at[n * la..][..la]);
                dst[la..].copy_from_slice(&bt[n * lb..][..lb]);
            }
        }
        let out = Tensor::from_vec(shape, data)?;
        let needs = self.needs(a) || self.needs(b);
        let n = sa.n;
        let back: BackFn<T> = Box::new(move |g, sink| {
            sink.acc(a, |ga| {
                for i in 0..n {
                    let src = &g[i * (la + lb)..][..la];
                    for (x, s) in ga[i * la..][..la].iter_mut().zip(src) {
                        *x = *x + *s;
                    }
                }
            });
            sink.acc(b, |gb| {
                for i in 0..n {
                    let src = &g[i * (la + lb) + la..][..lb];
                    for (x, s) in gb[i * lb..][..lb].iter_mut().zip(src) {
                        *x = *x + *s;
                    }
                }
            });
        });
        Ok(self.push(out, needs, Some(back)))
    }

    /// x * mask with the (N,1,H,W) mask broadcast over channels. The mask is a
    /// plain tensor: nothing differentiates through masks.
    pub fn mask_mul(&mut self, x: Var, mask: &Tensor<T>) -> Result<Var> {
        let xs = self.shape(x);
        mask_shape("mask_mul", self, xs, mask)?;
        let plane = xs.plane();
        let xt = self.value(x).clone();
        let mt = mask.clone();
        let mut data = vec![T::zero(); xs.numel()];
        for n in 0..xs.n {
            let mrow = &mt.data()[n * plane..][..plane];
            for c in 0..xs.c {
                let src = &xt.data()[(n * xs.c + c) * plane..][..plane];
                let dst = &mut data[(n * xs.c + c) * plane..][..plane];
                for i in 0..plane {
                    dst[i] = src[i] * mrow[i];
                }
            }
        }
        let out = Tensor::from_vec(xs, data)?;
        let needs = self.needs(x);
        let back: BackFn<T> = Box::new(move |g, sink| {
            sink.acc(x, |gx| {
                for n in 0..xs.n {
                    let mrow = &mt.data()[n * plane..][..plane];
                    for c in 0..xs.c {
                        let off = (n * xs.c + c) * plane;
                        for i in 0..plane {
                            gx[off + i] = gx[off + i] + g[off + i] * mrow[i];
                        }
                    }
                }
            });
        });
        Ok(self.push(out, needs, Some(back)))
    }

    /// mask-select: out = fg where mask==1, bg where mask==0, blend otherwise.
    /// Exact copies on binary masks, so untouched regions survive bit for bit.
    pub fn mask_mix(&mut self, fg: Var, bg: Var, mask: &Tensor<T>) -> Result<Var> {
        let shape = same_shape("mask_mix", self, fg, bg)?;
        mask_shape("mask_mix", self, shape, mask)?;
        let plane = shape.plane();
        let (ft, bt, mt) = (self.value(fg).clone(), self.value(bg).clone(), mask.clone());
        let mut data = vec![T::zero(); shape.numel()];
        for n in 0..shape.n {
            let mrow = &mt.data()[n * plane..][..plane];
            for c in 0..shape.c {
                let off = (n * shape.c + c) * plane;
                let f = &ft.data()[off..off + plane];
                let b = &bt.data()[off..off + plane];
                let dst = &mut data[off..off + plane];
                for i in 0..plane {
                    let m = mrow[i];
                    dst[i] = if m == T::one() {
                        f[i]
                    } else if m == T::zero() {
                        b[i]
                    } else {
                        m * f[i] + (T::one() - m) * b[i]
                    };
                }
            }
        }
        let out = Tensor::from_vec(shape, data)?;
        let needs = self.needs(fg) || self.needs(bg);
        let mt2 = mt.clone();
        let back: BackFn<T> = Box::new(move |g, sink| {
            sink.acc(fg, |gf| {
                for n in 0..shape.n {
                    let mrow = &mt.data()[n * plane..][..plane];
                    for c in 0..shape.c {
                        let off = (n * shape.c + c) * plane;
                        for i in 0..plane {
                            gf[off + i] = gf[off + i] + g[off + i] * mrow[i];
                        }
                    }
                }
            });
            sink.acc(bg, |gb| {
                for n in 0..shape.n {
                    let mrow = &mt2.data()[n * plane..][..plane];
                    for c in 0..shape.c {
                        let off = (n * shape.c + c) * plane;
                        for i in 0..plane {
                            gb[off + i] = gb[off + i] + g[off + i] * (T::one() - mrow[i]);
                        }
                    }
                }
            });
        });
        Ok(self.push(out, needs, Some(back)))
    }

    /// Per-sample per-channel spatial mean: (N,C,H,W) -> (N,C,1,1).
    pub fn spatial_mean(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let plane = xs.plane();
        let inv = T::from_f64(1.0 / plane as f64);
        let xt = self.value(x).clone();
        let mut data = vec![T::zero(); xs.n * xs.c];
        for (i, chunk) in xt.data().chunks_exact(plane).enumerate() {
            let mut acc = T::zero();
            for v in chunk {
                acc = acc + *v;
            }
            data[i] = acc * inv;
        }
        let out = Tensor::from_vec(Shape::new(xs.n, xs.c, 1, 1), data).expect("spatial_mean");
        let needs = self.needs(x);
        let back: BackFn<T> = Box::new(move |g, sink| {
            sink.acc(x, |gx| {
                for (i, chunk) in gx.chunks_exact_mut(plane).enumerate() {
                    let gv = g[i] * inv;
                    for t in chunk {
                        *t = *t + gv;
                    }
                }
            });
        });
        self.push(out, needs, Some(back))
    }

    /// Per-channel mean over batch and space: (N,C,H,W) -> (1,C,1,1).
    pub fn batch_mean(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let plane = xs.plane();
        let inv = T::from_f64(1.0 / (xs.n * plane) as f64);
        let xt = self.value(x).clone();
        let mut data = vec![T::zero(); xs.c];
        for n in 0..xs.n {
            for c in 0..xs.c {
                let chunk = &xt.data()[(n * xs.c + c) * plane..][..plane];
                let mut acc = T::zero();
                for v in chunk {
                    acc = acc + *v;
                }
                data[c] = data[c] + acc;
            }
        }
        for v in &mut data {
            *v = *v * inv;
        }
        let out = Tensor::from_vec(Shape::new(1, xs.c, 1, 1), data).expect("batch_mean");
        let needs = self.needs(x);
        let back: BackFn<T> = Box::new(move |g, sink| {
            sink.acc(x, |gx| {
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let gv = g[c] * inv;
                        for t in &mut gx[(n * xs.c + c) * plane..][..plane] {
                            *t = *t + gv;
                        }
                    }
                }
            });
        });
        self.push(out, needs, Some(back))
    }

    /// Per-sample per-channel mean over mask==1 sites: -> (N,C,1,1).
    ///
    /// Samples with an empty mask produce zeros (the count is clamped to 1);
    /// layers detect that case beforehand and route their fallback.
    pub fn masked_mean(&mut self, x: Var, mask: &Tensor<T>) -> Result<Var> {
        let xs = self.shape(x);
        mask_shape("masked_mean", self, xs, mask)?;
        let plane = xs.plane();
        let counts: Vec<T> = (0..xs.n)
            .map(|n| {
                let mut c = T::zero();
                for v in &mask.data()[n * plane..][..plane] {
                    c = c + *v;
                }
                T::one().max(c)
            })
            .collect();
        let xt = self.value(x).clone();
        let mt = mask.clone();
        let mut data = vec![T::zero(); xs.n * xs.c];
        for n in 0..xs.n {
            let mrow = &mt.data()[n * plane..][..plane];
            for c in 0..xs.c {
                let src = &xt.data()[(n * xs.c + c) * plane..][..plane];
                let mut acc = T::zero();
                for i in 0..plane {
                    acc = acc + src[i] * mrow[i];
                }
                data[n * xs.c + c] = acc / counts[n];
            }
        }
        let out = Tensor::from_vec(Shape::new(xs.n, xs.c, 1, 1), data)?;
        let needs = self.needs(x);
        let back: BackFn<T> = Box::new(move |g, sink| {
            sink.acc(x, |gx| {
                for n in 0..xs.n {
                    let mrow = &mt.data()[n * plane..][..plane];
                    let cn = counts[n];
                    for c in 0..xs.c {
                        let gv = g[n * xs.c + c] / cn;
                        let off = (n * xs.c + c) * plane;
                        for i in 0..plane {
                            gx[off + i] = gx[off + i] + gv * mrow[i];
                        }
                    }
                }
            });
        });
        Ok(self.push(out, needs, Some(back)))
    }

    /// Per-channel mean over mask==1 sites pooled across the batch: -> (1,C,1,1).
    pub fn masked_mean_pooled(&mut self, x: Var, mask: &Tensor<T>) -> Result<Var> {
        let xs = self.shape(x);
        mask_shape("masked_mean_pooled", self, xs, mask)?;
        let plane = xs.plane();
        let mut count = T::zero();
        for v in mask.data() {
            count = count + *v;
        }
        let count = T::one().max(count);
        let xt = self.value(x).clone();
        let mt = mask.clone();
        let mut data = vec![T::zero(); xs.c];
        for n in 0..xs.n {
            let mrow = &mt.data()[n * plane..][..plane];
            for c in 0..xs.c {
                let src = &xt.data()[(n * xs.c + c) * plane..][..plane];
                let mut acc = T::zero();
                for i in 0..plane {
                    acc = acc + src[i] * mrow[i];
                }
                data[c] = data[c] + acc;
            }
        }
        for v in &mut data {
            *v = *v / count;
        }
        let out = Tensor::from_vec(Shape::new(1, xs.c, 1, 1), data)?;
        let needs = self.needs(x);
        let back: BackFn<T> = Box::new(move |g, sink| {
            sink.acc(x, |gx| {
                for n in 0..xs.n {
                    let mrow = &mt.data()[n * plane..][..plane];
                    for c in 0..xs.c {
                        let gv = g[c] / count;
                        let off = (n * xs.c + c) * plane;
                        for i in 0..plane {
                            gx[off + i] = gx[off + i] + gv * mrow[i];
                        }
                    }
                }
            });
        });
        Ok(self.push(out, needs, Some(back)))
    }

    /// Mean over every element: -> (1,1,1,1).
    pub fn mean_all(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let inv = T::from_f64(1.0 / xs.numel() as f64);
        let xt = self.value(x).clone();
        let mut acc = T::zero();
        for v in xt.data() {
            acc = acc + *v;
        }
        let out = Tensor::scalar(acc * inv);
        let needs = self.needs(x);
        let back: BackFn<T> = Box::new(move |g, sink| {
            let gv = g[0] * inv;
            sink.acc(x, |gx| {
                for t in gx {
                    *t = *t + gv;
                }
            });
        });
        self.push(out, needs, Some(back))
    }

    /// Sum over every element: -> (1,1,1,1).
    pub fn sum_all(&mut self, x: Var) -> Var {
        let xt = self.value(x).clone();
        let mut acc = T::zero();
        for v in xt.data() {
            acc = acc + *v;
        }
        let out = Tensor::scalar(acc);
        let needs = self.needs(x);
        let back: BackFn<T> = Box::new(move |g, sink| {
            let gv = g[0];
            sink.acc(x, |gx| {
                for t in gx {
                    *t = *t + gv;
                }
            });
        });
        self.push(out, needs, Some(back))
    }

    /// x * s with s of shape (N,C,1,1) or (1,C,1,1) broadcast over space
    /// (and batch in the second form).
    pub fn ch_mul(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ss = stat_shape("ch_mul", self, xs, s)?;
        let plane = xs.plane();
        let shared = ss.n == 1;
        let xt = self.value(x).clone();
        let st = self.value(s).clone();
        let mut data = vec![T::zero(); xs.numel()];
        for n in 0..xs.n {
            for c in 0..xs.c {
                let sv = st.data()[if shared { c } else { n * xs.c + c }];
                let off = (n * xs.c + c) * plane;
                let src = &xt.data()[off..off + plane];
                for i in 0..plane {
                    data[off + i] = src[i] * sv;
                }
            }
        }
        let out = Tensor::from_vec(xs, data)?;
        out.debug_check_finite("ch_mul");
        let needs = self.needs(x) || self.needs(s);
        let st2 = st.clone();
        let back: BackFn<T> = Box::new(move |g, sink| {
            sink.acc(x, |gx| {
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let sv = st2.data()[if shared { c } else { n * xs.c + c }];
                        let off = (n * xs.c + c) * plane;
                        for i in 0..plane {
                            gx[off + i] = gx[off + i] + g[off + i] * sv;
                        }
                    }
                }
            });
            sink.acc(s, |gs| {
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let off = (n * xs.c + c) * plane;
                        let src = &xt.data()[off..off + plane];
                        let mut acc = T::zero();
                        for i in 0..plane {
                            acc = acc + g[off + i] * src[i];
                        }
                        let idx = if shared { c } else { n * xs.c + c };
                        gs[idx] = gs[idx] + acc;
                    }
                }
            });
        });
        Ok(self.push(out, needs, Some(back)))
    }

    /// x + s with the same broadcast rules as [`Tape::ch_mul`].
    pub fn ch_add(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ss = stat_shape("ch_add", self, xs, s)?;
        let plane = xs.plane();
        let shared = ss.n == 1;
        let xt = self.value(x).clone();
        let st = self.value(s).clone();
        let mut data = vec![T::zero(); xs.numel()];
        for n in 0..xs.n {
            for c in 0..xs.c {
                let sv = st.data()[if shared { c } else { n * xs.c + c }];
                let off = (n * xs.c + c) * plane;
                let src = &xt.data()[off..off + plane];
                for i in 0..plane {
                    data[off + i] = src[i] + sv;
                }
            }
        }
        let out = Tensor::from_vec(xs, data)?;
        out.debug_check_finite("ch_add");
        let needs = self.needs(x) || self.needs(s);
        let back: BackFn<T> = Box::new(move |g, sink| {
            sink.acc(x, |gx| acc_plain(gx, g, |g| g));
            sink.acc(s, |gs| {
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let off = (n * xs.c + c) * plane;
                        let mut acc = T::zero();
                        for i in 0..plane {
                            acc = acc + g[off + i];
                        }
                        let idx = if shared { c } else { n * xs.c + c };
                        gs[idx] = gs[idx] + acc;
                    }
                }
            });
        });
        Ok(self.push(out, needs, Some(back)))
    }

    /// Channel inner product of two (N,C,1,1) embeddings: -> (N,1,1,1).
    pub fn dot_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = same_shape("dot_channels", self, a, b)?;
        if shape.h != 1 || shape.w != 1 {
            return Err(Error::invalid(
                "dot_channels",
                format!("expects (N,C,1,1) embeddings, got {shape}"),
            ));
        }
        let at = self.value(a).clone();
        let bt = self.value(b).clone();
        let mut data = vec![T::zero(); shape.n];
        for n in 0..shape.n {
            let mut acc = T::zero();
            for c in 0..shape.c {
                acc = acc + at.data()[n * shape.c + c] * bt.data()[n * shape.c + c];
            }
            data[n] = acc;
        }
        let out = Tensor::from_vec(Shape::new(shape.n, 1, 1, 1), data)?;
        let needs = self.needs(a) || self.needs(b);
        let back: BackFn<T> = Box::new(move |g, sink| {
            sink.acc(a, |ga| {
                for n in 0..shape.n {
                    for c in 0..shape.c {
                        ga[n * shape.c + c] =
                            ga[n * shape.c + c] + g[n] * bt.data()[n * shape.c + c];
                    }
                }
            });
            sink.acc(b, |gb| {
                for n in 0..shape.n {
                    for c in 0..shape.c {
                        gb[n * shape.c + c] =
                            gb[n * shape.c + c] + g[n] * at.data()[n * shape.c + c];
                    }
                }
            });
        });
        Ok(self.push(out, needs, Some(back)))
    }

    /// Divide a weight by its power-iteration singular-value estimate
    /// sigma = u^T W v (+ eps guard). u and v are held constant; the gradient
    /// still flows through sigma's dependence on W:
    /// dL/dW = (g - <g, W_sn> u v^T) / (sigma + eps).
    pub fn spectral_scale(&mut self, w: Var, u: &[T], v: &[T]) -> Result<Var> {
        let ws = self.shape(w);
        let rows = ws.n;
        let cols = ws.c * ws.h * ws.w;
        if u.len() != rows || v.len() != cols {
            return Err(Error::ShapeMismatch {
                op: "spectral_scale",
                dim: "singular vectors",
                expected: format!("u:{rows} v:{cols}"),
                got: format!("u:{} v:{}", u.len(), v.len()),
            });
        }
        let wt = self.value(w).clone();
        let mut sigma = T::zero();
        for r in 0..rows {
            let row = &wt.data()[r * cols..][..cols];
            let mut acc = T::zero();
            for c in 0..cols {
                acc = acc + row[c] * v[c];
            }
            sigma = sigma + u[r] * acc;
        }
        let denom = sigma + T::from_f64(1e-12);
        let out = wt.map(|x| x / denom);
        out.debug_check_finite("spectral_scale");
        let needs = self.needs(w);
        let (uv, vv) = (u.to_vec(), v.to_vec());
        let out_saved = out.clone();
        let back: BackFn<T> = Box::new(move |g, sink| {
            let mut gdot = T::zero();
            for (gi, oi) in g.iter().zip(out_saved.data()) {
                gdot = gdot + *gi * *oi;
            }
            sink.acc(w, |gw| {
                for r in 0..rows {
                    for c in 0..cols {
                        let i = r * cols + c;
                        gw[i] = gw[i] + (g[i] - gdot * uv[r] * vv[c]) / denom;
                    }
                }
            });
        });
        Ok(self.push(out, needs, Some(back)))
    }
}
