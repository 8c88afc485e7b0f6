//! Central finite-difference gradient verification, run at f64 where the
//! differences are trustworthy. The CLI's `gradcheck` subcommand and the
//! acceptance suite both drive [`run_suites`]; unit tests reuse [`check_scalar_fn`].

use crate::error::Result;
use crate::graph::{Tape, Var};
use crate::tensor::{Shape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Outcome of one checked op.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub op: String,
    pub max_rel_err: f64,
}

impl CheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < tol
    }
}

pub const GRADCHECK_TOL: f64 = 1e-3;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

/// Verify analytic gradients of a scalar-valued function of several tensors.
///
/// `f` rebuilds the graph from leaf vars each call and returns a scalar var.
/// `probes` random coordinates per input are perturbed centrally with step
/// `h`; returns the max relative error across all probes.
pub fn check_scalar_fn(
    inputs: &[Tensor<f64>],
    probes: usize,
    h: f64,
    rng: &mut ChaCha8Rng,
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let eval = |tensors: &[Tensor<f64>]| -> Result<(f64, Vec<Option<Tensor<f64>>>)> {
        let mut tape = Tape::new(true);
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let loss = tape.value(out).data()[0];
        tape.backward(out)?;
        let grads = vars.iter().map(|v| tape.grad_of(*v)).collect();
        Ok((loss, grads))
    };

    let (_, grads) = eval(inputs)?;
    let mut max_err: f64 = 0.0;
    for (idx, input) in inputs.iter().enumerate() {
        let Some(g) = &grads[idx] else { continue };
        let numel = input.shape().numel();
        let n_probes = probes.min(numel);
        for _ in 0..n_probes {
            let coord = rng.gen_range(0..numel);
            let step = h * input.data()[coord].abs().max(1.0);
            let mut plus = inputs.to_vec();
            let mut pd = plus[idx].clone();
            pd.make_mut()[coord] += step;
            plus[idx] = pd;
            let mut minus = inputs.to_vec();
            let mut md = minus[idx].clone();
            md.make_mut()[coord] -= step;
            minus[idx] = md;
            let (lp, _) = {
                // forward only: rebuild without backward for speed
                let mut tape = Tape::new(false);
                let vars: Vec<Var> = plus.iter().map(|t| tape.leaf(t.clone())).collect();
                let out = f(&mut tape, &vars)?;
                (tape.value(out).data()[0], ())
            };
            let (lm, _) = {
                let mut tape = Tape::new(false);
                let vars: Vec<Var> = minus.iter().map(|t| tape.leaf(t.clone())).collect();
                let out = f(&mut tape, &vars)?;
                (tape.value(out).data()[0], ())
            };
            let numeric = (lp - lm) / (2.0 * step);
            let analytic = g.data()[coord];
            max_err = max_err.max(rel_err(analytic, numeric));
        }
    }
    Ok(max_err)
}

/// Project a tensor-valued graph output to a scalar with a fixed random
/// weighting, so full Jacobians reduce to one backward pass.
pub fn project_to_scalar(
    tape: &mut Tape<f64>,
    out: Var,
    rng_seed: u64,
) -> Result<Var> {
    let shape = tape.value(out).shape();
    let mut rng = crate::rng::rng_from(rng_seed, "projection", 0);
    let r = Tensor::rand_uniform(shape, -1.0, 1.0, &mut rng);
    let rv = tape.constant(r);
    let prod = tape.mul(out, rv)?;
    Ok(tape.sum_all(prod))
}

/// Random tensor bounded away from activation kinks (|x| >= margin).
pub fn rand_away_from_zero(
    shape: Shape,
    margin: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<f64> {
    let t = Tensor::<f64>::rand_uniform(shape, -1.0, 1.0, rng);
    t.map(|v| {
        if v.abs() < margin {
            if v >= 0.0 {
                margin
            } else {
                -margin
            }
        } else {
            v
        }
    })
}

/// Random binary mask with foreground ratio roughly in [lo, hi].
pub fn rand_mask(
    n: usize,
    h: usize,
    w: usize,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<f64> {
    let shape = Shape::new(n, 1, h, w);
    let plane = h * w;
    let mut data = vec![0.0f64; shape.numel()];
    for s in 0..n {
        let ratio = rng.gen_range(lo..hi);
        let target = ((plane as f64 * ratio).round() as usize).clamp(1, plane - 1);
        // deterministic scatter: fill a random-walk blob until target reached
        let mut placed = 0usize;
        let mut y = rng.gen_range(0..h);
        let mut x = rng.gen_range(0..w);
        while placed < target {
            let i = s * plane + y * w + x;
            if data[i] == 0.0 {
                data[i] = 1.0;
                placed += 1;
            }
            match rng.gen_range(0..4) {
                0 => y = (y + 1) % h,
                1 => y = (y + h - 1) % h,
                2 => x = (x + 1) % w,
                _ => x = (x + w - 1) % w,
            }
        }
    }
    Tensor::from_vec(shape, data).unwrap()
}

/// Registered op groups for the verification harness / CLI.
pub const GROUPS: [&str; 4] = ["tensor", "region_norm", "model", "losses"];

type CheckFn = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>;

fn registry(group: &str) -> Vec<(&'static str, CheckFn)> {
    let mut ops: Vec<(&'static str, CheckFn)> = Vec::new();
    match group {
        "tensor" => {
            ops.push(("conv2d", Box::new(|rng| {
                let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 6, 6), -1.0, 1.0, rng);
                let w = Tensor::<f64>::rand_uniform(Shape::new(4, 3, 3, 3), -0.6, 0.6, rng);
                let b = Tensor::<f64>::rand_uniform(Shape::new(1, 4, 1, 1), -0.3, 0.3, rng);
                check_scalar_fn(&[x, w, b], 20, 1e-6, rng, &|t, v| {
                    let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
                    project_to_scalar(t, y, 11)
                })
            })));
            ops.push(("conv_transpose2d", Box::new(|rng| {
                let x = Tensor::<f64>::rand_uniform(Shape::new(2, 4, 4, 4), -1.0, 1.0, rng);
                let w = Tensor::<f64>::rand_uniform(Shape::new(4, 3, 4, 4), -0.6, 0.6, rng);
                let b = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 1, 1), -0.3, 0.3, rng);
                check_scalar_fn(&[x, w, b], 20, 1e-6, rng, &|t, v| {
                    let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)?;
                    project_to_scalar(t, y, 12)
                })
            })));
            ops.push(("leaky_relu", Box::new(|rng| {
                let x = rand_away_from_zero(Shape::new(2, 3, 5, 5), 0.05, rng);
                check_scalar_fn(&[x], 20, 1e-6, rng, &|t, v| {
                    let y = t.leaky_relu(v[0], 0.2);
                    project_to_scalar(t, y, 13)
                })
            })));
            ops.push(("relu", Box::new(|rng| {
                let x = rand_away_from_zero(Shape::new(2, 3, 5, 5), 0.05, rng);
                check_scalar_fn(&[x], 20, 1e-6, rng, &|t, v| {
                    let y = t.relu(v[0]);
                    project_to_scalar(t, y, 14)
                })
            })));
            ops.push(("sigmoid", Box::new(|rng| {
                let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 5, 5), -3.0, 3.0, rng);
                check_scalar_fn(&[x], 20, 1e-6, rng, &|t, v| {
                    let y = t.sigmoid(v[0]);
                    project_to_scalar(t, y, 15)
                })
            })));
            ops.push(("tanh", Box::new(|rng| {
                let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 5, 5), -2.0, 2.0, rng);
                check_scalar_fn(&[x], 20, 1e-6, rng, &|t, v| {
                    let y = t.tanh(v[0]);
                    project_to_scalar(t, y, 16)
                })
            })));
            ops.push(("add_sub_mul", Box::new(|rng| {
                let a = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 4, 4), -1.0, 1.0, rng);
                let b = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 4, 4), -1.0, 1.0, rng);
                check_scalar_fn(&[a, b], 16, 1e-6, rng, &|t, v| {
                    let s = t.add(v[0], v[1])?;
                    let d = t.sub(s, v[1])?;
                    let m = t.mul(d, v[1])?;
                    project_to_scalar(t, m, 17)
                })
            })));
            ops.push(("concat_channels", Box::new(|rng| {
                let a = Tensor::<f64>::rand_uniform(Shape::new(2, 2, 4, 4), -1.0, 1.0, rng);
                let b = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 4, 4), -1.0, 1.0, rng);
                check_scalar_fn(&[a, b], 16, 1e-6, rng, &|t, v| {
                    let y = t.concat_channels(v[0], v[1])?;
                    project_to_scalar(t, y, 18)
                })
            })));
            ops.push(("mask_mix", Box::new(|rng| {
                let a = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 6, 6), -1.0, 1.0, rng);
                let b = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 6, 6), -1.0, 1.0, rng);
                let m = rand_mask(1, 6, 6, 0.2, 0.6, rng);
                check_scalar_fn(&[a, b], 16, 1e-6, rng, &move |t, v| {
                    let y = t.mask_mix(v[0], v[1], &m)?;
                    project_to_scalar(t, y, 19)
                })
            })));
            ops.push(("masked_mean", Box::new(|rng| {
                let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 6, 6), -1.0, 1.0, rng);
                let m = rand_mask(2, 6, 6, 0.2, 0.6, rng);
                check_scalar_fn(&[x], 16, 1e-6, rng, &move |t, v| {
                    let y = t.masked_mean(v[0], &m)?;
                    project_to_scalar(t, y, 20)
                })
            })));
            ops.push(("channel_broadcasts", Box::new(|rng| {
                let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 4, 4), -1.0, 1.0, rng);
                let s = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 1, 1), 0.5, 1.5, rng);
                check_scalar_fn(&[x, s], 16, 1e-6, rng, &|t, v| {
                    let m = t.spatial_mean(v[0]);
                    let c = t.ch_mul(v[0], v[1])?;
                    let c2 = t.ch_add(c, m)?;
                    project_to_scalar(t, c2, 21)
                })
            })));
            ops.push(("reductions", Box::new(|rng| {
                let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 4, 4), -1.0, 1.0, rng);
                check_scalar_fn(&[x], 16, 1e-6, rng, &|t, v| {
                    let bm = t.batch_mean(v[0]);
                    let s = t.sum_all(bm);
                    let m = t.mean_all(v[0]);
                    t.add(s, m)
                })
            })));
            ops.push(("dot_channels", Box::new(|rng| {
                let a = Tensor::<f64>::rand_uniform(Shape::new(3, 5, 1, 1), -1.0, 1.0, rng);
                let b = Tensor::<f64>::rand_uniform(Shape::new(3, 5, 1, 1), -1.0, 1.0, rng);
                check_scalar_fn(&[a, b], 16, 1e-6, rng, &|t, v| {
                    let y = t.dot_channels(v[0], v[1])?;
                    project_to_scalar(t, y, 22)
                })
            })));
            ops.push(("spectral_scale", Box::new(|rng| {
                let w = Tensor::<f64>::rand_uniform(Shape::new(4, 3, 3, 3), -0.5, 0.5, rng);
                let mut u: Vec<f64> = (0..4).map(|_| rand::Rng::gen_range(rng, -1.0..1.0)).collect();
                let un = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                u.iter_mut().for_each(|v| *v /= un);
                let mut v: Vec<f64> = (0..27).map(|_| rand::Rng::gen_range(rng, -1.0..1.0)).collect();
                let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= vn);
                check_scalar_fn(&[w], 20, 1e-6, rng, &move |t, vars| {
                    let y = t.spectral_scale(vars[0], &u, &v)?;
                    project_to_scalar(t, y, 23)
                })
            })));
        }
        "region_norm" => {
            let opts = crate::norm::NormOptions::default();
            ops.push(("instance_norm", Box::new(|rng| {
                let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 6, 6), -1.5, 1.5, rng);
                check_scalar_fn(&[x], 20, 1e-6, rng, &|t, v| {
                    let y = crate::norm::instance_norm(t, v[0], 1e-5, None)?;
                    project_to_scalar(t, y, 31)
                })
            })));
            ops.push(("instance_norm_affine", Box::new(|rng| {
                let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 6, 6), -1.5, 1.5, rng);
                let s = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 1, 1), 0.5, 1.5, rng);
                let b = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 1, 1), -0.5, 0.5, rng);
                check_scalar_fn(&[x, s, b], 20, 1e-6, rng, &|t, v| {
                    let y = crate::norm::instance_norm(t, v[0], 1e-5, Some((v[1], v[2])))?;
                    project_to_scalar(t, y, 32)
                })
            })));
            ops.push(("batch_norm_train", Box::new(|rng| {
                let x = Tensor::<f64>::rand_uniform(Shape::new(3, 2, 5, 5), -1.5, 1.5, rng);
                check_scalar_fn(&[x], 20, 1e-6, rng, &|t, v| {
                    let mut running = crate::norm::RunningStats::new(2);
                    let y = crate::norm::batch_norm(t, v[0], 1e-5, None, &mut running, 0.1, true)?;
                    project_to_scalar(t, y, 33)
                })
            })));
            let o1 = opts;
            ops.push(("region_norm_rn", Box::new(move |rng| {
                let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 6, 6), -1.5, 1.5, rng);
                let m = rand_mask(2, 6, 6, 0.25, 0.6, rng);
                check_scalar_fn(&[x], 20, 1e-6, rng, &move |t, v| {
                    let y = crate::norm::region_norm_rn(t, v[0], &m, o1.eps, None)?;
                    project_to_scalar(t, y, 34)
                })
            })));
            let o2 = opts;
            ops.push(("rain_forward", Box::new(move |rng| {
                let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 8, 8), -1.5, 1.5, rng);
                let m = rand_mask(2, 8, 8, 0.2, 0.5, rng);
                check_scalar_fn(&[x], 24, 1e-6, rng, &move |t, v| {
                    let y = crate::norm::rain(t, v[0], &m, &o2)?;
                    project_to_scalar(t, y, 35)
                })
            })));
            ops.push(("rain_literal_variance", Box::new(|rng| {
                let o = crate::norm::NormOptions { literal_variance: true, ..Default::default() };
                let x = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 8, 8), -1.5, 1.5, rng);
                let m = rand_mask(1, 8, 8, 0.25, 0.5, rng);
                check_scalar_fn(&[x], 20, 1e-6, rng, &move |t, v| {
                    let y = crate::norm::rain(t, v[0], &m, &o)?;
                    project_to_scalar(t, y, 36)
                })
            })));
            ops.push(("rain_literal_roles", Box::new(|rng| {
                let o = crate::norm::NormOptions { literal_roles: true, ..Default::default() };
                let x = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 8, 8), -1.5, 1.5, rng);
                let m = rand_mask(1, 8, 8, 0.25, 0.5, rng);
                check_scalar_fn(&[x], 20, 1e-6, rng, &move |t, v| {
                    let y = crate::norm::rain(t, v[0], &m, &o)?;
                    project_to_scalar(t, y, 37)
                })
            })));
        }
        "model" => {
            ops.push(("attention_block", Box::new(|rng| {
                let mut store = crate::optim::ParamStore::<f64>::new();
                let block = crate::model::AttentionBlock::build(&mut store, "a", 4, rng);
                let enc = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 4, 4), -1.0, 1.0, rng);
                let dec = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 4, 4), -1.0, 1.0, rng);
                check_scalar_fn(&[enc, dec], 20, 1e-6, rng, &move |t, v| {
                    let y = block.forward(t, &store, v[0], v[1], false)?;
                    project_to_scalar(t, y, 41)
                })
            })));
            ops.push(("partial_conv", Box::new(|rng| {
                let x = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 6, 6), -1.0, 1.0, rng);
                let w = Tensor::<f64>::rand_uniform(Shape::new(3, 2, 3, 3), -0.5, 0.5, rng);
                let b = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 1, 1), -0.3, 0.3, rng);
                let m = rand_mask(1, 6, 6, 0.3, 0.6, rng);
                check_scalar_fn(&[x, w, b], 20, 1e-6, rng, &move |t, v| {
                    let (y, _) = crate::model::partial_conv(t, v[0], &m, v[1], v[2], 2, 1)?;
                    project_to_scalar(t, y, 42)
                })
            })));
            ops.push(("domain_verify", Box::new(|rng| {
                let mut store = crate::optim::ParamStore::<f64>::new();
                let enc = crate::model::DomainEncoder::build(&mut store, "v", 4, 3, rng);
                let enc = std::cell::RefCell::new(enc);
                let img = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 16, 16), -1.0, 1.0, rng);
                let m = rand_mask(1, 16, 16, 0.2, 0.5, rng);
                check_scalar_fn(&[img], 16, 1e-6, rng, &move |t, v| {
                    let mut e = enc.borrow_mut();
                    let y = crate::model::domain_verify(t, &store, &mut e, v[0], &m, false, false)?;
                    project_to_scalar(t, y, 43)
                })
            })));
            ops.push(("generator_end_to_end", Box::new(|rng| {
                // small net, gradients w.r.t. the composite input
                let mut store = crate::optim::ParamStore::<f64>::new();
                let cfg = crate::model::GeneratorConfig {
                    depth: 3,
                    base_channels: 4,
                    max_mult: 4,
                    input_size: 16,
                    attention_blocks: 2,
                    plan: crate::model::NormPlan::named("RAIN-Decoder", 3)?,
                    norm: crate::norm::NormOptions::default(),
                };
                let gen = crate::model::Generator::build(cfg, &mut store, rng)?;
                let gen = std::cell::RefCell::new(gen);
                let comp = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 16, 16), -0.9, 0.9, rng);
                let m = rand_mask(1, 16, 16, 0.25, 0.5, rng);
                let target = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 16, 16), -0.9, 0.9, rng);
                check_scalar_fn(&[comp], 12, 1e-6, rng, &move |t, v| {
                    // drive through an L1 head so the scalar depends on all pixels
                    let mut g = gen.borrow_mut();
                    let y = g.forward_from_var(t, &store, v[0], &m, false, false)?;
                    let tgt = t.constant(target.clone());
                    crate::loss::rec_loss(t, y, tgt)
                })
            })));
        }
        "losses" => {
            ops.push(("rec_loss", Box::new(|rng| {
                let a = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 5, 5), -1.0, 1.0, rng);
                // keep |a-b| away from the kink
                let b = a.map(|v| v + 0.3);
                check_scalar_fn(&[a, b], 20, 1e-6, rng, &|t, v| {
                    crate::loss::rec_loss(t, v[0], v[1])
                })
            })));
            ops.push(("hinge_d", Box::new(|rng| {
                // scores bounded away from the +-1 hinge corners
                let r = rand_away_from_zero(Shape::new(4, 1, 1, 1), 0.05, rng).map(|v| 1.0 + v);
                let f = rand_away_from_zero(Shape::new(4, 1, 1, 1), 0.05, rng).map(|v| -1.0 + v);
                check_scalar_fn(&[r, f], 8, 1e-6, rng, &|t, v| {
                    crate::loss::hinge_d(t, v[0], v[1])
                })
            })));
            ops.push(("hinge_g", Box::new(|rng| {
                let f = Tensor::<f64>::rand_uniform(Shape::new(4, 1, 1, 1), -2.0, 2.0, rng);
                check_scalar_fn(&[f], 4, 1e-6, rng, &|t, v| {
                    Ok(crate::loss::hinge_g(t, v[0]))
                })
            })));
        }
        _ => {}
    }
    ops
}

/// Run the registered finite-difference suites for the named groups
/// ("tensor", "region_norm", "model", "losses").
pub fn run_suites(groups: &[&str], seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for group in groups {
        for (name, f) in registry(group) {
            let mut rng = crate::rng::rng_from(seed, "gradcheck", fxhash(name));
            let err = f(&mut rng)?;
            out.push(CheckReport { op: format!("{group}::{name}"), max_rel_err: err });
        }
    }
    Ok(out)
}

fn fxhash(s: &str) -> u64 {
    s.bytes().fold(0u64, |h, b| h.rotate_left(5) ^ u64::from(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_gradient_matches_finite_differences() {
        let mut rng = crate::rng::rng_from(5, "gc", 0);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 3, 3), -2.0, 2.0, &mut rng);
        let err = check_scalar_fn(&[x], 18, 1e-6, &mut rng, &|tape, vars| {
            let y = tape.tanh(vars[0]);
            Ok(tape.sum_all(y))
        })
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn sign_flipped_backward_rule_is_caught() {
        // The harness must be falsifiable: a sabotaged analytic gradient has
        // to produce a large relative error against finite differences.
        let mut rng = crate::rng::rng_from(6, "gc-mut", 0);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 1, 2, 2), 0.5, 2.0, &mut rng);
        let mut tape = Tape::new(true);
        let v = tape.leaf(x.clone());
        let y = tape.tanh(v);
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        let analytic = tape.grad_of(v).unwrap();
        for coord in 0..4 {
            let h = 1e-6;
            let fd = {
                let f = |t: &Tensor<f64>| {
                    let mut tp = Tape::new(false);
                    let lv = tp.leaf(t.clone());
                    let ty = tp.tanh(lv);
                    let ts = tp.sum_all(ty);
                    tp.value(ts).data()[0]
                };
                let mut plus = x.clone();
                plus.make_mut()[coord] += h;
                let mut minus = x.clone();
                minus.make_mut()[coord] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            };
            assert!(rel_err(analytic.data()[coord], fd) < 1e-6);
            assert!(rel_err(-analytic.data()[coord], fd) > 0.1, "mutation not caught");
        }
    }

    #[test]
    fn composite_conv_relu_mean_graph_checks_out() {
        let mut rng = crate::rng::rng_from(7, "gc2", 0);
        let x = rand_away_from_zero(Shape::new(2, 2, 5, 5), 0.05, &mut rng);
        let w = Tensor::<f64>::rand_uniform(Shape::new(3, 2, 3, 3), -0.5, 0.5, &mut rng);
        let b = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 1, 1), -0.2, 0.2, &mut rng);
        let err = check_scalar_fn(&[x, w, b], 16, 1e-6, &mut rng, &|tape, vars| {
            let y = tape.conv2d(vars[0], vars[1], Some(vars[2]), 1, 1)?;
            let a = tape.leaky_relu(y, 0.2);
            Ok(tape.mean_all(a))
        })
        .unwrap();
        assert!(err < 1e-3, "err = {err}");
    }
}
