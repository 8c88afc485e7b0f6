// timing probe: one desk-scale train step + epoch estimate
use rainkit_core::data::{stack_batch, synth_dataset, JitterSpec};
use rainkit_core::model::{GeneratorConfig, NormPlan};
use rainkit_core::train::{TrainConfig, TrainState};
use std::time::Instant;

fn main() {
    let data = synth_dataset(16, 64, 7, &JitterSpec::strong());
    let cfg = TrainConfig::desk(7);
    let gen_cfg = GeneratorConfig::desk(NormPlan::named("RAIN-Decoder", 5).unwrap());
    let mut state = TrainState::new(gen_cfg, cfg).unwrap();
    let refs: Vec<&_> = data[..8].iter().collect();
    let (c, m, g) = stack_batch(&refs);
    // warm-up
    state.train_step(&c, &m, &g).unwrap();
    let t0 = Instant::now();
    let n = 10;
    for _ in 0..n {
        state.train_step(&c, &m, &g).unwrap();
    }
    let per = t0.elapsed().as_secs_f64() / n as f64;
    println!("full step: {:.3}s  -> 20 epochs x 63 steps ~ {:.1} min", per, per * 63.0 * 20.0 / 60.0);

    let mut cfg2 = TrainConfig::desk(7);
    cfg2.adversarial = false; cfg2.verification = false;
    let gen_cfg2 = GeneratorConfig::desk(NormPlan::named("RAIN-Decoder", 5).unwrap());
    let mut state2 = TrainState::new(gen_cfg2, cfg2).unwrap();
    state2.train_step(&c, &m, &g).unwrap();
    let t0 = Instant::now();
    for _ in 0..n { state2.train_step(&c, &m, &g).unwrap(); }
    let per2 = t0.elapsed().as_secs_f64() / n as f64;
    println!("L1-only step: {:.3}s", per2);
}
