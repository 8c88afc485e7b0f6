// reduced-budget probe of the normalization ordering experiment
use rainkit_core::data::{synth_dataset, JitterSpec};
use rainkit_core::model::{GeneratorConfig, NormPlan};
use rainkit_core::train::{TrainConfig, TrainState};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(7);

    let jitter = JitterSpec::strong();
    let train = synth_dataset(n_train, 64, seed, &jitter);
    let test = synth_dataset(60, 64, seed ^ 0x5eed, &jitter);

    // composite baseline PSNR
    let comp_report = rainkit_core::metrics::evaluate_composites(&test).unwrap();
    println!("composite: psnr {:.2} fmse {:.1}", comp_report.average.psnr, comp_report.average.fmse);

    for plan in ["RAIN-Decoder", "IN", "BN", "RN", "None"] {
        let t0 = std::time::Instant::now();
        let mut cfg = TrainConfig::desk(seed);
        cfg.epochs = epochs;
        let gen_cfg = GeneratorConfig::desk(NormPlan::named(plan, 5).unwrap());
        let mut state = TrainState::new(gen_cfg, cfg).unwrap();
        let hist = state.train(&train, &test, None).unwrap();
        let outs = state.harmonize_all(&test).unwrap();
        let report = rainkit_core::metrics::evaluate_outputs(&test, &outs).unwrap();
        println!(
            "{plan:>14}: val_psnr {:.2}  fmse {:.1}  (last rec {:.4})  [{:.0}s]",
            hist.final_val_psnr().unwrap(),
            report.average.fmse,
            hist.rows.last().unwrap().rec,
            t0.elapsed().as_secs_f64()
        );
    }
}
