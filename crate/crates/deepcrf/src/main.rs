use deepcrf::harness::{run_experiment, ExperimentSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let r: u32 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(24);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(15);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let augmented: bool = args.get(4).map(|s| s != "0").unwrap_or(true);
    let dir = std::env::temp_dir().join(format!("deepcrf-cal-{}-{}-{}", r, epochs, seed));
    std::fs::create_dir_all(&dir).unwrap();
    let batch: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(64);
    let spec = ExperimentSpec {
        realizations_per_type: r,
        stage_epochs: epochs,
        seed,
        augmented,
        batch_size: batch,
        ..ExperimentSpec::default()
    };
    let start = std::time::Instant::now();
    let out = run_experiment(&spec, &dir).unwrap();
    println!(
        "R={} epochs={} seed={} aug={} | single={:.4} fused={:?} | {:.1}s",
        r,
        epochs,
        seed,
        augmented,
        out.single_shot_accuracy,
        out.fused_accuracy,
        start.elapsed().as_secs_f64()
    );
    if let Some(s1) = &out.stage1 {
        println!("stage1 epochs={} best={:.4}", s1.epochs.len(), s1.best_val_loss);
    }
    println!("stage2 epochs={} best={:.4}", out.stage2.epochs.len(), out.stage2.best_val_loss);
}
