use std::io::Write;
use std::path::{Path, PathBuf};

use bevmem_core::gradcheck::run_gradcheck;
use bevmem_core::heatmap::OverlapHeatmap;
use bevmem_core::synth::{rasterize, Scenario, SequenceData};
use bevmem_core::train::{
    argmax_labels, evaluate, load_checkpoint, predict_sequence, run_ablation, save_checkpoint, train_stage1,
    train_stage2, AblationPlan, EpochLog, ModelParams, Variant,
};
use bevmem_core::GridSpec;

use crate::config::RunConfig;
use crate::data::{load_dataset, write_dataset};
use crate::{image, Failure, Stage};

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn check_grid(data: &[SequenceData], grid: &GridSpec, what: &str) -> Result<(), Failure> {
    match data.iter().find(|s| s.grid != *grid) {
        Some(s) => Err(Failure::Data(format!("{what} grid {:?} differs from model grid {grid:?}", s.grid))),
        None => Ok(()),
    }
}

fn load_params(path: &Path) -> Result<ModelParams, Failure> {
    load_checkpoint(path).map_err(|e| io_err(path, e))
}

pub fn gen(config: Option<&Path>, out: &Path, count: Option<u64>, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let count = count.map_or(cfg.data.train_scenarios, |c| c as usize);
    let seed = seed.unwrap_or(cfg.data.train_seed);
    let m = write_dataset(out, count, seed, &cfg.scenario_params(), cfg.data.noise_sigma, &cfg.hash())?;
    println!("wrote {} scenarios to {} (seed {}, config {})", m.count, out.display(), m.seed, &m.config_hash[..12]);
    Ok(())
}

fn log_epochs(out: &mut impl Write, log: &[EpochLog]) -> std::io::Result<()> {
    for e in log {
        eprintln!("stage {} epoch {}: loss {:.5} over {} steps ({:.1} s)", e.stage, e.epoch, e.loss, e.steps, e.wall_time_s);
        writeln!(out, "{}", serde_json::to_string(e).expect("log serializes"))?;
    }
    Ok(())
}

pub fn train(
    config: Option<&Path>,
    data: Option<PathBuf>,
    out_checkpoint: Option<PathBuf>,
    stage: Stage,
    init_checkpoint: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let data_dir = data.unwrap_or_else(|| cfg.paths.data_dir.clone());
    let ckpt = out_checkpoint.unwrap_or_else(|| cfg.paths.checkpoint.clone());
    let model = cfg.model_config();
    let params = match init_checkpoint {
        Some(p) => {
            let params = load_params(p)?;
            if params.config != model {
                return Err(Failure::Data(format!(
                    "checkpoint {} was trained with {:?}, config asks for {:?}",
                    p.display(),
                    params.config,
                    model
                )));
            }
            params
        }
        None if stage == Stage::Two => {
            return Err(Failure::Usage("--stage 2 continues from a stage-1 model; pass --init-checkpoint".into()))
        }
        None => ModelParams::init(&model, cfg.training.seed)?,
    };
    let (_, seqs) = load_dataset(&data_dir)?;
    check_grid(&seqs, &model.grid, "data")?;
    let opts = cfg.train_options();
    let log_path = ckpt.parent().unwrap_or(Path::new("")).join("train_log.jsonl");
    let mut log = Vec::new();
    let mut params = params;
    if matches!(stage, Stage::One | Stage::Both) {
        let out = train_stage1(&seqs, params, cfg.training.stage1_epochs, &opts, &[])?;
        log_epochs(&mut log, &out.log).map_err(|e| io_err(&log_path, e))?;
        params = out.params;
    }
    if matches!(stage, Stage::Two | Stage::Both) {
        let out = train_stage2(&seqs, params, cfg.training.stage2_epochs, &opts, &[])?;
        log_epochs(&mut log, &out.log).map_err(|e| io_err(&log_path, e))?;
        params = out.params;
    }
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    save_checkpoint(&params, &ckpt).map_err(|e| io_err(&ckpt, e))?;
    write_file(&log_path, &log)?;
    println!("wrote {} and {}", ckpt.display(), log_path.display());
    Ok(())
}

pub fn eval(config: Option<&Path>, checkpoint: &Path, data: &Path, report: &Path) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let params = load_params(checkpoint)?;
    let (_, seqs) = load_dataset(data)?;
    check_grid(&seqs, &params.config.grid, "data")?;
    let r = evaluate(&seqs, &params, &cfg.eval_options())?;
    write_file(report, r.to_json()?.as_bytes())?;
    let m = &r.metrics;
    let occ = m.occluded_iou.map_or("n/a".to_string(), |v| format!("{:.4}", v));
    println!("mean IoU {:.4}, occluded IoU {occ} over {} frames -> {}", m.mean_iou, m.frames, report.display());
    Ok(())
}

pub fn ablate(
    config: Option<&Path>,
    data: Option<&Path>,
    eval_data: Option<&Path>,
    variants: &[String],
    report: &Path,
) -> Result<(), Failure> {
    let variants: Vec<Variant> =
        variants.iter().map(|v| v.trim().parse()).collect::<Result<_, _>>().map_err(|e: bevmem_core::Error| {
            Failure::Usage(e.to_string())
        })?;
    let cfg = RunConfig::load(config)?;
    let bench = cfg.benchmark();
    let load = |dir: Option<&Path>, generate: &dyn Fn() -> bevmem_core::Result<Vec<SequenceData>>| match dir {
        Some(d) => load_dataset(d).map(|(_, s)| s),
        None => generate().map_err(Failure::from),
    };
    let train = load(data, &|| bench.train_set())?;
    let eval = load(eval_data, &|| bench.eval_set())?;
    check_grid(&train, &bench.model.grid, "training data")?;
    check_grid(&eval, &bench.model.grid, "evaluation data")?;
    let full = Variant::Twm(bench.model.fusion.memory_capacity);
    let plan = AblationPlan {
        variants,
        seeds: bench.seeds.clone(),
        schedule: bench.schedule,
        snapshot_fractions: vec![0.5],
        diagnostics: vec![full],
    };
    let run = run_ablation(&train, &eval, &bench.model, &plan, &bench.train, &bench.eval)?;
    let r = &run.report;
    write_file(report, r.to_json()?.as_bytes())?;
    println!("{:<12} {:>9} {:>12}", "variant", "mean IoU", "occluded IoU");
    for row in &r.rows {
        let occ = row.mean_occluded_iou.map_or("n/a".to_string(), |v| format!("{:.4}", v));
        println!("{:<12} {:>9.4} {:>12}", row.variant.to_string(), row.mean_iou, occ);
    }
    for c in &r.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {}: {:.2} vs {:.2}", c.name, c.lhs, c.rhs);
    }
    let failed: Vec<&str> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(Failure::Check(format!("directional checks failed: {}", failed.join("; "))));
    }
    Ok(())
}

pub fn viz(checkpoint: Option<&Path>, scenario: &Path, frame: usize, out: &Path, noise_sigma: f64) -> Result<(), Failure> {
    let sc = Scenario::load(scenario).map_err(|e| io_err(scenario, e))?;
    if frame >= sc.len() {
        return Err(Failure::Data(format!("frame {frame} out of range: scenario has {} frames", sc.len())));
    }
    let g = sc.grid;
    let heat = OverlapHeatmap::along(&g, &sc.trajectory[..=frame])?;
    write_file(&out.join("heatmap.pgm"), &image::pgm(g.w_cells, g.h_cells, &heat.to_gray8(frame)))?;
    let gt = rasterize(&sc.map_elements, &sc.trajectory[frame], &g);
    write_file(&out.join("gt.ppm"), &image::ppm_labels(g.w_cells, g.h_cells, &gt))?;
    if let Some(ckpt) = checkpoint {
        let params = load_params(ckpt)?;
        if params.config.grid != g {
            return Err(Failure::Data(format!("checkpoint grid {:?} differs from scenario grid {g:?}", params.config.grid)));
        }
        let seq = sc.render(noise_sigma)?;
        let logits = predict_sequence(&seq.frames[..=frame], &seq.poses[..=frame], &params)?;
        let pred = argmax_labels(&logits[frame]);
        write_file(&out.join("pred.ppm"), &image::ppm_labels(g.w_cells, g.h_cells, &pred))?;
    }
    println!("wrote frame {frame} images to {}", out.display());
    Ok(())
}

pub fn gradcheck(seed: u64, fault: Option<&str>) -> Result<(), Failure> {
    let start = std::time::Instant::now();
    let report = run_gradcheck(seed, fault)?;
    for c in &report.checks {
        println!(
            "{} {:?} {:<20} max rel error {:.3e} (limit {:.0e}), {} probed, {} skipped",
            if c.passed { "PASS" } else { "FAIL" },
            c.precision,
            c.op,
            c.max_rel_error,
            c.threshold,
            c.probed,
            c.skipped
        );
    }
    println!("{:.1} s", start.elapsed().as_secs_f64());
    if !report.passed() {
        let names: Vec<String> = report.failures().map(|c| format!("{} ({:?})", c.op, c.precision)).collect();
        return Err(Failure::Check(format!("gradient check failed for {}", names.join(", "))));
    }
    Ok(())
}
