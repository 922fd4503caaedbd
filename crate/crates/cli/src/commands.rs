//! Command implementations. Each writes its outputs plus a manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use bgnn::baselines::Baseline;
use bgnn::bgnn::{bmp_forward, BgnnParams, InitialMessages};
use bgnn::channel::BipartiteChannel;
use bgnn::experiments::{
    eval_csv, evaluate, generalize_csv, reference_baseline, time_methods, timing_csv, trajectory, trajectory_csv, trajectory_instance,
    Cell, EvalSpec,
};
use bgnn::rng::{stream, Purpose};
use bgnn::training::train;
use bgnn::{checkpoint, experiments, Error, Result};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.txt";

/// Provenance of one command invocation.
pub struct Manifest {
    command: &'static str,
    started: u64,
    inputs: Vec<(String, String)>,
    outputs: Vec<PathBuf>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl Manifest {
    pub fn start(command: &'static str) -> Self {
        Self { command, started: unix_now(), inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.push((name.to_string(), path.display().to_string()));
    }

    fn write_output(&mut self, dir: &Path, name: &str, body: impl AsRef<[u8]>) -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body)?;
        self.outputs.push(path);
        Ok(())
    }

    /// Writes `manifest.txt`: metadata as comments, then the resolved config.
    fn finish(self, dir: &Path, cfg: &RunConfig) -> Result<()> {
        let mut s = String::from("# bgnn run manifest\n");
        let _ = writeln!(s, "# command = {}", self.command);
        let _ = writeln!(s, "# version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "# started_unix = {}", self.started);
        let _ = writeln!(s, "# finished_unix = {}", unix_now());
        for (name, path) in &self.inputs {
            let _ = writeln!(s, "# input.{name} = {path}");
        }
        for path in &self.outputs {
            let _ = writeln!(s, "# output = {}", path.display());
        }
        s.push_str(&cfg.to_text());
        fs::write(dir.join(MANIFEST), s)?;
        Ok(())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Trains a model, keeping the best checkpoint on disk as training proceeds.
///
/// A batch with non-finite values aborts the run after its instances are
/// written under `failed_batch/` for reproduction.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let tc = cfg.train_config()?;
    create_dir(out)?;
    let mut manifest = Manifest::start("train");
    let ckpt = out.join("model.ckpt");
    let result = train(&tc, |rec, improved| {
        eprintln!(
            "epoch {:>4}  objective {:.4}  validation {:.4}{}  {:.1}s",
            rec.epoch,
            rec.objective,
            rec.validation,
            if rec.best { "  *" } else { "" },
            rec.seconds
        );
        if let Some(p) = improved {
            checkpoint::save(p, &ckpt)?;
        }
        Ok(())
    });
    let outcome = match result {
        Ok(o) => o,
        Err(Error::BatchFailed { epoch, batch, source, instances }) => {
            let dir = out.join("failed_batch");
            create_dir(&dir)?;
            for (i, inst) in instances.iter().enumerate() {
                fs::write(dir.join(format!("epoch{epoch}_batch{batch}_{i:04}.txt")), inst.to_text())?;
            }
            eprintln!("wrote {} instances of the failing batch to {}", instances.len(), dir.display());
            return Err(Error::BatchFailed { epoch, batch, source, instances: Vec::new() });
        }
        Err(e) => return Err(e),
    };
    manifest.write_output(out, "model.ckpt", checkpoint::to_bytes(&outcome.best))?;
    manifest.write_output(out, "report.txt", outcome.report.to_text())?;
    manifest.finish(out, cfg)?;
    eprintln!("best validation {:.4} (untrained {:.4})", outcome.best_validation, outcome.report.initial_validation);
    Ok(())
}

/// Loads a checkpoint and aligns the run's model settings with it.
pub fn load_model(cfg: &mut RunConfig, mode_explicit: bool, path: &Path) -> Result<BgnnParams> {
    let params = checkpoint::load(path)?;
    cfg.adopt_model(params.config, mode_explicit)?;
    Ok(params)
}

/// Utility of BGNN and baselines per grid cell, plus single-instance timings.
pub fn cmd_eval(cfg: &RunConfig, params: &BgnnParams, ckpt: &Path, out: &Path) -> Result<()> {
    let cells = EvalSpec::grid(&cfg.eval.ns, &cfg.eval.ks, &cfg.eval.snrs_db);
    let spec = EvalSpec { baselines: cfg.eval_baselines(), ..cfg.eval_spec(cells, cfg.eval.samples)? };
    create_dir(out)?;
    let mut manifest = Manifest::start("eval");
    manifest.input("checkpoint", ckpt);
    let rows = evaluate(params, &spec)?;
    manifest.write_output(out, "eval.csv", eval_csv(&rows, params.config.mode, MANIFEST))?;
    if cfg.eval.timing_runs > 0 {
        let timings = time_methods(params, &spec, cfg.eval.timing_runs)?;
        manifest.write_output(out, "timing.csv", timing_csv(&timings, MANIFEST))?;
    }
    manifest.finish(out, cfg)
}

/// Utility ratio against the reference baseline, at sizes beyond training.
pub fn cmd_generalize(cfg: &RunConfig, params: &BgnnParams, ckpt: &Path, out: &Path) -> Result<()> {
    let mut cells = Vec::new();
    for &(n, k) in &cfg.generalize.sizes {
        for &snr_db in &cfg.generalize.snrs_db {
            cells.push(Cell { n, k, snr_db });
        }
    }
    let spec = cfg.eval_spec(cells, cfg.generalize.samples)?;
    create_dir(out)?;
    let mut manifest = Manifest::start("generalize");
    manifest.input("checkpoint", ckpt);
    let rows = experiments::generalize(params, &spec)?;
    eprintln!("reference baseline: {}", reference_baseline(params.config.mode).name());
    manifest.write_output(out, "generalize.csv", generalize_csv(&rows, params.config.mode, MANIFEST))?;
    manifest.finish(out, cfg)
}

/// Mean utility per message-passing round, or raw values for one imported instance.
pub fn cmd_trajectory(cfg: &RunConfig, params: &BgnnParams, ckpt: &Path, instance: Option<&Path>, out: &Path) -> Result<()> {
    create_dir(out)?;
    let mut manifest = Manifest::start("trajectory");
    manifest.input("checkpoint", ckpt);
    let (values, samples) = match instance {
        Some(path) => {
            manifest.input("instance", path);
            let inst = BipartiteChannel::from_text(&fs::read_to_string(path)?)?;
            let init = initial_messages(cfg, &inst, 0, params.config.msg_dim);
            (trajectory_instance(params, &inst, &init)?, 1)
        }
        None => {
            let t = &cfg.trajectory;
            let cell = Cell { n: t.n, k: t.k, snr_db: t.snr_db };
            let spec = cfg.eval_spec(vec![cell], t.samples)?;
            (trajectory(params, &spec, cell)?, t.samples)
        }
    };
    manifest.write_output(out, "trajectory.csv", trajectory_csv(&values, params.config.mode, samples, MANIFEST))?;
    manifest.finish(out, cfg)
}

/// Initial messages for an imported instance, keyed like test sample `idx`.
fn initial_messages(cfg: &RunConfig, inst: &BipartiteChannel, idx: usize, msg_dim: usize) -> InitialMessages {
    let mut rng = stream(cfg.seed, Purpose::Messages, &[inst.n() as u64, inst.k() as u64, idx as u64]);
    InitialMessages::sample(inst.n(), inst.k(), msg_dim, &mut rng)
}

/// Test sample `index` of cell `(n, k, snr_db)`, exactly as eval sees it.
pub fn cmd_export_instance(cfg: &RunConfig, n: usize, k: usize, index: usize, snr_db: f64, out: Option<&Path>) -> Result<()> {
    let spec = cfg.eval_spec(Vec::new(), 1)?;
    let (inst, _) = spec.sample(Cell { n, k, snr_db }, index, 1)?;
    let text = inst.to_text();
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Validates an instance file and reports the utility each method reaches on it.
pub fn cmd_import_instance(cfg: &RunConfig, path: &Path, model: Option<&BgnnParams>, baselines: &[Baseline]) -> Result<String> {
    let inst = BipartiteChannel::from_text(&fs::read_to_string(path)?)?;
    let mode = cfg.mode();
    let mut s = String::new();
    let snr_db = 10.0 * (inst.power() / inst.noise()).log10();
    let _ = writeln!(
        s,
        "instance {}: N={} K={} P={} noise={} ({snr_db:.2} dB)",
        path.display(),
        inst.n(),
        inst.k(),
        inst.power(),
        inst.noise()
    );
    let _ = writeln!(s, "method,utility,{mode}_bps_hz");
    if let Some(params) = model {
        let init = initial_messages(cfg, &inst, 0, params.config.msg_dim);
        let u = bmp_forward(params, &inst, &init)?.last().utility;
        let _ = writeln!(s, "bgnn,{mode},{u:.6}");
    }
    for &b in baselines {
        match b.solve(&inst, mode) {
            Ok(r) => {
                let _ = writeln!(s, "{},{mode},{:.6}", b.name(), mode.apply(&r.rates));
            }
            Err(Error::Infeasible(_)) => {
                let _ = writeln!(s, "{},{mode},infeasible", b.name());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(s)
}
