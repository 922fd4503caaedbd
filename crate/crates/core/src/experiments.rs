//! Evaluation grids and their CSV output.
//!
//! Result files hold only seeded quantities, so reruns are byte-identical.
//! Wall-clock measurements go to a separate timing file.

use std::fmt::Write as _;
use std::time::Instant;

use crate::baselines::Baseline;
use crate::beamcore::Utility;
use crate::bgnn::{bmp_forward, BgnnParams, InitialMessages};
use crate::channel::{db_to_linear, sample_fixed, BipartiteChannel, ScenarioConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{stream, Purpose};

pub const EVAL_SCHEMA: &str = "bgnn-eval/1";
pub const GENERALIZE_SCHEMA: &str = "bgnn-generalize/1";
pub const TRAJECTORY_SCHEMA: &str = "bgnn-trajectory/1";
pub const TIMING_SCHEMA: &str = "bgnn-timing/1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub n: usize,
    pub k: usize,
    pub snr_db: f64,
}

#[derive(Clone, Debug)]
pub struct EvalSpec {
    pub cells: Vec<Cell>,
    pub samples: usize,
    pub seed: u64,
    /// Layout and propagation; the power is replaced by each cell's SNR.
    pub scenario: ScenarioConfig,
    pub baselines: Vec<Baseline>,
    pub execution: Execution,
}

impl EvalSpec {
    /// Every combination of the listed sizes and SNRs.
    pub fn grid(ns: &[usize], ks: &[usize], snrs_db: &[f64]) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &n in ns {
            for &k in ks {
                for &snr_db in snrs_db {
                    cells.push(Cell { n, k, snr_db });
                }
            }
        }
        cells
    }

    /// Test sample `idx` of `cell`. The channel depends on `(N, K, idx)` only,
    /// so different SNRs see the same fading.
    pub fn sample(&self, cell: Cell, idx: usize, msg_dim: usize) -> Result<(BipartiteChannel, InitialMessages)> {
        let mut rng = stream(self.seed, Purpose::Test, &[cell.n as u64, cell.k as u64, idx as u64]);
        let scenario = ScenarioConfig { power: db_to_linear(cell.snr_db), ..self.scenario.clone() };
        let inst = sample_fixed(&scenario, cell.n, cell.k, &mut rng)?;
        let mut rng = stream(self.seed, Purpose::Messages, &[cell.n as u64, cell.k as u64, idx as u64]);
        let init = InitialMessages::sample(cell.n, cell.k, msg_dim, &mut rng);
        Ok((inst, init))
    }

    fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("at least one sample per cell is required".into()));
        }
        if self.cells.iter().any(|c| c.n == 0 || c.k == 0 || !c.snr_db.is_finite()) {
            return Err(Error::Config("cells need positive sizes and a finite SNR".into()));
        }
        Ok(())
    }
}

/// Mean baseline utility, or `None` where the method does not apply.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineMean {
    pub baseline: Baseline,
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub samples: usize,
    pub bgnn: f64,
    pub baselines: Vec<BaselineMean>,
}

fn baseline_utility(b: Baseline, inst: &BipartiteChannel, mode: Utility) -> Result<Option<f64>> {
    match b.solve(inst, mode) {
        Ok(r) => Ok(Some(mode.apply(&r.rates))),
        Err(Error::Infeasible(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Mean utility of the network and each baseline per cell.
pub fn evaluate(params: &BgnnParams, spec: &EvalSpec) -> Result<Vec<CellResult>> {
    spec.validate()?;
    let mode = params.config.mode;
    let mut out = Vec::with_capacity(spec.cells.len());
    for &cell in &spec.cells {
        let per_sample = spec.execution.map(spec.samples, |i| -> Result<(f64, Vec<Option<f64>>)> {
            let (inst, init) = spec.sample(cell, i, params.config.msg_dim)?;
            let ours = bmp_forward(params, &inst, &init)?.last().utility;
            let theirs = spec.baselines.iter().map(|&b| baseline_utility(b, &inst, mode)).collect::<Result<_>>()?;
            Ok((ours, theirs))
        });
        let mut bgnn = 0.0;
        let mut sums = vec![Some(0.0); spec.baselines.len()];
        for r in per_sample {
            let (ours, theirs) = r?;
            bgnn += ours;
            for (s, t) in sums.iter_mut().zip(theirs) {
                *s = match (*s, t) {
                    (Some(a), Some(b)) => Some(a + b),
                    _ => None,
                };
            }
        }
        let n = spec.samples as f64;
        out.push(CellResult {
            cell,
            samples: spec.samples,
            bgnn: bgnn / n,
            baselines: spec.baselines.iter().zip(sums).map(|(&baseline, s)| BaselineMean { baseline, mean: s.map(|x| x / n) }).collect(),
        });
    }
    Ok(out)
}

fn header(schema: &str, manifest: &str) -> String {
    format!("# schema={schema} manifest={manifest}\n")
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

/// Utilities are in bits/s/Hz.
pub fn eval_csv(results: &[CellResult], mode: Utility, manifest: &str) -> String {
    let mut s = header(EVAL_SCHEMA, manifest);
    s.push_str("n,k,snr_db,samples,utility,bgnn_bps_hz");
    if let Some(first) = results.first() {
        for b in &first.baselines {
            let _ = write!(s, ",{}_bps_hz", b.baseline.name());
        }
    }
    s.push('\n');
    for r in results {
        let _ = write!(s, "{},{},{},{},{},{}", r.cell.n, r.cell.k, r.cell.snr_db, r.samples, mode, fmt(r.bgnn));
        for b in &r.baselines {
            match b.mean {
                Some(m) => {
                    let _ = write!(s, ",{}", fmt(m));
                }
                None => s.push_str(",infeasible"),
            }
        }
        s.push('\n');
    }
    s
}

/// The baseline a ratio is taken against: WMMSE for sum rate, SINR balancing for minimum rate.
pub fn reference_baseline(mode: Utility) -> Baseline {
    match mode {
        Utility::SumRate => Baseline::Wmmse,
        Utility::MinRate => Baseline::Optimal,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioRow {
    pub cell: Cell,
    pub samples: usize,
    pub bgnn: f64,
    pub reference: f64,
    /// Ratio of the means.
    pub ratio: f64,
}

/// Network utility relative to the reference baseline, per cell.
pub fn generalize(params: &BgnnParams, spec: &EvalSpec) -> Result<Vec<RatioRow>> {
    let reference = reference_baseline(params.config.mode);
    let spec = EvalSpec { baselines: vec![reference], ..spec.clone() };
    let rows = evaluate(params, &spec)?;
    Ok(rows
        .into_iter()
        .map(|r| {
            let reference = r.baselines[0].mean.expect("reference baselines are always feasible");
            RatioRow { cell: r.cell, samples: r.samples, bgnn: r.bgnn, reference, ratio: r.bgnn / reference }
        })
        .collect())
}

pub fn generalize_csv(rows: &[RatioRow], mode: Utility, manifest: &str) -> String {
    let mut s = header(GENERALIZE_SCHEMA, manifest);
    let _ = writeln!(s, "n,k,snr_db,samples,utility,bgnn_bps_hz,{}_bps_hz,ratio", reference_baseline(mode).name());
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.cell.n,
            r.cell.k,
            r.cell.snr_db,
            r.samples,
            mode,
            fmt(r.bgnn),
            fmt(r.reference),
            fmt(r.ratio)
        );
    }
    s
}

/// Mean utility after each message-passing round over the samples of `cell`.
pub fn trajectory(params: &BgnnParams, spec: &EvalSpec, cell: Cell) -> Result<Vec<f64>> {
    spec.validate()?;
    let runs = spec.execution.map(spec.samples, |i| -> Result<Vec<f64>> {
        let (inst, init) = spec.sample(cell, i, params.config.msg_dim)?;
        trajectory_instance(params, &inst, &init)
    });
    let mut sums = vec![0.0; params.config.iterations];
    for r in runs {
        for (s, u) in sums.iter_mut().zip(r?) {
            *s += u;
        }
    }
    Ok(sums.into_iter().map(|s| s / spec.samples as f64).collect())
}

/// Per-round utility on one instance.
pub fn trajectory_instance(params: &BgnnParams, inst: &BipartiteChannel, init: &InitialMessages) -> Result<Vec<f64>> {
    Ok(bmp_forward(params, inst, init)?.solutions.iter().map(|s| s.utility).collect())
}

pub fn trajectory_csv(values: &[f64], mode: Utility, samples: usize, manifest: &str) -> String {
    let mut s = header(TRAJECTORY_SCHEMA, manifest);
    s.push_str("step,samples,utility,bps_hz\n");
    for (t, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{}", t + 1, samples, mode, fmt(*v));
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub cell: Cell,
    pub method: String,
    pub runs: usize,
    pub median_seconds: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Median single-instance wall time of every method, run one at a time on this thread.
pub fn time_methods(params: &BgnnParams, spec: &EvalSpec, runs: usize) -> Result<Vec<TimingRow>> {
    spec.validate()?;
    if runs == 0 {
        return Err(Error::Config("timing needs at least one run".into()));
    }
    let mode = params.config.mode;
    let mut out = Vec::new();
    for &cell in &spec.cells {
        let samples: Vec<_> = (0..runs).map(|i| spec.sample(cell, i % spec.samples, params.config.msg_dim)).collect::<Result<_>>()?;
        // One untimed pass warms caches and allocator.
        bmp_forward(params, &samples[0].0, &samples[0].1)?;
        let mut ours = Vec::with_capacity(runs);
        for (inst, init) in &samples {
            let t = Instant::now();
            bmp_forward(params, inst, init)?;
            ours.push(t.elapsed().as_secs_f64());
        }
        out.push(TimingRow { cell, method: "bgnn".into(), runs, median_seconds: median(ours) });
        for &b in &spec.baselines {
            let mut times = Vec::with_capacity(runs);
            let mut feasible = true;
            for (inst, _) in &samples {
                let t = Instant::now();
                if baseline_utility(b, inst, mode)?.is_none() {
                    feasible = false;
                    break;
                }
                times.push(t.elapsed().as_secs_f64());
            }
            let median_seconds = if feasible { median(times) } else { f64::NAN };
            out.push(TimingRow { cell, method: b.name().into(), runs, median_seconds });
        }
    }
    Ok(out)
}

pub fn timing_csv(rows: &[TimingRow], manifest: &str) -> String {
    let mut s = header(TIMING_SCHEMA, manifest);
    s.push_str("n,k,snr_db,method,runs,median_seconds\n");
    for r in rows {
        let t = if r.median_seconds.is_nan() { "infeasible".to_string() } else { format!("{:.9}", r.median_seconds) };
        let _ = writeln!(s, "{},{},{},{},{},{}", r.cell.n, r.cell.k, r.cell.snr_db, r.method, r.runs, t);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bgnn::BgnnConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(cells: Vec<Cell>, baselines: Vec<Baseline>) -> EvalSpec {
        EvalSpec { cells, samples: 4, seed: 5, scenario: ScenarioConfig::default(), baselines, execution: Execution::Parallel }
    }

    fn params(mode: Utility) -> BgnnParams {
        BgnnParams::init(BgnnConfig { mode, msg_dim: 5, iterations: 3, hidden: 12 }, &mut ChaCha8Rng::seed_from_u64(2))
    }

    #[test]
    fn grid_layout() {
        let cells = EvalSpec::grid(&[4, 6], &[1, 2, 3], &[10.0, 25.0]);
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[1], Cell { n: 4, k: 1, snr_db: 25.0 });
    }

    #[test]
    fn single_cell_gives_single_row_and_repeats_exactly() {
        let p = params(Utility::SumRate);
        let s = spec(vec![Cell { n: 3, k: 2, snr_db: 10.0 }], vec![Baseline::Wmmse, Baseline::Zf, Baseline::Mrt]);
        let a = eval_csv(&evaluate(&p, &s).unwrap(), Utility::SumRate, "m.txt");
        let b = eval_csv(&evaluate(&p, &s).unwrap(), Utility::SumRate, "m.txt");
        assert_eq!(a, b);
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "# schema=bgnn-eval/1 manifest=m.txt");
        assert_eq!(lines[1], "n,k,snr_db,samples,utility,bgnn_bps_hz,wmmse_bps_hz,zf_bps_hz,mrt_bps_hz");
    }

    #[test]
    fn zf_cell_is_marked_infeasible() {
        let p = params(Utility::SumRate);
        let s = spec(vec![Cell { n: 2, k: 3, snr_db: 10.0 }], vec![Baseline::Zf]);
        let csv = eval_csv(&evaluate(&p, &s).unwrap(), Utility::SumRate, "m");
        assert!(csv.lines().nth(2).unwrap().ends_with(",infeasible"));
    }

    #[test]
    fn single_user_ratio_is_one() {
        for mode in [Utility::SumRate, Utility::MinRate] {
            let rows = generalize(&params(mode), &spec(vec![Cell { n: 1, k: 1, snr_db: 10.0 }], vec![])).unwrap();
            assert!((rows[0].ratio - 1.0).abs() < 1e-6, "{mode}: {}", rows[0].ratio);
        }
    }

    #[test]
    fn untrained_model_has_flat_trajectory() {
        let p = BgnnParams::zeros(BgnnConfig { mode: Utility::SumRate, msg_dim: 5, iterations: 4, hidden: 8 });
        let cell = Cell { n: 3, k: 3, snr_db: 10.0 };
        let t = trajectory(&p, &spec(vec![cell], vec![]), cell).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
        let csv = trajectory_csv(&t, Utility::SumRate, 4, "m");
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn timing_rows_cover_every_method() {
        let p = params(Utility::SumRate);
        let s = spec(vec![Cell { n: 2, k: 3, snr_db: 10.0 }], vec![Baseline::Wmmse, Baseline::Zf]);
        let rows = time_methods(&p, &s, 3).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].median_seconds > 0.0);
        assert!(rows[2].median_seconds.is_nan());
        assert!(timing_csv(&rows, "m").contains("infeasible"));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
