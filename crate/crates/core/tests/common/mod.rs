//! Independent oracles shared by the integration suites and the acceptance run.

#![allow(dead_code)]

use bgnn::beamcore::{beam_directions_ul, recover_minrate_beams, ul_rates, Utility};
use bgnn::bgnn::{bmp_forward, objective_and_grad, objective_value, BgnnConfig, BgnnParams, InitialMessages};
use bgnn::channel::{sample_fixed, BipartiteChannel, ScenarioConfig};
use bgnn::linalg::{CMatrix, C64};
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn instance(n: usize, k: usize, seed: u64) -> BipartiteChannel {
    sample_fixed(&ScenarioConfig::default(), n, k, &mut rng(seed)).unwrap()
}

/// Rates straight from the definition, one complex product at a time.
pub fn oracle_rates(h: &[Vec<C64>], v: &[Vec<C64>], noise: f64) -> Vec<f64> {
    // h[k] is user k's conjugated channel row, v[l] is beam l.
    let amp = |k: usize, l: usize| -> C64 { h[k].iter().zip(&v[l]).map(|(a, b)| a * b).sum() };
    (0..h.len())
        .map(|k| {
            let signal = amp(k, k).norm_sqr();
            let interference: f64 = (0..v.len()).filter(|&l| l != k).map(|l| amp(k, l).norm_sqr()).sum();
            (1.0 + signal / (interference + noise)).log2()
        })
        .collect()
}

pub fn rows(m: &CMatrix) -> Vec<Vec<C64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn columns(m: &CMatrix) -> Vec<Vec<C64>> {
    (0..m.cols()).map(|c| m.column(c)).collect()
}

/// Largest relative deviation between the tape gradient and central differences
/// over `count` randomly chosen parameters. The denominator is floored at `floor`
/// so parameters with vanishing gradient are judged on absolute error.
pub fn gradient_check(mode: Utility, seed: u64, count: usize, step: f64, floor: f64) -> f64 {
    let cfg = BgnnConfig::new(mode, 5, 6);
    let mut r = rng(seed);
    let params = BgnnParams::init(cfg, &mut r);
    let inst = sample_fixed(&ScenarioConfig::default(), 2, 2, &mut r).unwrap();
    let init = InitialMessages::sample(2, 2, cfg.msg_dim, &mut r);
    let weights = vec![1.0; cfg.iterations];
    let (_, grad) = objective_and_grad(&params, &inst, &init, &weights).unwrap();
    let flat = params.flatten();
    let mut worst: f64 = 0.0;
    for idx in sample(&mut r, flat.len(), count) {
        let eval = |delta: f64| {
            let mut p = params.clone();
            let mut x = flat.clone();
            x[idx] += delta;
            p.load_flat(&x).unwrap();
            objective_value(&p, &inst, &init, &weights).unwrap()
        };
        let fd = (eval(step) - eval(-step)) / (2.0 * step);
        let err = (grad[idx] - fd).abs() / grad[idx].abs().max(fd.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}

pub fn random_permutation(n: usize, r: &mut impl Rng) -> Vec<usize> {
    sample(r, n, n).into_vec()
}

/// Largest deviation between the outputs on a permuted graph and the permuted outputs.
///
/// Antenna and user orders are shuffled together with the initial messages, so a
/// permutation-equivariant model must reproduce the same features and beams.
pub fn equivariance_error(cfg: BgnnConfig, n: usize, k: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let params = BgnnParams::init(cfg, &mut r);
    let inst = sample_fixed(&ScenarioConfig::default(), n, k, &mut r).unwrap();
    let init = InitialMessages::sample(n, k, cfg.msg_dim, &mut r);
    let users = random_permutation(k, &mut r);
    let antennas = random_permutation(n, &mut r);
    let base = bmp_forward(&params, &inst, &init).unwrap();
    let perm = bmp_forward(&params, &inst.permuted(&users, &antennas), &init.permuted(&users, &antennas)).unwrap();
    let mut worst: f64 = 0.0;
    for (a, b) in base.features.iter().zip(&perm.features) {
        for (j, &u) in users.iter().enumerate() {
            worst = worst.max((a.p[u] - b.p[j]).abs()).max((a.q[u] - b.q[j]).abs());
        }
    }
    for (a, b) in base.solutions.iter().zip(&perm.solutions) {
        for (j, &u) in users.iter().enumerate() {
            worst = worst.max((a.rates[u] - b.rates[j]).abs());
            for (i, &ant) in antennas.iter().enumerate() {
                worst = worst.max((a.v[(ant, u)] - b.v[(i, j)]).norm());
            }
        }
    }
    worst
}

/// Uniform point on the simplex `{q ≥ 0, Σq = total}`.
pub fn simplex_point(k: usize, total: f64, r: &mut impl Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -r.random::<f64>().ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| total * x / s).collect()
}

/// |min downlink rate after eigen recovery − min dual uplink rate| for a random `(H, q)`.
pub fn duality_gap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(1..=6);
    let k = r.random_range(1..=6);
    let inst = sample_fixed(&ScenarioConfig::default(), n, k, &mut r).unwrap();
    let q = simplex_point(k, inst.power(), &mut r);
    let dirs = beam_directions_ul(&inst, &q).unwrap();
    let uplink = Utility::MinRate.apply(&ul_rates(&inst, &q, &dirs));
    let beams = recover_minrate_beams(&inst, &q).unwrap();
    let downlink = Utility::MinRate.apply(&oracle_rates(&rows(inst.h()), &columns(&beams.v), inst.noise()));
    (uplink - downlink).abs()
}

/// Two-user beams on two antennas: unit directions `[cos θ, sin θ·e^{iφ}]`
/// scaled by `√p₁` and `√(P − p₁)`. Full power is optimal for both utilities
/// because scaling every beam up raises every SINR.
fn grid_beams(x: &[f64; 5], power: f64) -> Vec<Vec<C64>> {
    let p1 = x[4].clamp(0.0, 1.0) * power;
    let amps = [p1.sqrt(), (power - p1).max(0.0).sqrt()];
    (0..2)
        .map(|l| {
            let (t, f) = (x[2 * l], x[2 * l + 1]);
            vec![Complex64::new(amps[l] * t.cos(), 0.0), Complex64::from_polar(amps[l] * t.sin(), f)]
        })
        .collect()
}

/// Best utility on a dense grid over both directions and the power split,
/// followed by a shrinking pattern search around the best grid point.
pub fn brute_force_2x2(inst: &BipartiteChannel, mode: Utility) -> f64 {
    assert_eq!((inst.n(), inst.k()), (2, 2));
    let h = rows(inst.h());
    let eval = |x: &[f64; 5]| mode.apply(&oracle_rates(&h, &grid_beams(x, inst.power()), inst.noise()));
    let (na, nf, np) = (16, 16, 21);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut best = (f64::NEG_INFINITY, [0.0; 5]);
    for a1 in 0..=na {
        for f1 in 0..nf {
            for a2 in 0..=na {
                for f2 in 0..nf {
                    for p in 0..=np {
                        let x = [
                            half_pi * a1 as f64 / na as f64,
                            two_pi * f1 as f64 / nf as f64,
                            half_pi * a2 as f64 / na as f64,
                            two_pi * f2 as f64 / nf as f64,
                            p as f64 / np as f64,
                        ];
                        let u = eval(&x);
                        if u > best.0 {
                            best = (u, x);
                        }
                    }
                }
            }
        }
    }
    let mut steps = [half_pi / na as f64, two_pi / nf as f64, half_pi / na as f64, two_pi / nf as f64, 1.0 / np as f64];
    for _ in 0..60 {
        let mut improved = false;
        for d in 0..5 {
            for sign in [-1.0, 1.0] {
                let mut x = best.1;
                x[d] += sign * steps[d];
                if d == 4 {
                    x[4] = x[4].clamp(0.0, 1.0);
                }
                let u = eval(&x);
                if u > best.0 {
                    best = (u, x);
                    improved = true;
                }
            }
        }
        if !improved {
            steps.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    best.0
}
