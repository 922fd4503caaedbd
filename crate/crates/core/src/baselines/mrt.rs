use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BaselineResult;
use crate::beamcore::{gain_matrix, Utility};
use crate::channel::BipartiteChannel;
use crate::linalg::{vec_norm, CMatrix, C64};

const STEPS: usize = 200;
const RESTARTS: usize = 5;

/// Euclidean projection onto `{p ≥ 0, Σp = total}`.
pub fn project_simplex(x: &[f64], total: f64) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - total) / (j + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    x.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Rates and their gradient with respect to the powers, for fixed unit beams with gains `g`.
fn rates_and_jacobian(g: &[f64], p: &[f64], noise: f64) -> (Vec<f64>, Vec<f64>) {
    let k = p.len();
    let ln2 = std::f64::consts::LN_2;
    let mut rates = vec![0.0; k];
    let mut jac = vec![0.0; k * k];
    for u in 0..k {
        let row = &g[u * k..(u + 1) * k];
        let interference: f64 = (0..k).filter(|&l| l != u).map(|l| p[l] * row[l]).sum::<f64>() + noise;
        let total = interference + p[u] * row[u];
        rates[u] = (total / interference).log2();
        for j in 0..k {
            let d = row[j] / total - if j == u { 0.0 } else { row[j] / interference };
            jac[u * k + j] = d / ln2;
        }
    }
    (rates, jac)
}

fn ascend(g: &[f64], start: Vec<f64>, power: f64, noise: f64, mode: Utility) -> (f64, Vec<f64>) {
    let k = start.len();
    let mut p = start;
    let mut best = (f64::NEG_INFINITY, p.clone());
    for step in 0..STEPS {
        let (rates, jac) = rates_and_jacobian(g, &p, noise);
        let u = mode.apply(&rates);
        if u > best.0 {
            best = (u, p.clone());
        }
        let grad: Vec<f64> = match mode {
            Utility::SumRate => (0..k).map(|j| (0..k).map(|r| jac[r * k + j]).sum()).collect(),
            Utility::MinRate => {
                let worst = (0..k).fold(0, |a, r| if rates[r] < rates[a] { r } else { a });
                jac[worst * k..(worst + 1) * k].to_vec()
            }
        };
        let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        // Step length shrinks from a fifth of the budget towards zero.
        let eta = 0.2 * power * (1.0 - step as f64 / STEPS as f64) / norm;
        let moved: Vec<f64> = p.iter().zip(&grad).map(|(x, d)| x + eta * d).collect();
        p = project_simplex(&moved, power);
    }
    let (rates, _) = rates_and_jacobian(g, &p, noise);
    let u = mode.apply(&rates);
    if u > best.0 {
        best = (u, p);
    }
    best
}

/// Matched-filter directions with powers tuned by projected gradient ascent.
///
/// The first start is the equal split, the rest are random points of the
/// simplex from a fixed seed, so the result is deterministic.
pub fn mrt_power(inst: &BipartiteChannel, mode: Utility) -> BaselineResult {
    let (n, k) = (inst.n(), inst.k());
    let mut dirs = CMatrix::zeros(n, k);
    for u in 0..k {
        let row = inst.h().row(u);
        let norm = vec_norm(row);
        let col: Vec<C64> = row.iter().map(|z| z.conj() / norm).collect();
        dirs.set_column(u, &col);
    }
    let g = gain_matrix(inst.h(), &dirs);
    let power = inst.power();
    let mut rng = ChaCha8Rng::seed_from_u64(0x006d_7274);
    let mut best = (f64::NEG_INFINITY, vec![power / k as f64; k]);
    for r in 0..RESTARTS {
        let start = if r == 0 {
            vec![power / k as f64; k]
        } else {
            let w: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|x| power * x / s).collect()
        };
        let cand = ascend(&g, start, power, inst.noise(), mode);
        if cand.0 > best.0 {
            best = cand;
        }
    }
    let mut v = dirs;
    for (u, &pu) in best.1.iter().enumerate() {
        let col: Vec<C64> = v.column(u).iter().map(|z| z * pu.sqrt()).collect();
        v.set_column(u, &col);
    }
    BaselineResult::new(inst, v, mode, STEPS * RESTARTS, true, Vec::new())
}
