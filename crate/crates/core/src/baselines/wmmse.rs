use super::BaselineResult;
use crate::beamcore::{gain_matrix, Utility};
use crate::channel::BipartiteChannel;
use crate::error::Result;
use crate::linalg::{vec_norm, CMatrix, ComplexCholesky, C64};

const BISECTION_STEPS: usize = 200;

/// Solves `(Σ_l a_l h_l h_lᴴ + μI) v_k = c_k h_k` for every user.
fn regularized_beams(inst: &BipartiteChannel, a: &[f64], c: &[C64], mu: f64) -> Result<CMatrix> {
    let h = inst.h();
    let (n, k) = (inst.n(), inst.k());
    let mut m = CMatrix::identity(n);
    m.scale(mu);
    for l in 0..k {
        let row = h.row(l);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += a[l] * row[i].conj() * row[j];
            }
        }
    }
    let chol = ComplexCholesky::factor(&m)?;
    let mut v = CMatrix::zeros(n, k);
    for u in 0..k {
        let mut col: Vec<C64> = h.row(u).iter().map(|z| z.conj() * c[u]).collect();
        chol.solve_vec(&mut col);
        v.set_column(u, &col);
    }
    Ok(v)
}

/// Beam update under the sum-power budget, bisecting the multiplier μ.
fn power_limited_beams(inst: &BipartiteChannel, a: &[f64], c: &[C64]) -> Result<CMatrix> {
    let p = inst.power();
    // μ = 0 is admissible when the unregularized system is solvable within budget.
    if let Ok(v) = regularized_beams(inst, a, c, 0.0) {
        if v.is_finite() && v.frobenius_sq() <= p {
            return Ok(v);
        }
    }
    let scale = a.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let mut hi = scale;
    while regularized_beams(inst, a, c, hi)?.frobenius_sq() > p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if regularized_beams(inst, a, c, mid)?.frobenius_sq() > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-15 * hi {
            break;
        }
    }
    regularized_beams(inst, a, c, hi)
}

/// Scales `v` so that it uses the budget exactly.
fn fill_budget(v: &mut CMatrix, power: f64) {
    let used = v.frobenius_sq();
    if used > 0.0 {
        v.scale((power / used).sqrt());
    }
}

fn sum_rate(inst: &BipartiteChannel, v: &CMatrix) -> f64 {
    Utility::SumRate.apply(&crate::beamcore::rates(inst.h(), v, inst.noise()))
}

/// Weighted MMSE iteration for the sum rate, started from equal-power matched filtering.
pub fn wmmse(inst: &BipartiteChannel, tol: f64, max_iter: usize) -> Result<BaselineResult> {
    let (n, k) = (inst.n(), inst.k());
    let noise = inst.noise();
    let mut v = CMatrix::zeros(n, k);
    for u in 0..k {
        let row = inst.h().row(u);
        let norm = vec_norm(row);
        let amp = (inst.power() / k as f64).sqrt() / norm;
        let col: Vec<C64> = row.iter().map(|z| z.conj() * amp).collect();
        v.set_column(u, &col);
    }
    let mut current = sum_rate(inst, &v);
    let mut trace = vec![current];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let g = gain_matrix(inst.h(), &v);
        let mut a = vec![0.0; k];
        let mut c = vec![C64::new(0.0, 0.0); k];
        for u in 0..k {
            let amp: C64 = inst.h().row(u).iter().enumerate().map(|(i, z)| z * v[(i, u)]).sum();
            let total: f64 = g[u * k..(u + 1) * k].iter().sum::<f64>() + noise;
            // Receiver u_k, weight w_k = 1/MSE_k.
            let recv = amp / total;
            let mse = 1.0 - amp.norm_sqr() / total;
            let w = 1.0 / mse;
            a[u] = w * recv.norm_sqr();
            c[u] = recv * w;
        }
        let mut next = power_limited_beams(inst, &a, &c)?;
        fill_budget(&mut next, inst.power());
        let rate = sum_rate(inst, &next);
        v = next;
        trace.push(rate);
        let change = (rate - current).abs();
        current = rate;
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(BaselineResult::new(inst, v, Utility::SumRate, iterations, converged, trace))
}
