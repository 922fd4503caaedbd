use super::BaselineResult;
use crate::beamcore::{beam_directions_ul, downlink_powers, gain_matrix, Utility};
use crate::channel::BipartiteChannel;
use crate::error::Result;
use crate::linalg::{power_iteration_max_eig, CMatrix, C64};

/// Uplink powers that equalize every user's SINR for fixed unit receive
/// `directions`, and the common SINR they reach.
pub fn balance_uplink(inst: &BipartiteChannel, directions: &CMatrix) -> Result<(Vec<f64>, f64)> {
    let k = inst.k();
    let g = gain_matrix(inst.h(), directions);
    let (noise, power) = (inst.noise(), inst.power());
    let dim = k + 1;
    let mut big = vec![0.0; dim * dim];
    for u in 0..k {
        let own = g[u * k + u];
        for l in 0..k {
            if l != u {
                // Interference at receiver u from uplink transmitter l is |h_lᴴ ṽ_u|².
                big[u * dim + l] = g[l * k + u] / own;
            }
        }
        big[u * dim + k] = noise / own;
    }
    for c in 0..dim {
        let col: f64 = (0..k).map(|r| big[r * dim + c]).sum();
        big[k * dim + c] = col / power;
    }
    let (lambda, vec) = power_iteration_max_eig(&big, dim)?;
    let mut q = vec[..k].to_vec();
    let sum: f64 = q.iter().sum();
    q.iter_mut().for_each(|x| *x *= power / sum);
    Ok((q, 1.0 / lambda))
}

/// Max-min SINR balancing by alternating uplink power balancing and MMSE
/// direction updates, then transfer to the downlink.
pub fn optimal_minrate(inst: &BipartiteChannel, tol: f64, max_iter: usize) -> Result<BaselineResult> {
    let k = inst.k();
    let mut q = vec![inst.power() / k as f64; k];
    let mut gamma = 0.0;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let directions = beam_directions_ul(inst, &q)?;
        let (next_q, next_gamma) = balance_uplink(inst, &directions)?;
        let change = (next_gamma - gamma).abs() / next_gamma.max(1.0);
        q = next_q;
        gamma = next_gamma;
        trace.push(gamma.ln_1p() / std::f64::consts::LN_2);
        if change < tol {
            converged = true;
            break;
        }
    }
    // Balance once more for the final directions so the downlink targets are exactly equal.
    let directions = beam_directions_ul(inst, &q)?;
    let (_, gamma) = balance_uplink(inst, &directions)?;
    let (p, _) = downlink_powers(inst, &directions, &vec![gamma; k])?;
    let mut v = directions;
    for (u, &pu) in p.iter().enumerate() {
        let col: Vec<C64> = v.column(u).iter().map(|z| z * pu.sqrt()).collect();
        v.set_column(u, &col);
    }
    Ok(BaselineResult::new(inst, v, Utility::MinRate, iterations, converged, trace))
}
