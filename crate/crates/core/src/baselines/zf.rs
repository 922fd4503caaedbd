use super::BaselineResult;
use crate::beamcore::Utility;
use crate::channel::BipartiteChannel;
use crate::error::{Error, Result};
use crate::linalg::{hpd_solve, vec_norm, CMatrix, C64};

/// Water-filling of `total` over parallel channels with gains `g` and noise `noise`.
pub fn water_fill(g: &[f64], total: f64, noise: f64) -> Vec<f64> {
    let floors: Vec<f64> = g.iter().map(|&x| if x > 0.0 { noise / x } else { f64::INFINITY }).collect();
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| floors[a].total_cmp(&floors[b]));
    // Largest active set whose common level clears every member's floor.
    let mut level = 0.0;
    let mut sum = 0.0;
    for (m, &i) in order.iter().enumerate() {
        if !floors[i].is_finite() {
            break;
        }
        sum += floors[i];
        let candidate = (total + sum) / (m + 1) as f64;
        if candidate <= floors[i] {
            break;
        }
        level = candidate;
    }
    floors.iter().map(|&f| (level - f).max(0.0)).collect()
}

/// Zero forcing with water-filled powers.
pub fn zf_waterfill(inst: &BipartiteChannel) -> Result<BaselineResult> {
    let (n, k) = (inst.n(), inst.k());
    if n < k {
        return Err(Error::Infeasible(format!("zero forcing needs N ≥ K, got N={n}, K={k}")));
    }
    let h = inst.h();
    let hh = h.conj_transpose();
    let gram = h.matmul(&hh)?;
    let inv = hpd_solve(&gram, &CMatrix::identity(k)).map_err(|_| Error::Infeasible("channel matrix is rank deficient".into()))?;
    let w = hh.matmul(&inv)?;
    let mut dirs = CMatrix::zeros(n, k);
    let mut gains = Vec::with_capacity(k);
    for u in 0..k {
        let col = w.column(u);
        let norm = vec_norm(&col);
        // h_uᴴ w_u = 1, so the unit direction has gain 1/‖w_u‖².
        gains.push(1.0 / (norm * norm));
        let unit: Vec<C64> = col.iter().map(|z| z / norm).collect();
        dirs.set_column(u, &unit);
    }
    let p = water_fill(&gains, inst.power(), inst.noise());
    let mut v = dirs;
    for (u, &pu) in p.iter().enumerate() {
        let col: Vec<C64> = v.column(u).iter().map(|z| z * pu.sqrt()).collect();
        v.set_column(u, &col);
    }
    Ok(BaselineResult::new(inst, v, Utility::SumRate, 1, true, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_fixed, ScenarioConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_gains_get_equal_power() {
        assert_eq!(water_fill(&[2.0, 2.0, 2.0], 3.0, 1.0), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn weak_channel_can_be_switched_off() {
        let p = water_fill(&[10.0, 0.01], 1.0, 1.0);
        assert_eq!(p[1], 0.0);
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn water_levels_match_kkt() {
        let g = [3.0, 1.0, 0.4, 2.2];
        let p = water_fill(&g, 5.0, 1.0);
        assert!((p.iter().sum::<f64>() - 5.0).abs() < 1e-12);
        let level: Vec<f64> = p.iter().zip(&g).filter(|(x, _)| **x > 0.0).map(|(x, gi)| x + 1.0 / gi).collect();
        assert!(level.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
        for (x, gi) in p.iter().zip(&g) {
            if *x == 0.0 {
                assert!(1.0 / gi >= level[0]);
            }
        }
    }

    #[test]
    fn more_users_than_antennas_is_infeasible() {
        let inst = sample_fixed(&ScenarioConfig::default(), 2, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(matches!(zf_waterfill(&inst), Err(Error::Infeasible(_))));
    }

    #[test]
    fn single_user_reduces_to_matched_filter() {
        let inst = sample_fixed(&ScenarioConfig::default(), 3, 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let out = zf_waterfill(&inst).unwrap();
        let row = inst.h().row(0);
        let norm = vec_norm(row);
        for i in 0..3 {
            assert!((out.v[(i, 0)] - row[i].conj() * (10f64.sqrt() / norm)).norm() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_rows_give_matched_filter_directions() {
        let h = CMatrix::from_vec(2, 2, vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 2.0)]).unwrap();
        let inst = BipartiteChannel::new(h.clone(), 4.0, 1.0).unwrap();
        let out = zf_waterfill(&inst).unwrap();
        for u in 0..2 {
            let col = out.v.column(u);
            let row = h.row(u);
            let mf: Vec<C64> = row.iter().map(|z| z.conj() / vec_norm(row)).collect();
            let dir: Vec<C64> = col.iter().map(|z| z / vec_norm(&col)).collect();
            for (a, b) in dir.iter().zip(&mf) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn interference_is_nulled() {
        for seed in 0..50 {
            let inst = sample_fixed(&ScenarioConfig::default(), 4, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let out = zf_waterfill(&inst).unwrap();
            for k in 0..3 {
                for l in 0..3 {
                    if k == l {
                        continue;
                    }
                    let col = out.v.column(l);
                    let amp: C64 = inst.h().row(k).iter().zip(&col).map(|(a, b)| a * b).sum();
                    assert!(amp.norm() <= 1e-9 * vec_norm(inst.h().row(k)) * vec_norm(&col).max(1e-300));
                }
            }
            assert!((out.v.frobenius_sq() / 10.0 - 1.0).abs() < 1e-9);
        }
    }
}
