//! Rates, utilities and beam recovery from low-dimensional power features.
//!
//! Each routine exists twice: a direct complex version used for evaluation
//! and baselines, and a tape version over the real embedding used for
//! training. Tests pin the two against each other.

use crate::autodiff::{Tape, Var};
use crate::channel::BipartiteChannel;
use crate::error::{Error, Result};
use crate::linalg::{hpd_solve, power_iteration_max_eig, vec_norm, CMatrix, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Utility {
    SumRate,
    MinRate,
}

impl Utility {
    pub fn apply(self, rates: &[f64]) -> f64 {
        assert!(!rates.is_empty(), "utility of an empty rate vector");
        match self {
            Utility::SumRate => rates.iter().sum(),
            Utility::MinRate => rates.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Utility::SumRate => 0,
            Utility::MinRate => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Utility::SumRate),
            1 => Some(Utility::MinRate),
            _ => None,
        }
    }
}

impl std::str::FromStr for Utility {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Utility::SumRate),
            "min" => Ok(Utility::MinRate),
            other => Err(Error::Config(format!("unknown utility `{other}` (expected sum or min)"))),
        }
    }
}

impl std::fmt::Display for Utility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Utility::SumRate => "sum",
            Utility::MinRate => "min",
        })
    }
}

/// Downlink powers `p` and virtual uplink powers `q`, one entry per user.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamFeature {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl BeamFeature {
    pub fn uniform(k: usize, power: f64) -> Self {
        let share = vec![power / k as f64; k];
        Self { p: share.clone(), q: share }
    }
}

#[derive(Clone, Debug)]
pub struct BeamSolution {
    pub v: CMatrix,
    pub rates: Vec<f64>,
    pub utility: f64,
}

impl BeamSolution {
    pub fn evaluate(inst: &BipartiteChannel, v: CMatrix, mode: Utility) -> Self {
        let rates = rates(inst.h(), &v, inst.noise());
        let utility = mode.apply(&rates);
        Self { v, rates, utility }
    }
}

/// `|h_kᴴ v_l|²` for every user `k` (row) and beam `l` (column).
pub fn gain_matrix(h: &CMatrix, v: &CMatrix) -> Vec<f64> {
    let k = h.rows();
    let l = v.cols();
    let mut out = vec![0.0; k * l];
    for r in 0..k {
        let row = h.row(r);
        for c in 0..l {
            let amp: C64 = row.iter().enumerate().map(|(i, x)| x * v[(i, c)]).sum();
            out[r * l + c] = amp.norm_sqr();
        }
    }
    out
}

/// Per-user downlink SINR with column `k` of `v` serving user `k`.
pub fn sinrs(h: &CMatrix, v: &CMatrix, noise: f64) -> Vec<f64> {
    let k = h.rows();
    assert_eq!(v.cols(), k, "one beam per user");
    assert_eq!(v.rows(), h.cols(), "beam length must match antenna count");
    let g = gain_matrix(h, v);
    (0..k)
        .map(|u| {
            let row = &g[u * k..(u + 1) * k];
            let interference: f64 = row.iter().enumerate().filter(|&(l, _)| l != u).map(|(_, x)| x).sum();
            row[u] / (interference + noise)
        })
        .collect()
}

pub fn rates(h: &CMatrix, v: &CMatrix, noise: f64) -> Vec<f64> {
    sinrs(h, v, noise).into_iter().map(|s| s.ln_1p() / std::f64::consts::LN_2).collect()
}

/// Total transmit power `Σ|v_ik|²`.
pub fn total_power(v: &CMatrix) -> f64 {
    v.frobenius_sq()
}

/// `σ²I + Σ_l q_l h_l h_lᴴ` with `h_l` the conjugate of row `l`.
fn dual_covariance(inst: &BipartiteChannel, q: &[f64]) -> CMatrix {
    let h = inst.h();
    let n = inst.n();
    let mut a = CMatrix::identity(n);
    a.scale(inst.noise());
    for (l, &ql) in q.iter().enumerate() {
        if ql == 0.0 {
            continue;
        }
        let row = h.row(l);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] += ql * row[i].conj() * row[j];
            }
        }
    }
    a
}

fn check_powers(name: &str, x: &[f64], k: usize) -> Result<()> {
    if x.len() != k {
        return Err(Error::Shape(format!("{name} has {} entries for {k} users", x.len())));
    }
    if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Contract(format!("{name} must be finite and nonnegative")));
    }
    Ok(())
}

/// Unit-norm MMSE directions `(σ²I + Σ q_l h_l h_lᴴ)⁻¹ h_k`, one column per user.
pub fn beam_directions_ul(inst: &BipartiteChannel, q: &[f64]) -> Result<CMatrix> {
    check_powers("q", q, inst.k())?;
    let a = dual_covariance(inst, q);
    let rhs = inst.h().conj_transpose();
    let mut x = hpd_solve(&a, &rhs)?;
    for c in 0..x.cols() {
        let mut col = x.column(c);
        let norm = vec_norm(&col);
        if !(norm > 0.0) {
            return Err(Error::InvalidInstance(format!("user {c} has a zero direction")));
        }
        col.iter_mut().for_each(|z| *z /= norm);
        x.set_column(c, &col);
    }
    Ok(x)
}

/// Beams `√p_k` times the MMSE direction of user `k` under uplink powers `q`.
pub fn recover_beams(inst: &BipartiteChannel, feature: &BeamFeature) -> Result<CMatrix> {
    check_powers("p", &feature.p, inst.k())?;
    let mut v = beam_directions_ul(inst, &feature.q)?;
    for (c, &pk) in feature.p.iter().enumerate() {
        let col: Vec<C64> = v.column(c).into_iter().map(|z| z * pk.sqrt()).collect();
        v.set_column(c, &col);
    }
    Ok(v)
}

/// Dual uplink SINR of each user under powers `q` and unit receive `directions`.
pub fn ul_sinrs(inst: &BipartiteChannel, q: &[f64], directions: &CMatrix) -> Vec<f64> {
    let k = inst.k();
    let g = gain_matrix(inst.h(), directions);
    (0..k)
        .map(|u| {
            // |ṽ_uᴴ h_l|² = |h_lᴴ ṽ_u|², i.e. column u of the gain matrix.
            let interference: f64 = (0..k).filter(|&l| l != u).map(|l| q[l] * g[l * k + u]).sum();
            q[u] * g[u * k + u] / (interference + inst.noise())
        })
        .collect()
}

pub fn ul_rates(inst: &BipartiteChannel, q: &[f64], directions: &CMatrix) -> Vec<f64> {
    ul_sinrs(inst, q, directions).into_iter().map(|s| s.ln_1p() / std::f64::consts::LN_2).collect()
}

/// Downlink powers meeting SINR targets `gamma` scaled by a common factor `1/λ`
/// with fixed unit directions and total power `P`.
///
/// Users with a zero target get zero power and drop out of the eigenproblem.
pub fn downlink_powers(inst: &BipartiteChannel, directions: &CMatrix, gamma: &[f64]) -> Result<(Vec<f64>, f64)> {
    let k = inst.k();
    check_powers("gamma", gamma, k)?;
    let active: Vec<usize> = (0..k).filter(|&u| gamma[u] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::Contract("every SINR target is zero".into()));
    }
    let g = gain_matrix(inst.h(), directions);
    let m = active.len();
    let (noise, power) = (inst.noise(), inst.power());
    let mut omega = Vec::with_capacity(m);
    for &u in &active {
        let own = g[u * k + u];
        if !(own > 0.0) {
            return Err(Error::InvalidInstance(format!("user {u} has no gain along its own direction")));
        }
        omega.push(gamma[u] / own);
    }
    // Γ = [[ΩΦ, σ²Ω1], [1ᵀΩΦ/P, σ²·1ᵀΩ1/P]] over the active users.
    let dim = m + 1;
    let mut big = vec![0.0; dim * dim];
    for (a, &u) in active.iter().enumerate() {
        for (b, &l) in active.iter().enumerate() {
            if a != b {
                big[a * dim + b] = omega[a] * g[u * k + l];
            }
        }
        big[a * dim + m] = noise * omega[a];
    }
    for b in 0..dim {
        let col: f64 = (0..m).map(|a| big[a * dim + b]).sum();
        big[m * dim + b] = col / power;
    }
    let (lambda, vec) = power_iteration_max_eig(&big, dim)?;
    let mut p = vec![0.0; k];
    for (a, &u) in active.iter().enumerate() {
        p[u] = vec[a];
    }
    if p.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::Contract("negative downlink power from the Perron vector".into()));
    }
    // The eigenvector already sums to P; this removes iteration round-off.
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x *= power / sum);
    Ok((p, lambda))
}

/// Output of [`recover_minrate_beams`].
#[derive(Clone, Debug)]
pub struct MinRateBeams {
    pub v: CMatrix,
    pub p: Vec<f64>,
    /// Uplink SINRs used as downlink targets.
    pub gamma: Vec<f64>,
    /// Dominant eigenvalue; one when the targets are met exactly.
    pub lambda: f64,
}

/// Downlink beams that reproduce the dual uplink SINRs of `q`.
pub fn recover_minrate_beams(inst: &BipartiteChannel, q: &[f64]) -> Result<MinRateBeams> {
    let directions = beam_directions_ul(inst, q)?;
    let gamma = ul_sinrs(inst, q, &directions);
    let (p, lambda) = downlink_powers(inst, &directions, &gamma)?;
    let mut v = directions;
    for (c, &pk) in p.iter().enumerate() {
        let col: Vec<C64> = v.column(c).into_iter().map(|z| z * pk.sqrt()).collect();
        v.set_column(c, &col);
    }
    Ok(MinRateBeams { v, p, gamma, lambda })
}

/// Instance constants placed on a tape once and shared by every recovery step.
///
/// Complex `N`-vectors are embedded as `[re; im]` columns, complex matrices as
/// `[[Re, −Im], [Im, Re]]`.
#[derive(Clone, Copy, Debug)]
pub struct TapeInstance {
    n: usize,
    k: usize,
    noise: f64,
    /// 2K×2N embedding of H.
    h_embed: Var,
    /// 2N×K columns `[Re h_k; Im h_k]`.
    rhs: Var,
    /// (2N·2N)×K; column `l` is the flattened embedding of `h_l h_lᴴ`.
    outer: Var,
    /// σ²I in the 2N×2N embedding.
    noise_eye: Var,
}

impl TapeInstance {
    pub fn new(tape: &mut Tape<'_>, inst: &BipartiteChannel) -> Self {
        let (n, k) = (inst.n(), inst.k());
        let h = inst.h();
        let mut h_embed = vec![0.0; 4 * k * n];
        let w = 2 * n;
        for r in 0..k {
            for i in 0..n {
                let z = h[(r, i)];
                h_embed[r * w + i] = z.re;
                h_embed[r * w + n + i] = -z.im;
                h_embed[(k + r) * w + i] = z.im;
                h_embed[(k + r) * w + n + i] = z.re;
            }
        }
        let mut rhs = vec![0.0; 2 * n * k];
        for r in 0..k {
            for i in 0..n {
                // h_k is the conjugate of row k.
                rhs[i * k + r] = h[(r, i)].re;
                rhs[(n + i) * k + r] = -h[(r, i)].im;
            }
        }
        let mut outer = vec![0.0; w * w * k];
        for l in 0..k {
            let row = h.row(l);
            for i in 0..n {
                for j in 0..n {
                    let z = row[i].conj() * row[j];
                    let mut put = |a: usize, b: usize, v: f64| outer[(a * w + b) * k + l] = v;
                    put(i, j, z.re);
                    put(i, n + j, -z.im);
                    put(n + i, j, z.im);
                    put(n + i, n + j, z.re);
                }
            }
        }
        let eye: Vec<f64> = (0..w * w).map(|x| if x % (w + 1) == 0 { inst.noise() } else { 0.0 }).collect();
        Self {
            n,
            k,
            noise: inst.noise(),
            h_embed: tape.constant(h_embed, 2 * k, w),
            rhs: tape.constant(rhs, w, k),
            outer: tape.constant(outer, w * w, k),
            noise_eye: tape.constant(eye, w, w),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Unit MMSE directions (2N×K) for uplink powers `q` (1×K).
    pub fn directions(&self, tape: &mut Tape<'_>, q: Var) -> Result<Var> {
        let w = 2 * self.n;
        let qc = tape.reshape(q, self.k, 1);
        let flat = tape.matmul(self.outer, qc);
        let cov = tape.reshape(flat, w, w);
        let cov = tape.add(cov, self.noise_eye);
        let x = tape.spd_solve(cov, self.rhs)?;
        let sq = tape.mul(x, x);
        let norms = tape.col_sums(sq);
        let norms = tape.sqrt(norms);
        let inv = tape.recip(norms);
        Ok(tape.mul_cols(x, inv))
    }

    /// Embedded beams (2N×K) for downlink powers `p` and uplink powers `q`.
    pub fn recover_beams(&self, tape: &mut Tape<'_>, p: Var, q: Var) -> Result<Var> {
        let d = self.directions(tape, q)?;
        let amp = tape.sqrt(p);
        Ok(tape.mul_cols(d, amp))
    }

    /// `|h_kᴴ v_l|²` as a K×L node.
    pub fn gains(&self, tape: &mut Tape<'_>, v: Var) -> Var {
        let k = self.k;
        let y = tape.matmul(self.h_embed, v);
        let sq = tape.mul(y, y);
        let re = tape.gather_rows(sq, (0..k).collect());
        let im = tape.gather_rows(sq, (k..2 * k).collect());
        tape.add(re, im)
    }

    /// Downlink rates (1×K) of embedded beams `v`.
    pub fn rates(&self, tape: &mut Tape<'_>, v: Var) -> Var {
        let k = self.k;
        let g = self.gains(tape, v);
        let signal = tape.gather(g, (0..k).map(|u| u * k + u).collect(), 1, k);
        let total = tape.row_sums(g);
        let total = tape.reshape(total, 1, k);
        let interference = tape.sub(total, signal);
        let denom = tape.shift(interference, self.noise);
        let sinr = tape.div(signal, denom);
        tape.log2_1p(sinr)
    }

    /// Dual uplink rates (1×K) under powers `q` and unit `directions`.
    pub fn ul_rates(&self, tape: &mut Tape<'_>, q: Var, directions: Var) -> Var {
        let k = self.k;
        let g = self.gains(tape, directions);
        let own = tape.gather(g, (0..k).map(|u| u * k + u).collect(), 1, k);
        let signal = tape.mul(q, own);
        let total = tape.matmul(q, g);
        let interference = tape.sub(total, signal);
        let denom = tape.shift(interference, self.noise);
        let sinr = tape.div(signal, denom);
        tape.log2_1p(sinr)
    }
}

/// Converts an embedded beam node value (2N×K) back to a complex matrix.
pub fn unembed(values: &[f64], n: usize, k: usize) -> CMatrix {
    assert_eq!(values.len(), 2 * n * k);
    CMatrix::from_fn(n, k, |i, c| C64::new(values[i * k + c], values[(n + i) * k + c]))
}
