//! Random problem instances: user drops, path loss and Rayleigh fading.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{vec_norm, CMatrix, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// All antennas at the cell center.
    Colocated,
    /// Antennas scattered on a circle around the center.
    CellFree,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "colocated" => Ok(Layout::Colocated),
            "cellfree" => Ok(Layout::CellFree),
            other => Err(Error::Config(format!("unknown layout `{other}` (expected colocated or cellfree)"))),
        }
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Layout::Colocated => "colocated",
            Layout::CellFree => "cellfree",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub max_antennas: usize,
    pub max_users: usize,
    /// Smallest antenna and user count drawn by [`sample_instance`].
    pub min_size: usize,
    /// Transmit power, linear. With unit noise this is the SNR.
    pub power: f64,
    pub noise: f64,
    pub layout: Layout,
    pub cell_radius: f64,
    pub antenna_radius: f64,
    pub d_ref: f64,
    pub alpha: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            max_antennas: 4,
            max_users: 4,
            min_size: 2,
            power: 10.0,
            noise: 1.0,
            layout: Layout::Colocated,
            cell_radius: 100.0,
            antenna_radius: 30.0,
            d_ref: 30.0,
            alpha: 3.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_antennas == 0 || self.max_users == 0 {
            return Err(Error::Config("maximum antenna and user counts must be at least 1".into()));
        }
        if self.min_size == 0 || self.min_size > self.max_antennas.min(self.max_users) {
            return Err(Error::Config(format!("size floor {} must lie in 1..={}", self.min_size, self.max_antennas.min(self.max_users))));
        }
        let positive = [self.power, self.noise, self.cell_radius, self.antenna_radius, self.d_ref, self.alpha];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config("power, noise, radii, reference distance and exponent must be positive".into()));
        }
        Ok(())
    }
}

/// Large-scale gain `1 / (1 + (d/d_ref)^alpha)`.
pub fn path_gain(d: f64, d_ref: f64, alpha: f64) -> f64 {
    1.0 / (1.0 + (d / d_ref).powf(alpha))
}

/// One problem instance: `K×N` channel, power budget and noise variance.
///
/// Row `k` of `h` holds the conjugated channel of user `k`, so the received
/// amplitude of beam `v` at user `k` is `Σ_i h[k][i]·v[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteChannel {
    h: CMatrix,
    power: f64,
    noise: f64,
}

impl BipartiteChannel {
    pub fn new(h: CMatrix, power: f64, noise: f64) -> Result<Self> {
        if h.rows() == 0 || h.cols() == 0 {
            return Err(Error::InvalidInstance("empty channel matrix".into()));
        }
        if !h.is_finite() {
            return Err(Error::InvalidInstance("channel has non-finite entries".into()));
        }
        if !(power.is_finite() && power > 0.0) || !(noise.is_finite() && noise > 0.0) {
            return Err(Error::InvalidInstance(format!("power {power} and noise {noise} must be positive")));
        }
        if let Some(k) = (0..h.rows()).find(|&k| vec_norm(h.row(k)) == 0.0) {
            return Err(Error::InvalidInstance(format!("user {k} has an all-zero channel")));
        }
        Ok(Self { h, power, noise })
    }

    /// Antenna count.
    pub fn n(&self) -> usize {
        self.h.cols()
    }

    /// User count.
    pub fn k(&self) -> usize {
        self.h.rows()
    }

    pub fn h(&self) -> &CMatrix {
        &self.h
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Same channel under a different power budget.
    pub fn with_power(&self, power: f64) -> Result<Self> {
        Self::new(self.h.clone(), power, self.noise)
    }

    /// Applies a user permutation (`users[k]` is the old row placed at `k`)
    /// and an antenna permutation (`antennas[i]` is the old column placed at `i`).
    pub fn permuted(&self, users: &[usize], antennas: &[usize]) -> Self {
        let h = CMatrix::from_fn(self.k(), self.n(), |k, i| self.h[(users[k], antennas[i])]);
        Self { h, power: self.power, noise: self.noise }
    }

    /// Plain-text record: a header line, dims, power, noise, then one line per
    /// user with interleaved real and imaginary parts.
    pub fn to_text(&self) -> String {
        let mut s = String::from("bgnn-instance 1\n");
        let _ = writeln!(s, "n {}", self.n());
        let _ = writeln!(s, "k {}", self.k());
        let _ = writeln!(s, "power {:?}", self.power);
        let _ = writeln!(s, "noise {:?}", self.noise);
        for k in 0..self.k() {
            let row: Vec<String> = self.h.row(k).iter().map(|z| format!("{:?} {:?}", z.re, z.im)).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |detail: String| Error::Format { what: "instance", detail };
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some("bgnn-instance 1") => {}
            other => return Err(bad(format!("expected header `bgnn-instance 1`, found {other:?}"))),
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{name}` line")))?;
            match line.split_once(' ') {
                Some((key, value)) if key == name => Ok(value.trim().to_string()),
                _ => Err(bad(format!("expected `{name} <value>`, found `{line}`"))),
            }
        };
        let n: usize = field("n")?.parse().map_err(|e| bad(format!("n: {e}")))?;
        let k: usize = field("k")?.parse().map_err(|e| bad(format!("k: {e}")))?;
        let power: f64 = field("power")?.parse().map_err(|e| bad(format!("power: {e}")))?;
        let noise: f64 = field("noise")?.parse().map_err(|e| bad(format!("noise: {e}")))?;
        let mut data = Vec::with_capacity(n * k);
        for row in 0..k {
            let line = lines.next().ok_or_else(|| bad(format!("missing channel row {row}")))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("row {row}: {e}")))?;
            if vals.len() != 2 * n {
                return Err(bad(format!("row {row} has {} numbers, expected {}", vals.len(), 2 * n)));
            }
            data.extend(vals.chunks(2).map(|p| C64::new(p[0], p[1])));
        }
        if let Some(extra) = lines.next() {
            return Err(bad(format!("trailing content `{extra}`")));
        }
        Self::new(CMatrix::from_vec(k, n, data)?, power, noise)
    }
}

/// Uniform point in a disk of radius `r`.
fn drop_in_disk<R: Rng + ?Sized>(r: f64, rng: &mut R) -> (f64, f64) {
    let rho = r * rng.random::<f64>().sqrt();
    let phi = 2.0 * PI * rng.random::<f64>();
    (rho * phi.cos(), rho * phi.sin())
}

/// `CN(0, var)` draw.
fn complex_gaussian<R: Rng + ?Sized>(var: f64, rng: &mut R) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Draws `N` and `K` uniformly from `min_size..=max` and then a channel.
pub fn sample_instance<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<BipartiteChannel> {
    cfg.validate()?;
    let n = rng.random_range(cfg.min_size..=cfg.max_antennas);
    let k = rng.random_range(cfg.min_size..=cfg.max_users);
    sample_fixed(cfg, n, k, rng)
}

/// Channel with forced sizes; the configured maxima do not apply.
pub fn sample_fixed<R: Rng + ?Sized>(cfg: &ScenarioConfig, n: usize, k: usize, rng: &mut R) -> Result<BipartiteChannel> {
    if n == 0 || k == 0 {
        return Err(Error::Config(format!("instance sizes must be positive, got N={n}, K={k}")));
    }
    let users: Vec<(f64, f64)> = (0..k).map(|_| drop_in_disk(cfg.cell_radius, rng)).collect();
    let h = match cfg.layout {
        Layout::Colocated => {
            let gains: Vec<f64> = users.iter().map(|(x, y)| path_gain(x.hypot(*y), cfg.d_ref, cfg.alpha)).collect();
            CMatrix::from_fn(k, n, |kk, _| complex_gaussian(gains[kk], rng))
        }
        Layout::CellFree => {
            let antennas: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    let phi = 2.0 * PI * rng.random::<f64>();
                    (cfg.antenna_radius * phi.cos(), cfg.antenna_radius * phi.sin())
                })
                .collect();
            CMatrix::from_fn(k, n, |kk, i| {
                let d = (users[kk].0 - antennas[i].0).hypot(users[kk].1 - antennas[i].1);
                complex_gaussian(1.0, rng) * path_gain(d, cfg.d_ref, cfg.alpha)
            })
        }
    };
    BipartiteChannel::new(h, cfg.power, cfg.noise)
}

/// Converts decibels to a linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
