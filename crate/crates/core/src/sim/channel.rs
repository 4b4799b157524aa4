//! Large-scale fading, association, and per-subframe small-scale draws.

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Grid;
use crate::rng::{stream_rng, Stream, StreamRng};
use crate::scalar::Scalar;
use crate::sim::config::{db_to_linear, EstimatorMode, Scenario, SystemConfig};
use crate::sim::topology::{generate_topology, Topology};

/// Pathloss plus shadowing in dB.
pub fn lsf_gain_db(distance_m: f64, scenario: Scenario, f_c_ghz: f64, shadowing_db: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance_m}")));
    }
    let p = scenario.params();
    Ok(-32.4 - 20.0 * f_c_ghz.log10() - p.pathloss_exponent * distance_m.log10() + shadowing_db)
}

/// Linear large-scale gain.
pub fn lsf_gain(distance_m: f64, scenario: Scenario, f_c_ghz: f64, shadowing_db: f64) -> Result<f64> {
    lsf_gain_db(distance_m, scenario, f_c_ghz, shadowing_db).map(db_to_linear)
}

/// Binary AP-UE association matrix, `M x K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Association(pub Grid<bool>);

impl Association {
    pub fn new(grid: Grid<bool>) -> Result<Self> {
        let a = Self(grid);
        for k in 0..a.k() {
            if a.serving(k).is_empty() {
                return Err(Error::Input(format!("UE {k} has no serving AP")));
            }
        }
        Ok(a)
    }

    pub fn full(m: usize, k: usize) -> Self {
        Self(Grid::filled(m, k, true))
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn get(&self, m: usize, k: usize) -> bool {
        self.0[(m, k)]
    }

    /// UEs served by AP `m`, ascending.
    pub fn served_by(&self, m: usize) -> Vec<usize> {
        (0..self.k()).filter(|&k| self.get(m, k)).collect()
    }

    /// APs serving UE `k`, ascending.
    pub fn serving(&self, k: usize) -> Vec<usize> {
        (0..self.m()).filter(|&m| self.get(m, k)).collect()
    }

    pub fn as_real<T: Scalar>(&self) -> Grid<T> {
        self.0.map(|&a| if a { T::one() } else { T::zero() })
    }
}

/// Each UE joins its strongest AP plus every AP with gain at least `rho`.
pub fn associate<T: Scalar>(beta: &Grid<T>, rho: T) -> Association {
    let (m, k) = (beta.rows(), beta.cols());
    let mut a = Grid::filled(m, k, false);
    for u in 0..k {
        let mut best = 0;
        for ap in 0..m {
            if beta[(ap, u)] > beta[(best, u)] {
                best = ap;
            }
            if beta[(ap, u)] >= rho {
                a[(ap, u)] = true;
            }
        }
        a[(best, u)] = true;
    }
    Association(a)
}

/// Physical constants needed by the estimation/beamforming/rate chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams<T> {
    pub p_ul: T,
    pub p_max: T,
    pub noise_ap: T,
    pub noise_ue: T,
    pub tau_c: usize,
    pub estimator: EstimatorMode,
}

impl<T: Scalar> LinkParams<T> {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        let noise = T::of(cfg.noise_w());
        Self {
            p_ul: T::of(cfg.p_ul_w()),
            p_max: T::of(cfg.p_max_w()),
            noise_ap: noise,
            noise_ue: noise,
            tau_c: cfg.tau_c,
            estimator: cfg.estimator,
        }
    }
}

/// Standard circularly-symmetric complex Gaussian with the given variance.
pub fn complex_gaussian<T: Scalar>(rng: &mut StreamRng, variance: f64) -> Complex<T> {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex::new(T::of(re * s), T::of(im * s))
}

/// LSF gains, association and the small-scale/pilot-noise draws of one frame.
///
/// Small-scale vectors are stored `[t][m][k][n]`; pilot noise is stored the
/// same way but indexed by noise slot (see `estimation::noise_slot`), so
/// UEs sharing a sequence observe the same despread noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet<T> {
    pub beta: Grid<T>,
    pub assoc: Association,
    pub noise_ap: T,
    pub noise_ue: T,
    n: usize,
    n_t: usize,
    ssf: Vec<Complex<T>>,
    pilot_noise: Vec<Complex<T>>,
}

impl<T: Scalar> ChannelSet<T> {
    /// Draws topology, shadowing and SSF for a whole frame from `seed`.
    pub fn generate(cfg: &SystemConfig, seed: u64) -> Result<(Topology, Self)> {
        let topo = generate_topology(cfg, seed)?;
        let ch = Self::from_topology(cfg, &topo, seed)?;
        Ok((topo, ch))
    }

    pub fn from_topology(cfg: &SystemConfig, topo: &Topology, seed: u64) -> Result<Self> {
        let p = cfg.params();
        let shadow = Normal::new(0.0, p.shadowing_std_db).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = stream_rng(seed, Stream::Shadowing, 0);
        let mut beta = Grid::filled(cfg.m, cfg.k, T::zero());
        for m in 0..cfg.m {
            for k in 0..cfg.k {
                let chi = shadow.sample(&mut rng);
                beta[(m, k)] = T::of(lsf_gain(topo.distances[(m, k)], cfg.scenario, cfg.f_c_ghz, chi)?);
            }
        }
        Self::from_beta(cfg, beta, seed)
    }

    /// Builds a frame around a given LSF matrix; association uses the
    /// configured threshold.
    pub fn from_beta(cfg: &SystemConfig, beta: Grid<T>, seed: u64) -> Result<Self> {
        let assoc = associate(&beta, T::of(cfg.rho()));
        Self::with_association(cfg, beta, assoc, seed)
    }

    pub fn with_association(cfg: &SystemConfig, beta: Grid<T>, assoc: Association, seed: u64) -> Result<Self> {
        if beta.rows() != cfg.m || beta.cols() != cfg.k {
            return Err(Error::Shape(format!(
                "beta is {}x{}, config expects {}x{}",
                beta.rows(),
                beta.cols(),
                cfg.m,
                cfg.k
            )));
        }
        if beta.as_slice().iter().any(|&b| !(b > T::zero()) || !b.is_finite()) {
            return Err(Error::Input("LSF gains must be positive and finite".into()));
        }
        let assoc = Association::new(assoc.0)?;
        let noise = T::of(cfg.noise_w());
        let mut ch = Self {
            beta,
            assoc,
            noise_ap: noise,
            noise_ue: noise,
            n: cfg.n,
            n_t: cfg.n_t,
            ssf: Vec::new(),
            pilot_noise: Vec::new(),
        };
        let len = cfg.n_t * cfg.m * cfg.k * cfg.n;
        let mut rng = stream_rng(seed, Stream::SmallScale, 0);
        ch.ssf = (0..len).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        ch.redraw_pilot_noise(seed, 0);
        Ok(ch)
    }

    /// Replaces the pilot noise with a fresh draw from stream `(seed, index)`.
    pub fn redraw_pilot_noise(&mut self, seed: u64, index: u64) {
        let len = self.n_t * self.m() * self.k() * self.n;
        let var = self.noise_ap.as_f64();
        let mut rng = stream_rng(seed, Stream::PilotNoise, index);
        self.pilot_noise = (0..len).map(|_| complex_gaussian(&mut rng, var)).collect();
    }

    /// Sets every pilot-noise sample to zero.
    pub fn silence_pilot_noise(&mut self) {
        for z in &mut self.pilot_noise {
            *z = Complex::new(T::zero(), T::zero());
        }
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.beta.rows()
    }
    #[inline]
    pub fn k(&self) -> usize {
        self.beta.cols()
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }
    #[inline]
    pub fn n_t(&self) -> usize {
        self.n_t
    }

    #[inline]
    fn offset(&self, t: usize, m: usize, k: usize) -> usize {
        ((t * self.m() + m) * self.k() + k) * self.n
    }

    /// Small-scale vector `h_mk` in subframe `t`.
    pub fn h(&self, t: usize, m: usize, k: usize) -> &[Complex<T>] {
        let o = self.offset(t, m, k);
        &self.ssf[o..o + self.n]
    }

    pub fn h_mut(&mut self, t: usize, m: usize, k: usize) -> &mut [Complex<T>] {
        let o = self.offset(t, m, k);
        let n = self.n;
        &mut self.ssf[o..o + n]
    }

    /// Despread pilot noise at AP `m` in noise slot `s`, subframe `t`.
    pub fn pilot_noise(&self, t: usize, m: usize, s: usize) -> &[Complex<T>] {
        let o = self.offset(t, m, s);
        &self.pilot_noise[o..o + self.n]
    }

    pub fn ssf_raw(&self) -> &[Complex<T>] {
        &self.ssf
    }

    pub fn pilot_noise_raw(&self) -> &[Complex<T>] {
        &self.pilot_noise
    }

    pub(crate) fn from_raw_parts(
        beta: Grid<T>,
        assoc: Association,
        noise_ap: T,
        noise_ue: T,
        n: usize,
        n_t: usize,
        ssf: Vec<Complex<T>>,
        pilot_noise: Vec<Complex<T>>,
    ) -> Result<Self> {
        let len = n_t * beta.rows() * beta.cols() * n;
        if ssf.len() != len || pilot_noise.len() != len {
            return Err(Error::Shape("SSF/noise length does not match dims".into()));
        }
        Ok(Self { beta, assoc, noise_ap, noise_ue, n, n_t, ssf, pilot_noise })
    }

    /// Keeps only subframe `t` (used to evaluate a single subframe).
    pub fn single_subframe(&self, t: usize) -> Self {
        let per = self.m() * self.k() * self.n;
        Self {
            beta: self.beta.clone(),
            assoc: self.assoc.clone(),
            noise_ap: self.noise_ap,
            noise_ue: self.noise_ue,
            n: self.n,
            n_t: 1,
            ssf: self.ssf[t * per..(t + 1) * per].to_vec(),
            pilot_noise: self.pilot_noise[t * per..(t + 1) * per].to_vec(),
        }
    }
}

/// Random draw helper for tests and examples: uniform LSF gains in dB.
pub fn random_beta<T: Scalar>(rng: &mut StreamRng, m: usize, k: usize, lo_db: f64, hi_db: f64) -> Grid<T> {
    Grid::from_fn(m, k, |_, _| T::of(db_to_linear(rng.random_range(lo_db..hi_db))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn umi_pathloss_at_threshold_distance() {
        let pl = lsf_gain_db(200.0, Scenario::UMi, 6.0, 0.0).unwrap();
        // -32.4 - 20*log10(6) - 31.9*log10(200) = -32.4 - 15.56303 - 73.40286
        assert!((pl - (-121.36589)).abs() < 1e-4, "{pl}");
        assert!((pl - SystemConfig::table().rho_db()).abs() < 1e-12);
    }

    #[test]
    fn shadowing_is_additive() {
        let a = lsf_gain_db(123.0, Scenario::UMi, 6.0, 0.0).unwrap();
        let b = lsf_gain_db(123.0, Scenario::UMi, 6.0, 8.2).unwrap();
        assert!((b - a - 8.2).abs() < 1e-12);
    }

    #[test]
    fn uma_threshold_matches_formula() {
        let cfg = SystemConfig { scenario: Scenario::UMa, ..SystemConfig::table() };
        let pl = lsf_gain_db(450.0, Scenario::UMa, 6.0, 0.0).unwrap();
        let by_hand = -32.4 - 20.0 * 6f64.log10() - 30.0 * 450f64.log10();
        assert!((pl - by_hand).abs() < 1e-12);
        assert!((cfg.rho_db() - by_hand).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_distance_is_domain_error() {
        assert!(matches!(lsf_gain(0.0, Scenario::UMi, 6.0, 0.0), Err(Error::Domain(_))));
        assert!(lsf_gain(-1.0, Scenario::UMi, 6.0, 0.0).is_err());
    }

    #[test]
    fn association_rules() {
        let beta = Grid::from_rows(vec![vec![2.0, 1.0], vec![3.0, 4.0]]).unwrap();
        let a = associate(&beta, 2.5);
        assert_eq!(a.0.to_rows(), vec![vec![false, false], vec![true, true]]);

        let low = associate(&beta, 100.0);
        assert_eq!(low.0.to_rows(), vec![vec![false, false], vec![true, true]]);
        let beta2 = Grid::from_rows(vec![vec![5.0, 1.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(associate(&beta2, 100.0).0.to_rows(), vec![vec![true, false], vec![false, true]]);

        let all = associate(&beta, 0.5);
        assert!(all.0.as_slice().iter().all(|&x| x));
    }

    #[test]
    fn generated_channels_are_reproducible_and_associated() {
        let cfg = SystemConfig::desk();
        let (_, a) = ChannelSet::<f64>::generate(&cfg, 9).unwrap();
        let (_, b) = ChannelSet::<f64>::generate(&cfg, 9).unwrap();
        assert_eq!(a, b);
        for k in 0..cfg.k {
            assert!(!a.assoc.serving(k).is_empty());
        }
        assert!(a.beta.as_slice().iter().all(|&b| b > 0.0));
    }

    #[test]
    fn ssf_has_unit_variance() {
        let cfg = SystemConfig { m: 4, n: 8, k: 10, n_t: 50, ..SystemConfig::desk() };
        let (_, ch) = ChannelSet::<f64>::generate(&cfg, 1).unwrap();
        let p: f64 = ch.ssf_raw().iter().map(|z| z.norm_sqr()).sum::<f64>() / ch.ssf_raw().len() as f64;
        assert!((p - 1.0).abs() < 0.05, "{p}");
        let mean: Complex<f64> = ch.ssf_raw().iter().sum::<Complex<f64>>() / ch.ssf_raw().len() as f64;
        assert!(mean.norm() < 0.05);
    }
}
