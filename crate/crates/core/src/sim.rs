//! Virtual species with known spatial structure.
//!
//! Environmental features are independent unit-variance Gaussian random
//! fields with exponential covariance, sampled on a grid by circulant
//! embedding and interpolated bilinearly to random point locations. The
//! presence probability is a logistic function of the features, optionally
//! plus an unobserved spatial effect that is redrawn every few years. That
//! effect is what lets nearby training points leak into validation under
//! random folds while being of no help on a later test period.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Record, YearRange};
use crate::error::{Error, Result};
use crate::geo::{LocalProjection, KM_PER_DEGREE};
use crate::rng;

/// Grid nodes per correlation scale at most, and per axis at most.
const NODES_PER_RANGE: f64 = 15.0;
const MAX_CELLS_PER_AXIS: f64 = 400.0;
/// Embedding doublings tried before negative eigenvalues are clipped.
const MAX_PADDING_ROUNDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualSpeciesParams {
    pub n_points: usize,
    /// `[min_lon, min_lat, max_lon, max_lat]` in degrees.
    pub bbox: [f64; 4],
    /// Effective range of every environmental field.
    pub range_km: f64,
    pub n_env_features: usize,
    /// One logistic coefficient per feature.
    pub coefficients: Vec<f64>,
    #[serde(default)]
    pub intercept: f64,
    /// Probability that a drawn label is flipped.
    pub noise_rate: f64,
    pub years: YearRange,
    pub seed: u64,
    /// Standard deviation of the unobserved spatial effect on the log-odds.
    #[serde(default)]
    pub latent_sd: f64,
    /// The unobserved effect is redrawn every this many years; `None` keeps one draw.
    #[serde(default)]
    pub latent_epoch_years: Option<u32>,
    /// Effective range of the unobserved effect; defaults to `range_km`.
    #[serde(default)]
    pub latent_range_km: Option<f64>,
}

/// A square box of side `side_km` centred on `(lon, lat)`.
pub fn bbox_around(center: (f64, f64), side_km: f64) -> [f64; 4] {
    let half_lat = side_km / 2.0 / KM_PER_DEGREE;
    let half_lon = side_km / 2.0 / (KM_PER_DEGREE * center.1.to_radians().cos());
    [
        center.0 - half_lon,
        center.1 - half_lat,
        center.0 + half_lon,
        center.1 + half_lat,
    ]
}

impl VirtualSpeciesParams {
    /// Defaults around `(10 E, 50 N)`; adjust fields as needed.
    pub fn new(n_points: usize, side_km: f64, range_km: f64, seed: u64) -> Self {
        VirtualSpeciesParams {
            n_points,
            bbox: bbox_around((10.0, 50.0), side_km),
            range_km,
            n_env_features: 4,
            coefficients: vec![1.5, -1.0, 0.8, 0.0],
            intercept: -0.5,
            noise_rate: 0.1,
            years: YearRange {
                first: 2000,
                last: 2019,
            },
            seed,
            latent_sd: 0.0,
            latent_epoch_years: None,
            latent_range_km: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Simulation(m));
        let [x0, y0, x1, y1] = self.bbox;
        if !(x0 < x1 && y0 < y1 && x0 >= -180.0 && x1 <= 180.0 && y0 >= -90.0 && y1 <= 90.0) {
            return bad(format!("invalid bounding box {:?}", self.bbox));
        }
        if self.n_points == 0 {
            return bad("n_points must be positive".into());
        }
        if !(self.range_km > 0.0 && self.range_km.is_finite()) {
            return bad(format!("range_km = {} must be positive", self.range_km));
        }
        if self.n_env_features == 0 || self.coefficients.len() != self.n_env_features {
            return bad(format!(
                "{} coefficients for {} features",
                self.coefficients.len(),
                self.n_env_features
            ));
        }
        if !(0.0..0.5).contains(&self.noise_rate) {
            return bad(format!("noise rate {} is outside [0, 0.5)", self.noise_rate));
        }
        if !(self.latent_sd >= 0.0 && self.latent_sd.is_finite()) {
            return bad(format!("latent_sd = {} must be non-negative", self.latent_sd));
        }
        if self.latent_epoch_years == Some(0) {
            return bad("latent_epoch_years must be at least 1".into());
        }
        if let Some(r) = self.latent_range_km {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("latent_range_km = {r} must be positive"));
            }
        }
        Ok(())
    }
}

/// A field sampled on a regular grid with origin `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub spacing_km: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major: `values[j * nx + i]` is node `(i, j)`.
    pub values: Vec<f64>,
}

impl GridField {
    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    /// Bilinear interpolation; points outside the grid take the nearest edge.
    pub fn at(&self, x: f64, y: f64) -> f64 {
        let gx = (x / self.spacing_km).clamp(0.0, (self.nx - 1) as f64);
        let gy = (y / self.spacing_km).clamp(0.0, (self.ny - 1) as f64);
        let i = (gx.floor() as usize).min(self.nx.saturating_sub(2));
        let j = (gy.floor() as usize).min(self.ny.saturating_sub(2));
        let (tx, ty) = (gx - i as f64, gy - j as f64);
        let i1 = (i + 1).min(self.nx - 1);
        let j1 = (j + 1).min(self.ny - 1);
        let low = self.node(i, j) * (1.0 - tx) + self.node(i1, j) * tx;
        let high = self.node(i, j1) * (1.0 - tx) + self.node(i1, j1) * tx;
        low * (1.0 - ty) + high * ty
    }
}

fn fft2(planner: &mut FftPlanner<f64>, data: &mut [Complex<f64>], mx: usize, my: usize) {
    planner.plan_fft_forward(mx).process(data);
    let column = planner.plan_fft_forward(my);
    let mut buf = vec![Complex::new(0.0, 0.0); my];
    for i in 0..mx {
        for j in 0..my {
            buf[j] = data[j * mx + i];
        }
        column.process(&mut buf);
        for j in 0..my {
            data[j * mx + i] = buf[j];
        }
    }
}

/// Eigenvalues of the circulant embedding of `exp(-h / scale)` on an
/// `mx × my` torus with node spacing `s`.
fn embedding_spectrum(planner: &mut FftPlanner<f64>, mx: usize, my: usize, s: f64, scale: f64) -> Vec<f64> {
    let mut c = vec![Complex::new(0.0, 0.0); mx * my];
    for j in 0..my {
        let dy = j.min(my - j) as f64 * s;
        for i in 0..mx {
            let dx = i.min(mx - i) as f64 * s;
            c[j * mx + i] = Complex::new((-(dx * dx + dy * dy).sqrt() / scale).exp(), 0.0);
        }
    }
    fft2(planner, &mut c, mx, my);
    c.into_iter().map(|z| z.re).collect()
}

/// `count` independent unit-variance fields with exponential covariance of
/// effective range `range_km`, covering `width_km × height_km`.
pub fn gaussian_fields(
    width_km: f64,
    height_km: f64,
    range_km: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<GridField>> {
    if !(range_km > 0.0 && width_km > 0.0 && height_km > 0.0) {
        return Err(Error::Simulation(format!(
            "field of {width_km} × {height_km} km with range {range_km} km"
        )));
    }
    let scale = range_km / 3.0;
    let spacing = (range_km / NODES_PER_RANGE).max(width_km.max(height_km) / MAX_CELLS_PER_AXIS);
    let nx = (width_km / spacing).ceil() as usize + 1;
    let ny = (height_km / spacing).ceil() as usize + 1;
    let mut planner = FftPlanner::new();
    let (mut mx, mut my) = (2 * nx, 2 * ny);
    let mut spectrum = embedding_spectrum(&mut planner, mx, my, spacing, scale);
    let negative = |l: &[f64]| {
        let max = l.iter().cloned().fold(0.0, f64::max);
        l.iter().cloned().fold(0.0, f64::min) < -1e-10 * max
    };
    let mut rounds = 0;
    while negative(&spectrum) && rounds < MAX_PADDING_ROUNDS {
        mx *= 2;
        my *= 2;
        rounds += 1;
        spectrum = embedding_spectrum(&mut planner, mx, my, spacing, scale);
    }
    if negative(&spectrum) {
        log::warn!("circulant embedding has negative eigenvalues after padding; clipping them to zero");
    }
    if spectrum.iter().all(|&l| l <= 0.0) {
        return Err(Error::Simulation(
            "covariance embedding is not positive definite".into(),
        ));
    }
    let n = (mx * my) as f64;
    let amplitude: Vec<f64> = spectrum.iter().map(|&l| (l.max(0.0) / n).sqrt()).collect();

    let mut r = rng::rng(seed);
    let mut fields = Vec::with_capacity(count);
    while fields.len() < count {
        let mut z: Vec<Complex<f64>> = amplitude
            .iter()
            .map(|&a| {
                let re: f64 = r.sample(StandardNormal);
                let im: f64 = r.sample(StandardNormal);
                Complex::new(a * re, a * im)
            })
            .collect();
        fft2(&mut planner, &mut z, mx, my);
        // Real and imaginary parts are two independent fields.
        for part in [false, true] {
            if fields.len() == count {
                break;
            }
            let mut values = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    let v = z[j * mx + i];
                    values.push(if part { v.im } else { v.re });
                }
            }
            fields.push(GridField {
                spacing_km: spacing,
                nx,
                ny,
                values,
            });
        }
    }
    Ok(fields)
}

/// Draw a virtual species dataset; ids run `0..n_points`, features are
/// named `env_1 .. env_k`.
pub fn simulate_virtual_species(p: &VirtualSpeciesParams) -> Result<Dataset> {
    p.validate()?;
    let [x0, y0, x1, y1] = p.bbox;
    let proj = LocalProjection::new((x0, y0), (y0 + y1) / 2.0);
    let (width, height) = proj.forward(x1, y1);
    let env = gaussian_fields(
        width,
        height,
        p.range_km,
        p.n_env_features,
        rng::derive_str(p.seed, "env"),
    )?;

    let span = (p.years.last - p.years.first) as u32 + 1;
    let epoch_len = p.latent_epoch_years.unwrap_or(span).max(1);
    let n_epochs = span.div_ceil(epoch_len) as usize;
    let latent: Vec<GridField> = if p.latent_sd > 0.0 {
        let range = p.latent_range_km.unwrap_or(p.range_km);
        let base = rng::derive_str(p.seed, "latent");
        (0..n_epochs)
            .map(|e| gaussian_fields(width, height, range, 1, rng::derive(base, e as u64)).map(|mut f| f.remove(0)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut places = rng::rng(rng::derive_str(p.seed, "points"));
    let mut draws = rng::rng(rng::derive_str(p.seed, "labels"));
    let mut records = Vec::with_capacity(p.n_points);
    for id in 0..p.n_points {
        let lon = places.random_range(x0..x1);
        let lat = places.random_range(y0..y1);
        let year = p.years.first + places.random_range(0..span) as i32;
        let (x, y) = proj.forward(lon, lat);
        let features: Vec<f64> = env.iter().map(|f| f.at(x, y)).collect();
        let mut eta = p.intercept + features.iter().zip(&p.coefficients).map(|(v, c)| v * c).sum::<f64>();
        if !latent.is_empty() {
            let epoch = ((year - p.years.first) as u32 / epoch_len) as usize;
            eta += p.latent_sd * latent[epoch].at(x, y);
        }
        let prob = 1.0 / (1.0 + (-eta).exp());
        let mut label = u8::from(draws.random::<f64>() < prob);
        if draws.random::<f64>() < p.noise_rate {
            label = 1 - label;
        }
        records.push(Record {
            id: id as i64,
            lon,
            lat,
            year,
            label,
            features,
        });
    }
    let names = (1..=p.n_env_features).map(|k| format!("env_{k}")).collect();
    Dataset::new(records, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_have_unit_variance_and_exponential_correlation() {
        // Pool many realisations; compare the sample correlation at a few
        // lags to exp(-3h / range).
        let range = 60.0;
        let fields = gaussian_fields(200.0, 200.0, range, 40, 3).unwrap();
        let f0 = &fields[0];
        let s = f0.spacing_km;
        let mut var = 0.0;
        let mut count = 0.0;
        for f in &fields {
            for v in &f.values {
                var += v * v;
                count += 1.0;
            }
        }
        var /= count;
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
        for lag_nodes in [2usize, 5, 10] {
            let h = lag_nodes as f64 * s;
            let mut acc = 0.0;
            let mut n = 0.0;
            for f in &fields {
                for j in 0..f.ny {
                    for i in 0..f.nx - lag_nodes {
                        acc += f.node(i, j) * f.node(i + lag_nodes, j);
                        n += 1.0;
                    }
                }
            }
            let rho = acc / n / var;
            let expected = (-3.0 * h / range).exp();
            assert!((rho - expected).abs() < 0.08, "lag {h}: {rho} vs {expected}");
        }
    }

    #[test]
    fn bilinear_interpolation_hits_nodes_and_midpoints() {
        let f = GridField {
            spacing_km: 2.0,
            nx: 2,
            ny: 2,
            values: vec![0.0, 1.0, 2.0, 3.0],
        };
        assert_eq!(f.at(0.0, 0.0), 0.0);
        assert_eq!(f.at(2.0, 2.0), 3.0);
        assert_eq!(f.at(1.0, 1.0), 1.5);
        assert_eq!(f.at(-5.0, 9.0), 2.0);
    }

    #[test]
    fn simulation_is_deterministic() {
        let mut p = VirtualSpeciesParams::new(200, 300.0, 80.0, 9);
        p.latent_sd = 1.0;
        p.latent_epoch_years = Some(5);
        let a = simulate_virtual_species(&p).unwrap();
        assert_eq!(a, simulate_virtual_species(&p).unwrap());
        p.seed = 10;
        assert_ne!(a, simulate_virtual_species(&p).unwrap());
        assert!(a.records().iter().all(|r| (2000..=2019).contains(&r.year)));
    }

    #[test]
    fn zero_response_gives_even_prevalence() {
        let mut total = 0.0;
        for seed in 0..5 {
            let mut p = VirtualSpeciesParams::new(2000, 300.0, 50.0, seed);
            p.coefficients = vec![0.0; 4];
            p.intercept = 0.0;
            p.noise_rate = 0.0;
            let d = simulate_virtual_species(&p).unwrap();
            let prev = d.labels().iter().map(|&l| f64::from(l)).sum::<f64>() / d.len() as f64;
            assert!((prev - 0.5).abs() < 0.03, "seed {seed}: {prev}");
            total += prev;
        }
        assert!((total / 5.0 - 0.5).abs() < 0.015);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = VirtualSpeciesParams::new(10, 100.0, 10.0, 1);
        p.noise_rate = 0.5;
        assert!(p.validate().is_err());
        p.noise_rate = 0.1;
        p.coefficients.pop();
        assert!(p.validate().is_err());
        let mut p = VirtualSpeciesParams::new(10, 100.0, 0.0, 1);
        assert!(simulate_virtual_species(&p).is_err());
        p.range_km = 5.0;
        p.latent_epoch_years = Some(0);
        assert!(p.validate().is_err());
    }
}
