use std::fmt;
use std::sync::Arc;

use super::quad::integrate_piecewise;
use crate::error::{arg_err, NbqError, Result};

const NORM_TOL: f64 = 1e-6;
const QUAD_TOL: f64 = 1e-9;

/// A probability density on (−1, 1).
#[derive(Clone)]
pub enum Density {
    Uniform,
    /// Zero-mean Gaussian restricted to (−1, 1) and renormalized.
    TruncatedGaussian { sigma: f64, norm: f64 },
    /// Piecewise constant; `heights[i]` holds on `[edges[i], edges[i+1])`.
    Histogram { edges: Vec<f64>, heights: Vec<f64> },
    Custom {
        name: String,
        pdf: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        breaks: Vec<f64>,
    },
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Uniform => write!(f, "Uniform"),
            Density::TruncatedGaussian { sigma, .. } => write!(f, "TruncatedGaussian(sigma={sigma})"),
            Density::Histogram { edges, .. } => write!(f, "Histogram({} bins)", edges.len() - 1),
            Density::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl Density {
    pub fn uniform() -> Self {
        Density::Uniform
    }

    pub fn truncated_gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return arg_err(format!("gaussian sigma {sigma} must be positive"));
        }
        let mass = libm::erf(1.0 / (sigma * std::f64::consts::SQRT_2));
        let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt() * mass);
        Ok(Density::TruncatedGaussian { sigma, norm })
    }

    /// Histogram over `[-1, 1]` from raw bin counts; edges must be increasing
    /// and span exactly `[-1, 1]`.
    pub fn histogram(edges: Vec<f64>, counts: &[f64]) -> Result<Self> {
        if edges.len() != counts.len() + 1 || counts.is_empty() {
            return arg_err("histogram needs one more edge than bins");
        }
        if edges[0] != -1.0 || *edges.last().unwrap() != 1.0 {
            return arg_err("histogram edges must span [-1, 1]");
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return arg_err("histogram edges must be strictly increasing");
        }
        if counts.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return arg_err("histogram counts must be non-negative");
        }
        let mass: f64 = counts.iter().zip(edges.windows(2)).map(|(c, w)| c * (w[1] - w[0])).sum();
        if mass <= 0.0 {
            return Err(NbqError::Degenerate("histogram has no mass".into()));
        }
        let heights = counts.iter().map(|c| c / mass).collect();
        Ok(Density::Histogram { edges, heights })
    }

    /// Equal-width histogram of samples clipped to `[-1, 1]`.
    pub fn from_samples(samples: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return arg_err("histogram needs at least one bin");
        }
        let mut counts = vec![0.0; bins];
        for &s in samples {
            let u = ((s.clamp(-1.0, 1.0) + 1.0) / 2.0 * bins as f64) as usize;
            counts[u.min(bins - 1)] += 1.0;
        }
        let mut edges: Vec<f64> = (0..=bins).map(|i| -1.0 + 2.0 * i as f64 / bins as f64).collect();
        edges[bins] = 1.0;
        Self::histogram(edges, &counts)
    }

    /// Wraps an arbitrary density; rejected unless it integrates to 1.
    pub fn custom(name: impl Into<String>, pdf: Arc<dyn Fn(f64) -> f64 + Send + Sync>, breaks: Vec<f64>) -> Result<Self> {
        let d = Density::Custom { name: name.into(), pdf, breaks };
        d.check_normalized()?;
        Ok(d)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(-1.0..=1.0).contains(&x) {
            return 0.0;
        }
        match self {
            Density::Uniform => 0.5,
            Density::TruncatedGaussian { sigma, norm } => norm * (-(x * x) / (2.0 * sigma * sigma)).exp(),
            Density::Histogram { edges, heights } => {
                let bin = edges.partition_point(|&e| e <= x).saturating_sub(1);
                heights[bin.min(heights.len() - 1)]
            }
            Density::Custom { pdf, .. } => pdf(x),
        }
    }

    /// Points inside (−1, 1) where the density may be non-smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Density::Histogram { edges, .. } => edges[1..edges.len() - 1].to_vec(),
            Density::Custom { breaks, .. } => breaks.clone(),
            _ => Vec::new(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Density::Uniform => "uniform".into(),
            Density::TruncatedGaussian { sigma, .. } => format!("gaussian(sigma={sigma})"),
            Density::Histogram { heights, .. } => format!("histogram({} bins)", heights.len()),
            Density::Custom { name, .. } => name.clone(),
        }
    }

    pub fn integral(&self) -> f64 {
        let f = |x: f64| self.pdf(x);
        integrate_piecewise(&f, -1.0, 1.0, &self.breakpoints(), QUAD_TOL)
    }

    pub fn check_normalized(&self) -> Result<()> {
        let total = self.integral();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(NbqError::Argument(format!(
                "density {} integrates to {total}, not 1",
                self.name()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_integrate_to_one() {
        Density::uniform().check_normalized().unwrap();
        for s in [0.05, 0.1, 0.3, 1.0, 5.0] {
            Density::truncated_gaussian(s).unwrap().check_normalized().unwrap();
        }
        let h = Density::histogram(vec![-1.0, -0.2, 0.5, 1.0], &[1.0, 3.0, 2.0]).unwrap();
        h.check_normalized().unwrap();
        assert_eq!(h.breakpoints(), vec![-0.2, 0.5]);
    }

    #[test]
    fn histogram_lookup() {
        let h = Density::histogram(vec![-1.0, 0.0, 1.0], &[1.0, 3.0]).unwrap();
        assert_eq!(h.pdf(-0.5), 0.25);
        assert_eq!(h.pdf(0.0), 0.75);
        assert_eq!(h.pdf(1.0), 0.75);
        assert_eq!(h.pdf(1.5), 0.0);
    }

    #[test]
    fn custom_must_normalize() {
        assert!(Density::custom("half", Arc::new(|_| 0.25), vec![]).is_err());
        let tri = Density::custom("tri", Arc::new(|x: f64| 1.0 - x.abs()), vec![0.0]).unwrap();
        assert!((tri.pdf(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sample_histogram_is_normalized() {
        let s: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 2000) as f64 / 1000.0 - 1.0).collect();
        Density::from_samples(&s, 16).unwrap().check_normalized().unwrap();
        assert!(Density::from_samples(&[], 4).is_err());
    }
}
