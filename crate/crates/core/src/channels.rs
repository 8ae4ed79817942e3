//! Ordered BMS channel families as quantized L-densities.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::density::{Grid, QuantizedDensity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ChannelKind {
    Bec,
    Bsc,
    Biawgn,
}

impl ChannelKind {
    /// Natural parameter range: erasure probability, crossover probability,
    /// noise standard deviation.
    pub fn default_range(self) -> (f64, f64) {
        match self {
            ChannelKind::Bec => (0.0, 1.0),
            ChannelKind::Bsc => (0.0, 0.5),
            ChannelKind::Biawgn => (0.1, 10.0),
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::Bec => "BEC",
            ChannelKind::Bsc => "BSC",
            ChannelKind::Biawgn => "BIAWGN",
        })
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BEC" => Ok(ChannelKind::Bec),
            "BSC" => Ok(ChannelKind::Bsc),
            "BIAWGN" | "AWGN" => Ok(ChannelKind::Biawgn),
            other => Err(Error::param("family", format!("unknown channel family `{other}`"))),
        }
    }
}

/// A channel family ordered by degradation in its parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelFamily {
    pub kind: ChannelKind,
    pub parameter_range: (f64, f64),
    /// Symmetric-saturate the channel at this magnitude (`K''`).
    pub support_clip: Option<f64>,
}

impl ChannelFamily {
    pub fn new(kind: ChannelKind) -> Self {
        ChannelFamily {
            kind,
            parameter_range: kind.default_range(),
            support_clip: None,
        }
    }

    pub fn with_clip(mut self, clip: Option<f64>) -> Self {
        self.support_clip = clip;
        self
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.parameter_range = (lo, hi);
        self
    }

    /// L-density of the channel with parameter `sigma`.
    pub fn make_channel(&self, sigma: f64, grid: Grid) -> Result<QuantizedDensity> {
        let (lo, hi) = self.parameter_range;
        if !(sigma >= lo && sigma <= hi) {
            return Err(Error::param(
                "param",
                format!("{sigma} outside the {} range [{lo}, {hi}]", self.kind),
            ));
        }
        let c = match self.kind {
            ChannelKind::Bec => bec(sigma, grid)?,
            ChannelKind::Bsc => bsc(sigma, grid)?,
            ChannelKind::Biawgn => biawgn(sigma, grid)?,
        };
        match self.support_clip {
            Some(k) => c.saturate_sym(k),
            None => Ok(c),
        }
    }

    /// Parameter whose channel has entropy `h`, by bisection on the
    /// increasing map `σ -> H(c_σ)`.
    pub fn entropy_to_parameter(&self, h: f64, grid: Grid) -> Result<f64> {
        if !(0.0..=1.0).contains(&h) {
            return Err(Error::param("h", format!("entropy {h} outside [0, 1]")));
        }
        if self.kind == ChannelKind::Bec && self.support_clip.is_none() {
            let (lo, hi) = self.parameter_range;
            if h < lo || h > hi {
                return Err(Error::param("h", format!("entropy {h} not attainable in [{lo}, {hi}]")));
            }
            return Ok(h);
        }
        let (mut lo, mut hi) = self.parameter_range;
        let h_lo = self.make_channel(lo, grid)?.entropy();
        let h_hi = self.make_channel(hi, grid)?.entropy();
        if h < h_lo - 1e-6 || h > h_hi + 1e-6 {
            return Err(Error::param(
                "h",
                format!("entropy {h} not attainable: family spans [{h_lo}, {h_hi}]"),
            ));
        }
        if (h - h_lo).abs() < 1e-6 && h <= h_lo {
            return Ok(lo);
        }
        if (h - h_hi).abs() < 1e-6 && h >= h_hi {
            return Ok(hi);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let hm = self.make_channel(mid, grid)?.entropy();
            if hm < h {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi.max(1.0) {
                break;
            }
        }
        let sigma = 0.5 * (lo + hi);
        let got = self.make_channel(sigma, grid)?.entropy();
        if (got - h).abs() >= 1e-6 {
            return Err(Error::Numerical(format!(
                "entropy bisection stalled at {sigma}: H = {got}, target {h}"
            )));
        }
        Ok(sigma)
    }

    /// Draw `n` channel LLRs for the all-zero codeword (transmitted +1).
    pub fn sample_llrs<R: Rng + ?Sized>(&self, sigma: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        let llrs: Vec<f64> = match self.kind {
            ChannelKind::Bec => (0..n)
                .map(|_| if rng.gen::<f64>() < sigma { 0.0 } else { f64::INFINITY })
                .collect(),
            ChannelKind::Bsc => {
                let l = if sigma == 0.0 {
                    f64::INFINITY
                } else {
                    ((1.0 - sigma) / sigma).ln()
                };
                (0..n)
                    .map(|_| if rng.gen::<f64>() < sigma { -l } else { l })
                    .collect()
            }
            ChannelKind::Biawgn => {
                let noise = Normal::new(1.0, sigma).map_err(|e| Error::param("param", e.to_string()))?;
                let scale = 2.0 / (sigma * sigma);
                (0..n).map(|_| scale * noise.sample(rng)).collect()
            }
        };
        Ok(match self.support_clip {
            // symmetric clipping of sampled LLRs is not defined; plain clip
            Some(k) => llrs.into_iter().map(|x: f64| x.clamp(-k, k)).collect(),
            None => llrs,
        })
    }
}

fn bec(eps: f64, grid: Grid) -> Result<QuantizedDensity> {
    QuantizedDensity::symmetric_from_magnitudes(grid, &[eps], None, 1.0 - eps)
}

fn bsc(eps: f64, grid: Grid) -> Result<QuantizedDensity> {
    if eps == 0.0 {
        return Ok(QuantizedDensity::perfect(grid));
    }
    let z = ((1.0 - eps) / eps).ln();
    if z > grid.support_bound() {
        return Err(Error::param(
            "param",
            format!("BSC({eps}) LLR magnitude {z} exceeds the support bound"),
        ));
    }
    QuantizedDensity::two_atom(grid, eps, z)
}

/// BIAWGN L-density `N(2/σ², 4/σ²)`: the law of `|Z|` is integrated over
/// each grid cell (upper tail folded into the last cell) and split between
/// `±x` by the symmetry identity.
fn biawgn(sigma: f64, grid: Grid) -> Result<QuantizedDensity> {
    let mean = 2.0 / (sigma * sigma);
    let sd = 2.0 / sigma;
    let normal = NormalDist::new(mean, sd).map_err(|e| Error::param("param", e.to_string()))?;
    let prob = |a: f64, b: f64| -> f64 {
        if a >= mean {
            normal.sf(a) - normal.sf(b)
        } else {
            normal.cdf(b) - normal.cdf(a)
        }
    };
    let n = grid.half_len();
    let h = grid.spacing();
    let mut mags = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let lo = if k == 0 { 0.0 } else { (k as f64 - 0.5) * h };
        let hi = if k == n { f64::INFINITY } else { (k as f64 + 0.5) * h };
        let w = prob(lo, hi) + prob(-hi, -lo);
        mags.push(w.max(0.0));
    }
    let total: f64 = mags.iter().sum();
    mags.iter_mut().for_each(|m| *m /= total);
    QuantizedDensity::symmetric_from_magnitudes(grid, &mags, None, 0.0)
}

/// Channel as written in configs: `{"family":"BSC","param":0.08,"clip":12.0}`
/// or the short form `BSC:0.08`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub family: ChannelKind,
    pub param: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
}

impl ChannelSpec {
    pub fn family(&self) -> ChannelFamily {
        ChannelFamily::new(self.family).with_clip(self.clip)
    }

    pub fn density(&self, grid: Grid) -> Result<QuantizedDensity> {
        self.family().make_channel(self.param, grid)
    }
}

impl FromStr for ChannelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            return serde_json::from_str(s).map_err(|e| Error::param("channel", e.to_string()));
        }
        let mut parts = s.split(':');
        let family = parts
            .next()
            .ok_or_else(|| Error::param("channel", "empty channel spec"))?
            .parse()?;
        let param = parts
            .next()
            .ok_or_else(|| Error::param("channel", format!("`{s}` lacks a parameter (FAMILY:PARAM)")))?
            .parse::<f64>()
            .map_err(|e| Error::param("channel", e.to_string()))?;
        let clip = match parts.next() {
            Some(c) => Some(c.parse::<f64>().map_err(|e| Error::param("channel", e.to_string()))?),
            None => None,
        };
        if parts.next().is_some() {
            return Err(Error::param("channel", format!("`{s}` has too many fields")));
        }
        Ok(ChannelSpec { family, param, clip })
    }
}
