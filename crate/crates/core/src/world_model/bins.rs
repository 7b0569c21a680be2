use crate::error::{Error, Result};

pub fn symlog(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

pub fn symexp(y: f64) -> f64 {
    y.signum() * y.abs().exp_m1()
}

/// Discrete support for two-hot regression. Bin centers are uniformly
/// spaced on `[vmin, vmax]` in transformed space: symlog space when
/// `symlog` is set, raw value space otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinSpec {
    pub n_bins: usize,
    pub vmin: f64,
    pub vmax: f64,
    pub symlog: bool,
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec { n_bins: 101, vmin: -10.0, vmax: 10.0, symlog: true }
    }
}

impl BinSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::config(format!("need at least 2 bins, got {}", self.n_bins)));
        }
        if !(self.vmin < self.vmax) || !self.vmin.is_finite() || !self.vmax.is_finite() {
            return Err(Error::config(format!("bin range [{}, {}] is empty or non-finite", self.vmin, self.vmax)));
        }
        Ok(())
    }

    pub fn transform(&self, v: f64) -> f64 {
        if self.symlog {
            symlog(v)
        } else {
            v
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        if self.symlog {
            symexp(y)
        } else {
            y
        }
    }

    /// Spacing of the centers in transformed space.
    pub fn step(&self) -> f64 {
        (self.vmax - self.vmin) / (self.n_bins - 1) as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        if i + 1 == self.n_bins {
            self.vmax
        } else {
            self.vmin + i as f64 * self.step()
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins).map(|i| self.center(i)).collect()
    }

    /// Smallest and largest representable raw values.
    pub fn raw_range(&self) -> (f64, f64) {
        (self.inverse(self.vmin), self.inverse(self.vmax))
    }

    pub fn clamp_raw(&self, v: f64) -> f64 {
        let (lo, hi) = self.raw_range();
        v.clamp(lo, hi)
    }

    fn position(&self, v: f64) -> (usize, f64) {
        let y = self.transform(v).clamp(self.vmin, self.vmax);
        let pos = (y - self.vmin) / self.step();
        let lo = (pos.floor() as usize).min(self.n_bins - 2);
        (lo, (pos - lo as f64).clamp(0.0, 1.0))
    }

    /// Raw-space width of the bin interval containing `clamp(v)`.
    pub fn local_raw_width(&self, v: f64) -> f64 {
        let (lo, _) = self.position(v);
        self.inverse(self.center(lo + 1)) - self.inverse(self.center(lo))
    }

    /// Writes the two-hot encoding of `v` into `out`, which must have
    /// `n_bins` entries. `v` must be finite.
    pub fn encode_into(&self, v: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|p| *p = 0.0);
        let (lo, frac) = self.position(v);
        out[lo] = 1.0 - frac;
        out[lo + 1] += frac;
    }

    pub fn two_hot_encode(&self, v: f64) -> Result<Vec<f64>> {
        if !v.is_finite() {
            return Err(Error::numeric(format!("cannot encode non-finite value {v}")));
        }
        let mut out = vec![0.0; self.n_bins];
        self.encode_into(v, &mut out);
        Ok(out)
    }

    /// Row-major two-hot targets for a batch of finite values.
    pub fn encode_batch(&self, values: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; values.len() * self.n_bins];
        for (v, row) in values.iter().zip(out.chunks_mut(self.n_bins)) {
            if !v.is_finite() {
                return Err(Error::numeric(format!("cannot encode non-finite value {v}")));
            }
            self.encode_into(*v, row);
        }
        Ok(out)
    }

    /// Expectation over bin centers in transformed space, mapped back to
    /// raw values.
    pub fn decode_expectation(&self, probs: &[f64]) -> Result<f64> {
        if probs.len() != self.n_bins {
            return Err(Error::contract(format!("distribution has {} entries, expected {}", probs.len(), self.n_bins)));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0)) {
            return Err(Error::contract(format!("distribution has negative or NaN entry {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::contract(format!("distribution sums to {total}, not 1")));
        }
        Ok(self.decode_unchecked(probs))
    }

    fn decode_unchecked(&self, probs: &[f64]) -> f64 {
        let y: f64 = probs.iter().enumerate().map(|(i, p)| p * self.center(i)).sum();
        self.inverse(y)
    }

    /// Softmax of one row of logits followed by [`BinSpec::decode_expectation`].
    pub fn decode_logits(&self, logits: &[f64]) -> f64 {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut y = 0.0;
        for (i, l) in logits.iter().enumerate() {
            let e = (l - m).exp();
            z += e;
            y += e * self.center(i);
        }
        self.inverse(y / z)
    }

    /// [`BinSpec::decode_logits`] over row-major `rows × n_bins` logits.
    pub fn decode_logits_batch(&self, logits: &[f64]) -> Vec<f64> {
        logits.chunks(self.n_bins).map(|row| self.decode_logits(row)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_are_uniform_in_transformed_space() {
        let b = BinSpec::default();
        let c = b.centers();
        assert_eq!(c.len(), 101);
        assert_eq!(c[0], -10.0);
        assert_eq!(c[100], 10.0);
        assert!((c[50]).abs() < 1e-12);
        for w in c.windows(2) {
            assert!(w[1] > w[0]);
            assert!((w[1] - w[0] - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn center_value_is_one_hot() {
        let b = BinSpec::default();
        let v = b.inverse(b.center(63));
        let p = b.two_hot_encode(v).unwrap();
        let hot: Vec<usize> = (0..101).filter(|i| p[*i] > 1e-9).collect();
        assert_eq!(hot, vec![63]);
        assert!((p[63] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn clamps_at_both_ends_without_transform() {
        let b = BinSpec { symlog: false, ..BinSpec::default() };
        let p = b.two_hot_encode(15.0).unwrap();
        assert_eq!(p[100], 1.0);
        let p = b.two_hot_encode(-15.0).unwrap();
        assert_eq!(p[0], 1.0);
        assert_eq!(b.decode_expectation(&b.two_hot_encode(15.0).unwrap()).unwrap(), 10.0);
    }

    #[test]
    fn clamps_at_both_ends_with_transform() {
        let b = BinSpec::default();
        let (lo, hi) = b.raw_range();
        assert_eq!(b.two_hot_encode(hi * 3.0).unwrap()[100], 1.0);
        assert_eq!(b.two_hot_encode(lo * 3.0).unwrap()[0], 1.0);
    }

    #[test]
    fn mass_on_two_adjacent_bins() {
        let b = BinSpec::default();
        for k in 0..500 {
            let v = -30.0 + k as f64 * 0.123;
            let p = b.two_hot_encode(v).unwrap();
            let nz: Vec<usize> = (0..101).filter(|i| p[*i] > 0.0).collect();
            assert!(!nz.is_empty() && nz.len() <= 2);
            if nz.len() == 2 {
                assert_eq!(nz[1], nz[0] + 1);
            }
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_symmetric_decodes_to_zero() {
        let b = BinSpec { symlog: false, ..BinSpec::default() };
        let p = vec![1.0 / 101.0; 101];
        assert!(b.decode_expectation(&p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn unnormalized_is_contract_violation() {
        let b = BinSpec::default();
        assert!(matches!(b.decode_expectation(&vec![0.02; 101]), Err(Error::Contract(_))));
        assert!(matches!(b.two_hot_encode(f64::NAN), Err(Error::Numeric(_))));
    }

    #[test]
    fn logits_decode_matches_probabilities() {
        let b = BinSpec::default();
        let logits: Vec<f64> = (0..101).map(|i| ((i as f64) * 0.37).sin() * 3.0).collect();
        let m = logits.iter().copied().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|x| x / z).collect();
        assert!((b.decode_logits(&logits) - b.decode_expectation(&p).unwrap()).abs() < 1e-12);
    }
}
