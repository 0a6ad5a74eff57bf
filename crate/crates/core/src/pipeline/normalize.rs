use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::windows::{Timeline, TriExample};
use crate::error::{Error, Result};

pub const TARGET_KEY: &str = "target_yield_g";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

impl FeatureRange {
    fn empty() -> Self {
        FeatureRange {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    fn include(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }
}

/// Min-max scaling onto `[a, b]`, one range per named feature plus the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub a: f64,
    pub b: f64,
    pub features: BTreeMap<String, FeatureRange>,
    pub target: FeatureRange,
}

impl NormalizationParams {
    /// `x' = (b − a)(x − min)/(max − min) + a`; a constant feature maps to the midpoint.
    pub fn normalize(&self, x: f64, r: &FeatureRange) -> f64 {
        let span = r.max - r.min;
        if span == 0.0 {
            return (self.a + self.b) / 2.0;
        }
        (self.b - self.a) * (x - r.min) / span + self.a
    }

    /// `x = (x' − a)(max − min)/(b − a) + min`
    pub fn denormalize(&self, x: f64, r: &FeatureRange) -> f64 {
        (x - self.a) * (r.max - r.min) / (self.b - self.a) + r.min
    }

    pub fn normalize_target(&self, y: f64) -> f64 {
        self.normalize(y, &self.target)
    }

    pub fn denormalize_target(&self, y: f64) -> f64 {
        self.denormalize(y, &self.target)
    }

    pub fn range(&self, feature: &str) -> Option<&FeatureRange> {
        self.features.get(feature)
    }

    /// Scaled copy of an example.
    pub fn normalize_example(&self, ex: &TriExample) -> Result<TriExample> {
        let mut out = ex.clone();
        for t in Timeline::ALL {
            let names = t.features();
            let ranges = names
                .iter()
                .map(|n| {
                    self.range(n)
                        .copied()
                        .ok_or_else(|| Error::Data(format!("no normalization range for {n}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let w = out.window_mut(t);
            for (i, v) in w.values.iter_mut().enumerate() {
                *v = self.normalize(*v, &ranges[i % ranges.len()]);
            }
        }
        out.target_yield = self.normalize_target(ex.target_yield);
        Ok(out)
    }
}

/// Fits per-feature ranges over every window cell and target of `examples`.
///
/// Channels shared between timelines (the weather features) share one range.
pub fn fit_normalizer(examples: &[TriExample]) -> Result<NormalizationParams> {
    if examples.is_empty() {
        return Err(Error::Data(
            "cannot fit a normalizer on zero examples".into(),
        ));
    }
    let mut features: BTreeMap<String, FeatureRange> = BTreeMap::new();
    let mut target = FeatureRange::empty();
    for t in Timeline::ALL {
        let names = t.features();
        for ex in examples {
            let w = ex.window(t);
            if w.width != names.len() {
                return Err(Error::Dimension {
                    op: "fit_normalizer",
                    left: vec![w.width],
                    right: vec![names.len()],
                });
            }
            for (i, v) in w.values.iter().enumerate() {
                features
                    .entry(names[i % names.len()].clone())
                    .or_insert_with(FeatureRange::empty)
                    .include(*v);
            }
        }
    }
    for ex in examples {
        target.include(ex.target_yield);
    }
    Ok(NormalizationParams {
        a: -1.0,
        b: 1.0,
        features,
        target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(min: f64, max: f64) -> (NormalizationParams, FeatureRange) {
        let r = FeatureRange { min, max };
        (
            NormalizationParams {
                a: -1.0,
                b: 1.0,
                features: BTreeMap::new(),
                target: r,
            },
            r,
        )
    }

    #[test]
    fn endpoints_and_midpoint() {
        let (p, r) = params(0.0, 10.0);
        assert_eq!(p.normalize(0.0, &r), -1.0);
        assert_eq!(p.normalize(10.0, &r), 1.0);
        assert_eq!(p.normalize(5.0, &r), 0.0);
        assert!((p.denormalize(p.normalize(3.7, &r), &r) - 3.7).abs() < 1e-9);
    }

    #[test]
    fn hand_evaluated_point() {
        let (p, r) = params(2.0, 4.0);
        // 2 * (2.5 - 2) / 2 - 1
        assert_eq!(p.normalize(2.5, &r), -0.5);
    }

    #[test]
    fn degenerate_range() {
        let (p, r) = params(3.0, 3.0);
        assert_eq!(p.normalize(3.0, &r), 0.0);
        assert_eq!(p.normalize(17.0, &r), 0.0);
        assert_eq!(p.denormalize(0.0, &r), 3.0);
    }

    #[test]
    fn zero_examples_is_an_error() {
        assert!(fit_normalizer(&[]).is_err());
    }
}
