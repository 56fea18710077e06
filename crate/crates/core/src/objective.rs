//! Attribute normalization, the scalar objective and the halving decision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{ConfigId, MetricPolarity};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("halving needs at least 2 active configurations, found {0}")]
    TooFewConfigs(usize),
    #[error("objective weight {name} must lie in [0, 1], found {value}")]
    WeightOutOfRange { name: &'static str, value: f64 },
}

/// Balance between performance (`alpha`) and, within the efficiency term,
/// energy versus learning rate (`beta`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self { alpha: 0.75, beta: 0.5 }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(ObjectiveError::WeightOutOfRange { name: "alpha", value: self.alpha });
        }
        if !(0.0..=1.0).contains(&self.beta) || !self.beta.is_finite() {
            return Err(ObjectiveError::WeightOutOfRange { name: "beta", value: self.beta });
        }
        Ok(())
    }
}

/// Raw per-configuration measurements for one round, before normalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawAttributes {
    pub config_id: ConfigId,
    pub performance: f64,
    pub polarity: MetricPolarity,
    pub energy_wh: f64,
    pub selected_lr: f64,
    /// Exploration hit non-finite losses this round; the values above are
    /// worst-case placeholders.
    pub diverged: bool,
}

/// Normalized attribute triple. All components lie in `[0, 1]` with 1 best:
/// performance is polarity-corrected, energy inverted (lowest consumption
/// maps to 1) and the learning rate kept as-is (largest maps to 1).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AttributeVector {
    pub config_id: ConfigId,
    pub p: f64,
    pub e: f64,
    pub lr: f64,
}

/// Min-max rescale. When all values coincide the attribute cannot
/// discriminate and every configuration receives 1.0.
fn min_max(values: &[f64], invert: bool) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    values
        .iter()
        .map(|&v| {
            if range == 0.0 {
                1.0
            } else if invert {
                (max - v) / range
            } else {
                (v - min) / range
            }
        })
        .collect()
}

/// Rescales each attribute list into `[0, 1]` across the given configurations.
pub fn normalize_attributes(raw: &[RawAttributes]) -> Vec<AttributeVector> {
    assert!(!raw.is_empty(), "normalize_attributes needs at least one entry");
    // Orient performance so that higher is better before rescaling.
    let perf: Vec<f64> = raw
        .iter()
        .map(|r| match r.polarity {
            MetricPolarity::HigherIsBetter => r.performance,
            MetricPolarity::LowerIsBetter => -r.performance,
        })
        .collect();
    let p = min_max(&perf, false);
    let e = min_max(&raw.iter().map(|r| r.energy_wh).collect::<Vec<_>>(), true);
    let lr = min_max(&raw.iter().map(|r| r.selected_lr).collect::<Vec<_>>(), false);
    raw.iter()
        .zip(p)
        .zip(e)
        .zip(lr)
        .map(|(((r, p), e), lr)| AttributeVector { config_id: r.config_id, p, e, lr })
        .collect()
}

/// `alpha * P + (1 - alpha) * (beta * E + (1 - beta) * LR)`.
pub fn objective_score(attrs: &AttributeVector, w: &ObjectiveWeights) -> f64 {
    w.alpha * attrs.p + (1.0 - w.alpha) * (w.beta * attrs.e + (1.0 - w.beta) * attrs.lr)
}

/// Scoring input to [`halve`]. `energy_attr` is the normalized energy
/// attribute, kept for the documented tie-break.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScoredConfig {
    pub config_id: ConfigId,
    pub score: f64,
    pub energy_attr: f64,
}

#[derive(Debug, Clone)]
pub struct HalveOutcome {
    pub dropped: Vec<ConfigId>,
    /// True when at least one drop was decided by the tie-break rather than
    /// by a strict score difference.
    pub tie_break_used: bool,
}

/// Drops the `floor(n / 2)` lowest-scoring configurations.
///
/// Ties survive by higher normalized energy (the more efficient
/// configuration), then by lower config id.
pub fn halve(scored: &[ScoredConfig]) -> Result<HalveOutcome, ObjectiveError> {
    let n = scored.len();
    if n < 2 {
        return Err(ObjectiveError::TooFewConfigs(n));
    }
    let mut order: Vec<&ScoredConfig> = scored.iter().collect();
    // Ascending badness: low score first; among equal scores low energy
    // attribute first; among those, high config id first.
    order.sort_by(|a, b| {
        a.score
            .partial_cmp(&b.score)
            .unwrap()
            .then(a.energy_attr.partial_cmp(&b.energy_attr).unwrap())
            .then(b.config_id.cmp(&a.config_id))
    });
    let drop_count = n / 2;
    let dropped: Vec<ConfigId> = order[..drop_count].iter().map(|s| s.config_id).collect();
    // The tie-break mattered if the boundary between dropped and survivors
    // ran through a group of equal scores.
    let tie_break_used = drop_count > 0
        && drop_count < n
        && order[drop_count - 1].score == order[drop_count].score;
    Ok(HalveOutcome { dropped, tie_break_used })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(id: u32, perf: f64, energy: f64, lr: f64) -> RawAttributes {
        RawAttributes {
            config_id: ConfigId(id),
            performance: perf,
            polarity: MetricPolarity::HigherIsBetter,
            energy_wh: energy,
            selected_lr: lr,
            diverged: false,
        }
    }

    #[test]
    fn energy_is_inverted() {
        let attrs = normalize_attributes(&[
            raw(0, 0.5, 10.0, 0.1),
            raw(1, 0.5, 20.0, 0.1),
            raw(2, 0.5, 30.0, 0.1),
        ]);
        let e: Vec<f64> = attrs.iter().map(|a| a.e).collect();
        assert_eq!(e, vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn lower_is_better_polarity_flips() {
        let mut a = raw(0, 5.0, 1.0, 0.1);
        let mut b = raw(1, 10.0, 1.0, 0.1);
        a.polarity = MetricPolarity::LowerIsBetter;
        b.polarity = MetricPolarity::LowerIsBetter;
        let attrs = normalize_attributes(&[a, b]);
        assert_eq!(attrs[0].p, 1.0);
        assert_eq!(attrs[1].p, 0.0);
    }

    #[test]
    fn zero_range_gives_ones() {
        let attrs = normalize_attributes(&[raw(0, 0.9, 4.0, 0.1), raw(1, 0.8, 4.0, 0.2)]);
        assert_eq!(attrs[0].e, 1.0);
        assert_eq!(attrs[1].e, 1.0);
    }

    #[test]
    fn single_config_is_all_ones() {
        let attrs = normalize_attributes(&[raw(0, 0.37, 12.5, 0.05)]);
        assert_eq!((attrs[0].p, attrs[0].e, attrs[0].lr), (1.0, 1.0, 1.0));
    }

    #[test]
    fn worked_score_example() {
        let attrs = AttributeVector { config_id: ConfigId(0), p: 0.8, e: 0.4, lr: 0.6 };
        let w = ObjectiveWeights { alpha: 0.75, beta: 0.5 };
        let score = objective_score(&attrs, &w);
        let expect = 0.75 * 0.8 + 0.25 * (0.5 * 0.4 + 0.5 * 0.6);
        assert_eq!(score, expect);
        assert!((score - 0.725).abs() < 1e-12);
    }

    #[test]
    fn all_ones_scores_one() {
        let attrs = AttributeVector { config_id: ConfigId(0), p: 1.0, e: 1.0, lr: 1.0 };
        for &(alpha, beta) in &[(0.0, 0.0), (0.3, 0.9), (1.0, 0.5)] {
            let w = ObjectiveWeights { alpha, beta };
            assert!((objective_score(&attrs, &w) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn alpha_one_is_pure_performance() {
        let attrs = AttributeVector { config_id: ConfigId(0), p: 0.33, e: 0.9, lr: 0.1 };
        let w = ObjectiveWeights { alpha: 1.0, beta: 0.5 };
        assert_eq!(objective_score(&attrs, &w), 0.33);
    }

    #[test]
    fn halve_drops_lower_half() {
        let scored: Vec<ScoredConfig> = (0..8)
            .map(|i| ScoredConfig {
                config_id: ConfigId(i),
                score: i as f64 / 10.0,
                energy_attr: 0.5,
            })
            .collect();
        let out = halve(&scored).unwrap();
        assert_eq!(out.dropped, vec![ConfigId(0), ConfigId(1), ConfigId(2), ConfigId(3)]);
        assert!(!out.tie_break_used);
    }

    #[test]
    fn halve_odd_count_keeps_ceil() {
        let scored: Vec<ScoredConfig> = (0..3)
            .map(|i| ScoredConfig {
                config_id: ConfigId(i),
                score: i as f64,
                energy_attr: 0.0,
            })
            .collect();
        let out = halve(&scored).unwrap();
        assert_eq!(out.dropped.len(), 1);
        assert_eq!(out.dropped[0], ConfigId(0));
    }

    #[test]
    fn halve_tie_break_favors_efficiency() {
        let scored = vec![
            ScoredConfig { config_id: ConfigId(0), score: 0.7, energy_attr: 0.2 },
            ScoredConfig { config_id: ConfigId(1), score: 0.7, energy_attr: 0.9 },
        ];
        let out = halve(&scored).unwrap();
        assert_eq!(out.dropped, vec![ConfigId(0)]);
        assert!(out.tie_break_used);
    }

    #[test]
    fn halve_tie_break_then_lower_id_survives() {
        let scored = vec![
            ScoredConfig { config_id: ConfigId(3), score: 0.7, energy_attr: 0.5 },
            ScoredConfig { config_id: ConfigId(5), score: 0.7, energy_attr: 0.5 },
        ];
        let out = halve(&scored).unwrap();
        assert_eq!(out.dropped, vec![ConfigId(5)]);
    }

    #[test]
    fn halve_rejects_single_config() {
        let scored =
            vec![ScoredConfig { config_id: ConfigId(0), score: 1.0, energy_attr: 1.0 }];
        assert!(matches!(halve(&scored), Err(ObjectiveError::TooFewConfigs(1))));
    }

    #[test]
    fn weight_validation_names_field() {
        let w = ObjectiveWeights { alpha: 1.5, beta: 0.5 };
        let err = w.validate().unwrap_err();
        assert!(err.to_string().contains("alpha"));
        assert!(err.to_string().contains("[0, 1]"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Score stays inside [0, 1] for normalized inputs.
            #[test]
            fn score_range(
                p in 0.0f64..=1.0, e in 0.0f64..=1.0, lr in 0.0f64..=1.0,
                alpha in 0.0f64..=1.0, beta in 0.0f64..=1.0,
            ) {
                let attrs = AttributeVector { config_id: ConfigId(0), p, e, lr };
                let s = objective_score(&attrs, &ObjectiveWeights { alpha, beta });
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&s));
            }

            /// Raising any single attribute never lowers the score.
            #[test]
            fn score_monotone(
                p in 0.0f64..=0.9, e in 0.0f64..=0.9, lr in 0.0f64..=0.9,
                alpha in 0.01f64..=0.99, beta in 0.01f64..=0.99,
                bump in 0.01f64..=0.1,
            ) {
                let w = ObjectiveWeights { alpha, beta };
                let base = AttributeVector { config_id: ConfigId(0), p, e, lr };
                let s0 = objective_score(&base, &w);
                for bumped in [
                    AttributeVector { p: p + bump, ..base },
                    AttributeVector { e: e + bump, ..base },
                    AttributeVector { lr: lr + bump, ..base },
                ] {
                    prop_assert!(objective_score(&bumped, &w) >= s0 - 1e-12);
                }
            }

            /// Min-max normalization preserves the ordering of the raw values.
            #[test]
            fn normalization_preserves_order(
                values in proptest::collection::vec(0.0f64..1e6, 2..12),
                scale in 0.5f64..10.0,
                shift in -100.0f64..100.0,
            ) {
                let raws: Vec<RawAttributes> = values
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| raw(i as u32, 0.5, scale * v + shift, 0.1))
                    .collect();
                let attrs = normalize_attributes(&raws);
                for i in 0..values.len() {
                    for j in 0..values.len() {
                        if values[i] < values[j] {
                            // lower raw energy -> higher (or equal) inverted attr
                            prop_assert!(attrs[i].e >= attrs[j].e);
                        }
                    }
                }
            }

            /// Repeated halving from n configurations reaches exactly 1
            /// survivor after ceil(log2 n) rounds.
            #[test]
            fn halving_closure(n in 2usize..=64) {
                let mut alive: Vec<ScoredConfig> = (0..n)
                    .map(|i| ScoredConfig {
                        config_id: ConfigId(i as u32),
                        score: (i as f64 * 0.7919).fract(),
                        energy_attr: (i as f64 * 0.4621).fract(),
                    })
                    .collect();
                let mut rounds = 0;
                while alive.len() > 1 {
                    let out = halve(&alive).unwrap();
                    alive.retain(|s| !out.dropped.contains(&s.config_id));
                    rounds += 1;
                    prop_assert!(rounds <= 10);
                }
                prop_assert_eq!(rounds, (n as f64).log2().ceil() as usize);
            }

            /// At alpha = 1 the ranking equals the pure-performance ranking;
            /// at alpha = 0 the ranking ignores performance entirely.
            #[test]
            fn alpha_extremes(
                ps in proptest::collection::vec(0.0f64..=1.0, 4),
                es in proptest::collection::vec(0.0f64..=1.0, 4),
                lrs in proptest::collection::vec(0.0f64..=1.0, 4),
            ) {
                let attrs: Vec<AttributeVector> = (0..4)
                    .map(|i| AttributeVector {
                        config_id: ConfigId(i as u32), p: ps[i], e: es[i], lr: lrs[i],
                    })
                    .collect();
                let w1 = ObjectiveWeights { alpha: 1.0, beta: 0.5 };
                for (a, s) in attrs.iter().map(|a| (a, objective_score(a, &w1))) {
                    prop_assert_eq!(s, a.p);
                }
                let w0 = ObjectiveWeights { alpha: 0.0, beta: 0.5 };
                for a in &attrs {
                    let flipped = AttributeVector { p: 1.0 - a.p, ..*a };
                    prop_assert!(
                        (objective_score(a, &w0) - objective_score(&flipped, &w0)).abs()
                            < 1e-15
                    );
                }
            }
        }
    }
}
