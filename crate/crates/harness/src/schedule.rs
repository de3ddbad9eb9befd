use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Learning-rate schedule over the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// Single half-cosine from the base rate down to `floor` at the last step.
    Cosine {
        #[serde(default)]
        floor: f64,
    },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Cosine { floor: 0.0 }
    }
}

impl Schedule {
    /// Rate at `step` of `total_steps` (0-based).
    pub fn lr(&self, base: f64, step: usize, total_steps: usize) -> f64 {
        match *self {
            Schedule::Cosine { floor } => {
                if total_steps <= 1 || step == 0 {
                    return base;
                }
                let t = step.min(total_steps - 1) as f64 / (total_steps - 1) as f64;
                floor + 0.5 * (base - floor) * (1.0 + (PI * t).cos())
            }
        }
    }

    pub fn floor(&self) -> f64 {
        match *self {
            Schedule::Cosine { floor } => floor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        let s = Schedule::default();
        assert_eq!(s.lr(1e-4, 0, 101), 1e-4);
        assert!(s.lr(1e-4, 100, 101).abs() < 1e-20);
        assert!((s.lr(1e-4, 50, 101) - 5e-5).abs() < 1e-18);
        assert_eq!(s.lr(1e-4, 0, 1), 1e-4);
    }

    #[test]
    fn toml_shape() {
        let s: Schedule = toml::from_str("kind = \"cosine\"\nfloor = 1e-6").unwrap();
        assert_eq!(s, Schedule::Cosine { floor: 1e-6 });
        let d: Schedule = toml::from_str("kind = \"cosine\"").unwrap();
        assert_eq!(d, Schedule::default());
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(base in 1e-6f64..1.0, frac in 0.0f64..1.0, total in 2usize..500) {
            let s = Schedule::Cosine { floor: base * frac };
            let lrs: Vec<f64> = (0..total).map(|t| s.lr(base, t, total)).collect();
            prop_assert_eq!(lrs[0], base);
            prop_assert!(lrs[total - 1] <= s.floor() + 1e-15 * base);
            prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
