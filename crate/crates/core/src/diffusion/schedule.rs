use serde::{Deserialize, Serialize};

use crate::error::DiffusionError;

/// Default linear schedule endpoints.
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Parameters that fully determine a [`NoiseSchedule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule, DiffusionError> {
        build_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Per-step noise coefficients for `t = 1..=T`.
///
/// Index 0 is the clean-data convention: `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Linear beta schedule from `beta_start` to `beta_end` inclusive.
pub fn build_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DiffusionError> {
    if steps == 0 {
        return Err(DiffusionError::InvalidSchedule("T must be at least 1".into()));
    }
    for (name, b) in [("beta_start", beta_start), ("beta_end", beta_end)] {
        if !(b > 0.0 && b < 1.0) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "{name} = {b} is outside (0, 1)"
            )));
        }
    }
    if beta_start > beta_end {
        return Err(DiffusionError::InvalidSchedule(format!(
            "beta_start {beta_start} exceeds beta_end {beta_end}"
        )));
    }

    let betas: Vec<f64> = if steps == 1 {
        vec![beta_start]
    } else {
        let span = beta_end - beta_start;
        (0..steps)
            .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
            .collect()
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for &a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    if alpha_bars.windows(2).any(|w| w[1] >= w[0]) || acc <= 0.0 {
        return Err(DiffusionError::InvalidSchedule(
            "cumulative alpha underflows; use fewer steps or smaller betas".into(),
        ));
    }

    Ok(NoiseSchedule {
        config: ScheduleConfig {
            steps,
            beta_start,
            beta_end,
        },
        betas,
        alphas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    /// Total number of diffusion steps `T`.
    #[inline]
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    /// `beta_t` for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product of alphas; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::StepOutOfRange {
                step: t,
                max: self.steps(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_step_cumulative_product() {
        let s = build_schedule(4, 0.1, 0.4).unwrap();
        let expected = [0.9, 0.72, 0.504, 0.3024];
        for (got, want) in s.alpha_bars().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn single_step_schedule() {
        let s = build_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(build_schedule(0, 0.1, 0.2).is_err());
        assert!(build_schedule(10, 0.0, 0.2).is_err());
        assert!(build_schedule(10, 0.1, 1.0).is_err());
        assert!(build_schedule(10, 0.3, 0.2).is_err());
        assert!(build_schedule(10, f64::NAN, 0.2).is_err());
    }

    #[test]
    fn endpoints_are_inclusive() {
        let s = build_schedule(1000, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap();
        assert_eq!(s.beta(1), DEFAULT_BETA_START);
        assert!((s.beta(1000) - DEFAULT_BETA_END).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn schedule_invariants(
            steps in 1usize..2000,
            lo in 1e-5f64..0.5,
            span in 0.0f64..0.49,
        ) {
            let hi = lo + span;
            let Ok(s) = build_schedule(steps, lo, hi) else {
                // Only underflow may be rejected for in-range betas.
                let total: f64 = (0..steps).map(|i| {
                    let b = if steps == 1 { lo } else { lo + span * i as f64 / (steps - 1) as f64 };
                    (1.0 - b).ln()
                }).sum();
                prop_assert!(total < -700.0);
                return Ok(());
            };
            for t in 1..=steps {
                prop_assert_eq!(s.alpha(t) + s.beta(t), 1.0);
                let ab = s.alpha_bar(t);
                prop_assert!(ab > 0.0 && ab < 1.0);
                prop_assert!(ab < s.alpha_bar(t - 1));
                let rec = s.alpha_bar(t - 1) * s.alpha(t);
                prop_assert!(((ab - rec) / rec).abs() <= 1e-12);
            }
        }
    }
}
