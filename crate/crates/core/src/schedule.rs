//! Learning-rate schedules, evaluated per batch iteration.
//!
//! All schedules are pure functions of `(t, T)`: `t` is the current batch
//! iteration and `T` the total number of iterations of the phase.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Parent schedule: `lr_high` for the first half of training, linear decay
/// to `lr_low` at 90%, then constant.
pub fn parent_lr(t: f64, total: f64, lr_high: f64, lr_low: f64) -> f64 {
    let frac = if total > 0.0 { t / total } else { 1.0 };
    if frac < 0.5 {
        lr_high
    } else if frac < 0.9 {
        lr_high + (lr_low - lr_high) * (frac - 0.5) / 0.4
    } else {
        lr_low
    }
}

/// Two-phase cosine one-cycle schedule.
///
/// Warmup over the first `warmup · T` iterations rises from `lr_min` to
/// `lr_max` along a half cosine; the remainder decays as
/// `lr_final + ½(lr_max − lr_final)(1 + cos(π·T_cur/T_max))` with `T_cur`
/// counted from the peak.
pub fn one_cycle_lr(t: f64, total: f64, lr_min: f64, lr_max: f64, lr_final: f64, warmup: f64) -> f64 {
    let peak = warmup * total;
    if t < peak {
        let x = t / peak;
        lr_min + 0.5 * (lr_max - lr_min) * (1.0 - (PI * x).cos())
    } else {
        let span = total - peak;
        let x = if span > 0.0 { ((t - peak) / span).min(1.0) } else { 1.0 };
        lr_max - 0.5 * (lr_max - lr_final) * (1.0 - (PI * x).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Constant {
        lr: f64,
    },
    StepLinear {
        lr_high: f64,
        lr_low: f64,
    },
    OneCycle {
        lr_min: f64,
        lr_max: f64,
        lr_final: f64,
        warmup: f64,
    },
}

impl Schedule {
    pub const DEFAULT_LR_FINAL: f64 = 1e-7;
    pub const DEFAULT_WARMUP: f64 = 0.10;

    /// Parent defaults: 0.1 decaying to 0.001.
    pub fn parent_default() -> Self {
        Schedule::StepLinear {
            lr_high: 0.1,
            lr_low: 0.001,
        }
    }

    /// Tuning defaults: 0.001 → 0.1 at 10% → 1e-7.
    pub fn one_cycle_default() -> Self {
        Schedule::OneCycle {
            lr_min: 0.001,
            lr_max: 0.1,
            lr_final: Self::DEFAULT_LR_FINAL,
            warmup: Self::DEFAULT_WARMUP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            Schedule::Constant { lr } => positive("lr", lr),
            Schedule::StepLinear { lr_high, lr_low } => {
                positive("lr_high", lr_high)?;
                positive("lr_low", lr_low)
            }
            Schedule::OneCycle {
                lr_min,
                lr_max,
                lr_final,
                warmup,
            } => {
                positive("lr_min", lr_min)?;
                positive("lr_max", lr_max)?;
                positive("lr_final", lr_final)?;
                if warmup > 0.0 && warmup < 1.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!("warmup_frac must lie in (0, 1), got {warmup}")))
                }
            }
        }
    }

    /// Learning rate at iteration `t` of `total`.
    pub fn lr(&self, t: usize, total: usize) -> f64 {
        let (t, total) = (t as f64, total as f64);
        match *self {
            Schedule::Constant { lr } => lr,
            Schedule::StepLinear { lr_high, lr_low } => parent_lr(t, total, lr_high, lr_low),
            Schedule::OneCycle {
                lr_min,
                lr_max,
                lr_final,
                warmup,
            } => one_cycle_lr(t, total, lr_min, lr_max, lr_final, warmup),
        }
    }

    /// Rate used after the last iteration; constant fine-tuning of children
    /// continues from here.
    pub fn final_lr(&self) -> f64 {
        match *self {
            Schedule::Constant { lr } => lr,
            Schedule::StepLinear { lr_low, .. } => lr_low,
            Schedule::OneCycle { lr_final, .. } => lr_final,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: f64 = 1000.0;

    #[test]
    fn parent_endpoints() {
        assert_eq!(parent_lr(0.0, T, 0.1, 0.001), 0.1);
        assert_eq!(parent_lr(499.0, T, 0.1, 0.001), 0.1);
        assert!((parent_lr(700.0, T, 0.1, 0.001) - 0.0505).abs() < 1e-12);
        assert!((parent_lr(900.0, T, 0.1, 0.001) - 0.001).abs() < 1e-12);
        assert_eq!(parent_lr(950.0, T, 0.1, 0.001), 0.001);
        assert_eq!(parent_lr(T, T, 0.1, 0.001), 0.001);
    }

    #[test]
    fn one_cycle_shape() {
        let f = |t: f64| one_cycle_lr(t, T, 0.001, 0.1, 1e-7, 0.1);
        assert!((f(0.0) - 0.001).abs() < 1e-15);
        assert_eq!(f(100.0), 0.1);
        assert!((f(T) - 1e-7).abs() < 1e-9);
        // decay midpoint
        assert!((f(550.0) - (1e-7 + 0.5 * (0.1 - 1e-7))).abs() < 1e-12);
        // junction continuity
        assert!((f(100.0 - 1e-9) - f(100.0)).abs() < 1e-9);
    }

    #[test]
    fn monotone_phases() {
        let s = Schedule::one_cycle_default();
        let p = Schedule::parent_default();
        let n = 997;
        let peak = (0.1 * n as f64).ceil() as usize;
        for t in 1..=n {
            let (a, b) = (s.lr(t - 1, n), s.lr(t, n));
            if t < peak {
                assert!(b >= a, "warmup not increasing at {t}");
            } else if t > peak {
                assert!(b <= a, "decay not decreasing at {t}");
            }
            assert!(p.lr(t, n) <= p.lr(t - 1, n));
        }
    }

    #[test]
    fn validation() {
        assert!(Schedule::one_cycle_default().validate().is_ok());
        assert!(Schedule::Constant { lr: 0.0 }.validate().is_err());
        let mut bad = Schedule::one_cycle_default();
        if let Schedule::OneCycle { warmup, .. } = &mut bad {
            *warmup = 1.0;
        }
        assert!(bad.validate().is_err());
    }
}
