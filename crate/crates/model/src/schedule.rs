//! Noam warmup/decay learning-rate schedule.

use crate::error::{ModelError, Result};

/// lr = scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
pub fn noam_lr(step: u64, warmup: u64, d_model: usize, scale: f64) -> Result<f64> {
    if step == 0 {
        return Err(ModelError::invalid("noam_lr", "step must be >= 1"));
    }
    if warmup == 0 || d_model == 0 {
        return Err(ModelError::invalid("noam_lr", "warmup and d_model must be >= 1"));
    }
    let s = step as f64;
    let w = warmup as f64;
    Ok(scale * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_step_zero() {
        assert!(noam_lr(0, 400, 32, 1.0).is_err());
    }

    #[test]
    fn closed_form_value_at_quarter_warmup() {
        // 32^-0.5 * 100 * 400^-1.5 = 0.00220970869...
        let lr = noam_lr(100, 400, 32, 1.0).unwrap();
        assert!((lr - 0.0022097086912079608).abs() < 1e-12, "{lr}");
    }

    #[test]
    fn peaks_at_warmup_and_is_unimodal() {
        let at = |s| noam_lr(s, 400, 32, 1.0).unwrap();
        assert!((at(400) - 32f64.powf(-0.5) * 400f64.powf(-0.5)).abs() < 1e-15);
        for s in 1..400 {
            assert!(at(s) <= at(s + 1) + 1e-18);
        }
        for s in 400..2000 {
            assert!(at(s) >= at(s + 1) - 1e-18);
        }
    }
}
