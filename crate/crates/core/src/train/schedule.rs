//! Linear warmup then linear decay to zero.

/// Multiplier for the base learning rate at 1-based `step` of `total`.
pub fn lr_scale(step: usize, total: usize, warmup_fraction: f64) -> f64 {
    debug_assert!(step >= 1 && step <= total);
    let warmup = ((total as f64 * warmup_fraction).round() as usize).max(1);
    if step <= warmup {
        step as f64 / warmup as f64
    } else if total == warmup {
        1.0
    } else {
        (total - step) as f64 / (total - warmup) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramps_up_then_decays_to_zero() {
        let total = 100;
        assert!(lr_scale(1, total, 0.1) < lr_scale(5, total, 0.1));
        assert_eq!(lr_scale(10, total, 0.1), 1.0);
        assert!(lr_scale(50, total, 0.1) < 1.0);
        assert_eq!(lr_scale(total, total, 0.1), 0.0);
    }

    #[test]
    fn no_warmup_still_defined() {
        assert_eq!(lr_scale(1, 10, 0.0), 1.0);
        assert!(lr_scale(5, 10, 0.0) < 1.0);
    }

    #[test]
    fn scale_is_monotone_in_each_phase() {
        let total = 200;
        for s in 1..20 {
            assert!(lr_scale(s, total, 0.1) <= lr_scale(s + 1, total, 0.1));
        }
        for s in 21..total {
            assert!(lr_scale(s, total, 0.1) >= lr_scale(s + 1, total, 0.1));
        }
    }
}
