use std::f64::consts::PI;

use super::TrainConfig;

/// Learning rate at global `step`: a linear ramp from 0 over the warmup
/// epochs, then cosine decay from `initial_lr` to `final_lr` that reaches
/// `final_lr` on the last step of the run.
pub fn lr_at(cfg: &TrainConfig, step: usize, steps_per_epoch: usize) -> f64 {
    let warmup = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.max_epochs * steps_per_epoch;
    if step < warmup {
        return cfg.initial_lr * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(1).saturating_sub(warmup);
    if span == 0 {
        return cfg.initial_lr;
    }
    let t = (step - warmup).min(span) as f64;
    cfg.final_lr + (cfg.initial_lr - cfg.final_lr) * 0.5 * (1.0 + (PI * t / span as f64).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(max_epochs: usize, warmup_epochs: usize) -> TrainConfig {
        TrainConfig {
            max_epochs,
            warmup_epochs,
            ..TrainConfig::teacher()
        }
    }

    #[test]
    fn warmup_ramp_and_endpoints() {
        let c = cfg(15, 5);
        let spe = 10;
        assert_eq!(lr_at(&c, 0, spe), 0.0);
        assert!((lr_at(&c, 25, spe) - 0.05).abs() < 1e-15);
        assert_eq!(lr_at(&c, 50, spe), 0.1);
        assert!(lr_at(&c, 149, spe).abs() < 1e-17);
    }

    #[test]
    fn cosine_midpoint_is_half() {
        // 21 steps, no warmup: span 20, midpoint at step 10
        let c = cfg(1, 0);
        assert_eq!(lr_at(&c, 0, 21), 0.1);
        assert!((lr_at(&c, 10, 21) - 0.05).abs() < 1e-15);
        assert!(lr_at(&c, 20, 21).abs() < 1e-17);
    }

    #[test]
    fn matches_closed_form_after_warmup() {
        let c = cfg(3, 1);
        let spe = 11;
        let span = 3 * 11 - 1 - 11;
        for t in 0..=span {
            let expected = 0.05 * (1.0 + (PI * t as f64 / span as f64).cos());
            assert!((lr_at(&c, 11 + t, spe) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn monotone_in_each_phase() {
        let c = TrainConfig::teacher();
        let spe = 7;
        let warm = c.warmup_epochs * spe;
        let total = c.max_epochs * spe;
        for s in 0..warm {
            assert!(lr_at(&c, s + 1, spe) >= lr_at(&c, s, spe));
        }
        for s in warm..total - 1 {
            assert!(lr_at(&c, s + 1, spe) <= lr_at(&c, s, spe));
        }
    }
}
