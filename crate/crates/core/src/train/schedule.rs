use super::TrainConfig;

/// First epoch at which each learning-rate drop takes effect: `⌈p·E⌉`.
pub fn drop_epochs(config: &TrainConfig) -> Vec<usize> {
    let e = config.epochs as f64;
    config
        .lr_drop_points
        .iter()
        .map(|&p| (p * e - 1e-9).ceil().max(0.0) as usize)
        .collect()
}

/// Learning rate at optimizer step `step` of `total_steps`, piecewise constant
/// per epoch with one multiplication by `drop_factor` per passed drop point.
///
/// The result is rounded to 15 significant digits so that decimal schedules
/// such as `1e-5 → 1e-6 → 1e-7` come out as the exact nearest doubles.
pub fn lr_at(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    if total_steps == 0 || config.epochs == 0 {
        return config.lr;
    }
    let epoch = ((step as u128 * config.epochs as u128) / total_steps as u128) as usize;
    let drops = drop_epochs(config).iter().filter(|&&d| epoch >= d).count();
    let lr = config.lr * config.drop_factor.powi(drops as i32);
    format!("{lr:.14e}").parse().unwrap_or(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Shape3, Task};

    fn cfg(epochs: usize) -> TrainConfig {
        let s = Shape3::new(4, 8, 8);
        let mut c = TrainConfig::new(Task::Detection, s, s);
        c.epochs = epochs;
        c
    }

    #[test]
    fn default_schedule_exact() {
        for e in [10, 100] {
            let c = cfg(e);
            let spe = 7;
            let total = e * spe;
            for step in 0..total {
                let frac = (step / spe) as f64 / e as f64;
                let want = if frac < 0.3 {
                    1e-5
                } else if frac < 0.8 {
                    1e-6
                } else {
                    1e-7
                };
                assert_eq!(lr_at(step, total, &c), want, "E={e} step={step}");
            }
        }
    }

    #[test]
    fn non_increasing_with_one_drop_per_point() {
        let c = cfg(37);
        let total = 37 * 3;
        let lrs: Vec<f64> = (0..total).map(|s| lr_at(s, total, &c)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        let changes = lrs.windows(2).filter(|w| w[1] != w[0]).count();
        assert_eq!(changes, 2);
    }

    #[test]
    fn zero_total_steps() {
        assert_eq!(lr_at(0, 0, &cfg(0)), 1e-5);
    }
}
