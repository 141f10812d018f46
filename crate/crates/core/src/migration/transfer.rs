use serde::Serialize;

use super::MigrationError;

/// Timing of one pre-copy migration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferPlan {
    /// Duration of each live pre-copy round, seconds.
    pub round_durations: Vec<f64>,
    /// Data sent in each live round, MB.
    pub round_mb: Vec<f64>,
    /// Dirty data left for the final stop-and-copy, MB.
    pub stop_and_copy_mb: f64,
    /// Length of the stop-and-copy freeze, seconds.
    pub downtime: f64,
}

impl TransferPlan {
    pub fn rounds(&self) -> usize {
        self.round_durations.len()
    }

    pub fn live_duration(&self) -> f64 {
        self.round_durations.iter().sum()
    }
}

/// Iterative pre-copy: the first round ships the whole image, each later
/// round ships what was dirtied during the previous one. Live rounds stop
/// once the dirtied amount is at most `stop_threshold_mb` or `max_rounds`
/// have run; the remainder goes in a stop-and-copy. When the guest dirties
/// memory at least as fast as the link drains it, the whole image is sent
/// stopped.
pub fn plan_transfer(
    image_mb: f64,
    dirty_rate_mbps: f64,
    bandwidth_mbps: f64,
    max_rounds: u32,
    stop_threshold_mb: f64,
) -> Result<TransferPlan, MigrationError> {
    if !(bandwidth_mbps > 0.0) || !bandwidth_mbps.is_finite() {
        return Err(MigrationError::InvalidTransfer(format!("bandwidth {bandwidth_mbps}")));
    }
    if !(dirty_rate_mbps >= 0.0) || !dirty_rate_mbps.is_finite() {
        return Err(MigrationError::InvalidTransfer(format!("dirty rate {dirty_rate_mbps}")));
    }
    if !(image_mb >= 0.0) || !image_mb.is_finite() {
        return Err(MigrationError::InvalidTransfer(format!("image size {image_mb}")));
    }
    if !(stop_threshold_mb >= 0.0) {
        return Err(MigrationError::InvalidTransfer(format!(
            "stop threshold {stop_threshold_mb}"
        )));
    }
    if max_rounds == 0 {
        return Err(MigrationError::InvalidTransfer("max_rounds must be at least 1".into()));
    }

    if dirty_rate_mbps >= bandwidth_mbps {
        return Ok(TransferPlan {
            round_durations: Vec::new(),
            round_mb: Vec::new(),
            stop_and_copy_mb: image_mb,
            downtime: image_mb / bandwidth_mbps,
        });
    }

    let mut round_durations = Vec::new();
    let mut round_mb = Vec::new();
    let mut to_send = image_mb;
    let remaining = loop {
        let secs = to_send / bandwidth_mbps;
        round_durations.push(secs);
        round_mb.push(to_send);
        let dirtied = dirty_rate_mbps * secs;
        if dirtied <= stop_threshold_mb || round_durations.len() as u32 >= max_rounds {
            break dirtied;
        }
        to_send = dirtied;
    };
    Ok(TransferPlan {
        round_durations,
        round_mb,
        stop_and_copy_mb: remaining,
        downtime: remaining / bandwidth_mbps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_dirty_rate_is_one_round() {
        let p = plan_transfer(100.0, 0.0, 12.5, 5, 8.0).unwrap();
        assert_eq!(p.round_durations, vec![8.0]);
        assert_eq!(p.stop_and_copy_mb, 0.0);
        assert_eq!(p.downtime, 0.0);
    }

    #[test]
    fn worked_example() {
        let p = plan_transfer(100.0, 2.5, 12.5, 5, 5.0).unwrap();
        assert_eq!(p.rounds(), 2);
        assert!((p.round_durations[0] - 8.0).abs() < 1e-12);
        assert!((p.round_durations[1] - 1.6).abs() < 1e-12);
        assert!((p.stop_and_copy_mb - 4.0).abs() < 1e-12);
        assert!((p.downtime - 0.32).abs() < 1e-12);
    }

    #[test]
    fn saturated_link_stops_immediately() {
        let p = plan_transfer(100.0, 12.5, 12.5, 5, 5.0).unwrap();
        assert_eq!(p.rounds(), 0);
        assert_eq!(p.stop_and_copy_mb, 100.0);
        assert_eq!(p.downtime, 8.0);
    }

    #[test]
    fn round_cap() {
        // dirty/bandwidth = 0.9, so 100 MB never drops below 1 MB in 3 rounds
        let p = plan_transfer(100.0, 9.0, 10.0, 3, 1.0).unwrap();
        assert_eq!(p.rounds(), 3);
        assert!((p.stop_and_copy_mb - 72.9).abs() < 1e-9);
    }

    #[test]
    fn invalid_inputs() {
        assert!(plan_transfer(100.0, 1.0, 0.0, 5, 5.0).is_err());
        assert!(plan_transfer(100.0, -1.0, 10.0, 5, 5.0).is_err());
        assert!(plan_transfer(-1.0, 1.0, 10.0, 5, 5.0).is_err());
        assert!(plan_transfer(100.0, 1.0, 10.0, 0, 5.0).is_err());
    }

    proptest! {
        #[test]
        fn plan_invariants(
            image in 0.0..4096.0f64,
            bw in 0.5..100.0f64,
            ratio in 0.0..1.2f64,
            max_rounds in 1u32..10,
            threshold in 0.0..64.0f64,
        ) {
            let dirty = bw * ratio;
            let p = plan_transfer(image, dirty, bw, max_rounds, threshold).unwrap();
            prop_assert!(p.rounds() as u32 <= max_rounds);
            prop_assert!((p.downtime - p.stop_and_copy_mb / bw).abs() <= 1e-12 * (1.0 + p.downtime));
            if let Some(last) = p.round_durations.last() {
                prop_assert!(p.stop_and_copy_mb <= threshold.max(dirty * last) + 1e-9);
            }
            prop_assert!(p.stop_and_copy_mb >= 0.0);
        }
    }
}
