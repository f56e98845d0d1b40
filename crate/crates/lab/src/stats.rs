//! Reward-curve statistics.

/// Trailing mean: element `e` averages rewards `max(0, e + 1 - window)..=e`.
pub fn moving_average(rewards: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..rewards.len())
        .map(|e| {
            let w = &rewards[(e + 1).saturating_sub(window)..=e];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// First episode whose moving average reaches `threshold`.
pub fn episodes_to_threshold(curve: &[f64], threshold: f64) -> Option<usize> {
    curve.iter().position(|v| *v >= threshold)
}

/// Per-episode mean, min and max across equally long curves.
///
/// Shorter curves (stopped runs) only contribute to the episodes they reached.
pub fn band(curves: &[Vec<f64>]) -> Vec<(f64, f64, f64)> {
    let len = curves.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|e| {
            let vals: Vec<f64> = curves.iter().filter_map(|c| c.get(e).copied()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (mean, min, max)
        })
        .collect()
}

/// `"40976 (47.15%)"`.
pub fn format_interactions(advised: usize, steps: usize) -> String {
    let pct = if steps == 0 {
        0.0
    } else {
        100.0 * advised as f64 / steps as f64
    };
    format!("{advised} ({pct:.2}%)")
}
