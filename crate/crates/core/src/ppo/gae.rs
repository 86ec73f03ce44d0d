/// Generalized advantage estimates of one trajectory segment.
///
/// `values` holds `V(s_0..s_n)`, the last entry being the bootstrap value of
/// the state after the final reward (0 for a terminal state).
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(values.len(), rewards.len() + 1, "values must include the bootstrap value");
    let mut advantages = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        running = delta + gamma * lambda * running;
        advantages[t] = running;
    }
    advantages
}

/// GAE over consecutive segments. `segment_end[t]` marks the last sample of a
/// segment, whose successor value is `next_values[t]`.
pub fn segmented_gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    segment_end: &[bool],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    assert!(values.len() == n && next_values.len() == n && segment_end.len() == n);
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        if segment_end[t] {
            running = 0.0;
        }
        let next = if segment_end[t] { next_values[t] } else { values[t + 1] };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        advantages[t] = running;
    }
    advantages
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_zero_is_td_error() {
        let r = [1.0, -2.0, 0.5];
        let v = [0.3, 0.1, -0.4, 2.0];
        let a = gae(&r, &v, 0.9, 0.0);
        for t in 0..3 {
            assert_eq!(a[t], r[t] + 0.9 * v[t + 1] - v[t]);
        }
    }

    #[test]
    fn lambda_one_zero_values_is_return() {
        let r = [1.0, 2.0, 3.0];
        let a = gae(&r, &[0.0; 4], 0.5, 1.0);
        assert_eq!(a, vec![1.0 + 0.5 * 2.0 + 0.25 * 3.0, 2.0 + 0.5 * 3.0, 3.0]);
    }

    #[test]
    fn segments_do_not_leak() {
        let r = [1.0, 1.0, 5.0, 5.0];
        let v = [0.0, 0.0, 0.0, 0.0];
        let next = [0.0, 7.0, 0.0, 3.0];
        let ends = [false, true, false, true];
        let a = segmented_gae(&r, &v, &next, &ends, 0.9, 0.8);
        let first = gae(&r[..2], &[0.0, 0.0, 7.0], 0.9, 0.8);
        let second = gae(&r[2..], &[0.0, 0.0, 3.0], 0.9, 0.8);
        assert_eq!(&a[..2], first.as_slice());
        assert_eq!(&a[2..], second.as_slice());
    }
}
