//! Per-evaluation metric records.

use alloc::vec::Vec;

/// One row per evaluation point. Loss and density columns are means over
/// the updates since the previous row, or `None` when there were none.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    pub eval_return: f64,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub elbo_mu: Option<f64>,
    pub elbo_pi: Option<f64>,
    pub kl_estimate: Option<f64>,
}

impl MetricsRow {
    pub const COLUMNS: [&'static str; 8] = [
        "step",
        "episode",
        "eval_return",
        "actor_loss",
        "critic_loss",
        "elbo_mu",
        "elbo_pi",
        "kl_estimate",
    ];
}

/// Running mean that stays `None` until the first value.
#[derive(Debug, Clone, Copy, Default)]
pub struct Mean {
    sum: f64,
    n: u64,
}

impl Mean {
    pub fn push(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    pub fn push_opt(&mut self, x: Option<f64>) {
        if let Some(x) = x {
            self.push(x);
        }
    }

    /// Mean so far, then resets.
    pub fn take(&mut self) -> Option<f64> {
        let out = (self.n > 0).then(|| self.sum / self.n as f64);
        *self = Self::default();
        out
    }
}

/// Mean `eval_return` over the last `window` rows.
pub fn final_window_mean(rows: &[MetricsRow], window: usize) -> Option<f64> {
    if rows.is_empty() || window == 0 {
        return None;
    }
    let tail = &rows[rows.len().saturating_sub(window)..];
    Some(tail.iter().map(|r| r.eval_return).sum::<f64>() / tail.len() as f64)
}

/// Mean of the present `kl_estimate` values.
pub fn mean_kl(rows: &[MetricsRow]) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter_map(|r| r.kl_estimate).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn row(step: u64, ret: f64) -> MetricsRow {
        MetricsRow {
            step,
            episode: 0,
            eval_return: ret,
            actor_loss: None,
            critic_loss: None,
            elbo_mu: None,
            elbo_pi: None,
            kl_estimate: None,
        }
    }

    #[test]
    fn running_mean_resets() {
        let mut m = Mean::default();
        assert_eq!(m.take(), None);
        m.push(1.0);
        m.push(3.0);
        assert_eq!(m.take(), Some(2.0));
        assert_eq!(m.take(), None);
    }

    #[test]
    fn window_mean_uses_tail() {
        let rows = vec![row(1, 0.0), row(2, 2.0), row(3, 4.0)];
        assert_eq!(final_window_mean(&rows, 2), Some(3.0));
        assert_eq!(final_window_mean(&rows, 10), Some(2.0));
        assert_eq!(final_window_mean(&[], 3), None);
    }
}
