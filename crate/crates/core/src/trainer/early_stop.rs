/// Outcome of one early-stopping check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Patience counter over validation losses. A check improves only when the
/// loss is strictly below the best seen so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_check: usize,
    checks: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience: patience.max(1),
            best: None,
            best_check: 0,
            checks: 0,
            since_best: 0,
        }
    }

    /// Record a validation loss. Returns the decision and whether this check
    /// set a new best.
    pub fn observe(&mut self, loss: f64) -> (StopDecision, bool) {
        self.checks += 1;
        let improved = self.best.is_none_or(|b| loss < b);
        if improved {
            self.best = Some(loss);
            self.best_check = self.checks - 1;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        let decision = if self.since_best >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        };
        (decision, improved)
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Zero-based index of the check that produced the best loss.
    pub fn best_check(&self) -> usize {
        self.best_check
    }
}

/// Replay `history` through a fresh monitor and report the decision after
/// the last entry.
pub fn early_stop_monitor(history: &[f64], patience: usize) -> StopDecision {
    let mut m = EarlyStopping::new(patience);
    let mut last = StopDecision::Continue;
    for &l in history {
        last = m.observe(l).0;
        if last == StopDecision::Stop {
            break;
        }
    }
    last
}
