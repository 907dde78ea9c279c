//! Validation-loss plateau detection with best-epoch tracking.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without an improvement of more
/// than `min_delta` over the best validation loss seen so far.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: Option<(usize, f64)>,
    stale_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        assert!(patience >= 1, "patience must be >= 1");
        EarlyStopping {
            patience,
            min_delta,
            best: None,
            stale_epochs: 0,
        }
    }

    /// Record an epoch's validation loss. Returns the decision and whether
    /// this epoch became the new best (callers snapshot parameters then).
    pub fn update(&mut self, epoch: usize, val_loss: f64) -> (StopDecision, bool) {
        let improved = match self.best {
            None => true,
            Some((_, best_loss)) => best_loss - val_loss > self.min_delta,
        };
        if improved {
            self.best = Some((epoch, val_loss));
            self.stale_epochs = 0;
            (StopDecision::Continue, true)
        } else {
            self.stale_epochs += 1;
            let decision = if self.stale_epochs >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            };
            (decision, false)
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.map(|(_, l)| l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(losses: &[f64], patience: usize, min_delta: f64) -> (usize, usize) {
        let mut es = EarlyStopping::new(patience, min_delta);
        let mut stopped = losses.len();
        for (i, &loss) in losses.iter().enumerate() {
            let epoch = i + 1;
            let (decision, _) = es.update(epoch, loss);
            if decision == StopDecision::Stop {
                stopped = epoch;
                break;
            }
        }
        (stopped, es.best_epoch().unwrap())
    }

    #[test]
    fn strict_improvement_never_stops() {
        let losses: Vec<f64> = (0..30).map(|i| 1.0 - 0.01 * i as f64).collect();
        let (stopped, best) = run(&losses, 3, 1e-4);
        assert_eq!(stopped, 30);
        assert_eq!(best, 30);
    }

    #[test]
    fn flat_losses_stop_after_patience_runs_out() {
        let (stopped, best) = run(&[1.0, 1.0, 1.0, 1.0], 3, 1e-4);
        assert_eq!(stopped, 4);
        assert_eq!(best, 1);
    }

    #[test]
    fn rebound_after_improvement_traces_the_counter() {
        let (stopped, best) = run(&[1.0, 0.5, 0.6, 0.55, 0.58], 3, 1e-4);
        assert_eq!(stopped, 5);
        assert_eq!(best, 2);
    }

    #[test]
    fn sub_min_delta_improvements_do_not_reset_the_counter() {
        // Each epoch improves, but never by more than min_delta over the
        // recorded best, so the plateau counter keeps climbing.
        let (stopped, best) = run(&[1.0, 0.99997, 0.99994, 0.99991], 3, 1e-4);
        assert_eq!(stopped, 4);
        assert_eq!(best, 1);
    }
}
