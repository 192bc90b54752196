#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once the monitored loss has failed to improve for `patience`
/// consecutive observations.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    patience: usize,
    best: f64,
    since_improvement: usize,
    observations: usize,
    best_index: usize,
}

impl EarlyStop {
    pub const DEFAULT_PATIENCE: usize = 5;

    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since_improvement: 0,
            observations: 0,
            best_index: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> StopDecision {
        let index = self.observations;
        self.observations += 1;
        if loss < self.best {
            self.best = loss;
            self.best_index = index;
            self.since_improvement = 0;
            return StopDecision::Improved;
        }
        self.since_improvement += 1;
        if self.since_improvement >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Zero-based index of the observation that produced [`EarlyStop::best`].
    pub fn best_index(&self) -> usize {
        self.best_index
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self::new(Self::DEFAULT_PATIENCE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_exactly_at_patience() {
        let mut es = EarlyStop::new(5);
        assert_eq!(es.observe(1.0), StopDecision::Improved);
        for _ in 0..4 {
            assert_eq!(es.observe(1.0), StopDecision::Continue);
        }
        assert_eq!(es.observe(2.0), StopDecision::Stop);
        assert_eq!(es.best_index(), 0);
    }

    #[test]
    fn improvement_resets_counter() {
        let mut es = EarlyStop::default();
        es.observe(3.0);
        es.observe(4.0);
        es.observe(4.0);
        assert_eq!(es.epochs_since_improvement(), 2);
        assert_eq!(es.observe(2.5), StopDecision::Improved);
        assert_eq!(es.epochs_since_improvement(), 0);
        assert_eq!(es.best(), 2.5);
        assert_eq!(es.best_index(), 3);
    }
}
