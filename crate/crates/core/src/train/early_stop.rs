use crate::metrics::Direction;

/// Patience rule: stop once the metric has not improved for `patience`
/// epochs, but never before epoch `patience`.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    direction: Direction,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize, direction: Direction) -> Self {
        Self {
            patience,
            direction,
            best: None,
        }
    }

    /// Records the metric of `epoch` (1-based, consecutive) and reports
    /// whether training should stop after it. Improvement is strict.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        let improved = match self.best {
            None => !metric.is_nan(),
            Some((_, best)) => self.direction.better(metric, best),
        };
        if improved {
            self.best = Some((epoch, metric));
        }
        let since = epoch - self.best.map_or(0, |(e, _)| e);
        epoch >= self.patience && since >= self.patience
    }

    /// Epoch and value of the best metric so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stop_epoch(patience: usize, direction: Direction, metrics: &[f64]) -> Option<usize> {
        let mut es = EarlyStopping::new(patience, direction);
        metrics.iter().enumerate().find_map(|(i, &m)| es.observe(i + 1, m).then_some(i + 1))
    }

    #[test]
    fn patience_one_stops_on_first_regression() {
        assert_eq!(stop_epoch(1, Direction::Minimize, &[1.0, 2.0, 3.0]), Some(2));
    }

    #[test]
    fn no_stop_before_patience() {
        // best at epoch 1, never improves; with patience 3 stop at epoch 4
        assert_eq!(stop_epoch(3, Direction::Maximize, &[0.9, 0.1, 0.1, 0.1, 0.1]), Some(4));
        assert_eq!(stop_epoch(3, Direction::Maximize, &[0.1, 0.2, 0.3, 0.4]), None);
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        assert_eq!(stop_epoch(2, Direction::Minimize, &[1.0, 1.0, 1.0]), Some(3));
    }

    #[test]
    fn best_is_tracked() {
        let mut es = EarlyStopping::new(5, Direction::Maximize);
        for (i, m) in [0.2, 0.5, 0.4].iter().enumerate() {
            es.observe(i + 1, *m);
        }
        assert_eq!(es.best(), Some((2, 0.5)));
    }
}
