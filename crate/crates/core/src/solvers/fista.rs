//! FISTA relaxation sequence.

/// Tracks `t(n)` with `t(0) = 1` and `t(n+1) = (1 + sqrt(1 + 4 t(n)²)) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Momentum {
    t: f64,
}

impl Default for Momentum {
    fn default() -> Self {
        Self::new()
    }
}

impl Momentum {
    pub fn new() -> Self {
        Self { t: 1.0 }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn next_t(t: f64) -> f64 {
        0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
    }

    /// Steps the sequence and returns the extrapolation weight `(t(n) - 1) / t(n+1)`.
    pub fn advance(&mut self) -> f64 {
        let next = Self::next_t(self.t);
        let beta = (self.t - 1.0) / next;
        self.t = next;
        beta
    }
}

/// `x + β (x - prev)`.
pub fn extrapolate(x: &[f64], prev: &[f64], beta: f64) -> Vec<f64> {
    x.iter().zip(prev).map(|(a, b)| a + beta * (a - b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_matches_recurrence() {
        let mut m = Momentum::new();
        assert_eq!(m.advance(), 0.0);
        assert_eq!(m.t(), (1.0 + 5f64.sqrt()) / 2.0);
        let mut t = m.t();
        for _ in 0..50 {
            let next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = m.advance();
            assert_eq!(beta, (t - 1.0) / next);
            assert_eq!(m.t(), next);
            t = next;
        }
        // β → 1 from below
        assert!(m.advance() < 1.0);
    }

    #[test]
    fn extrapolation() {
        assert_eq!(extrapolate(&[2.0, 1.0], &[1.0, 1.0], 0.5), vec![2.5, 1.0]);
    }
}
