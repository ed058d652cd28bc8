//! Huber robust kernel applied to squared residual norms.

use crate::Real;

/// Huber kernel on the squared norm `s = |r|^2`; `delta` is in pixels.
/// A missing `delta` means infinity, which disables robustification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberKernel<T> {
    delta: Option<T>,
}

impl<T: Real> HuberKernel<T> {
    /// `delta` must be positive; `f64::INFINITY` gives the plain squared loss.
    pub fn new(delta: f64) -> Self {
        assert!(delta > 0.0, "Huber scale must be positive, got {delta}");
        if delta.is_infinite() {
            Self::trivial()
        } else {
            Self {
                delta: Some(T::lit(delta)),
            }
        }
    }

    pub fn trivial() -> Self {
        Self { delta: None }
    }

    pub fn delta(&self) -> Option<T> {
        self.delta
    }

    /// Returns `(rho(s), rho'(s))`.
    pub fn rho(&self, s: T) -> (T, T) {
        match self.delta {
            Some(d) if s > d * d => {
                let r = s.sqrt();
                (T::lit(2.0) * d * r - d * d, d / r)
            }
            _ => (s, T::one()),
        }
    }
}

impl<T: Real> Default for HuberKernel<T> {
    fn default() -> Self {
        Self::new(0.5)
    }
}
