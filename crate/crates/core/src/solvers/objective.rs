use crate::error::Result;

/// A differentiable objective `J` on `R^n`.
pub trait Objective {
    fn value(&self, x: &[f64]) -> Result<f64>;

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(x)?, self.gradient(x)?))
    }
}

/// Objective assembled from closures.
pub struct FnObjective<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<V, G> Objective for FnObjective<V, G>
where
    V: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn value(&self, x: &[f64]) -> Result<f64> {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        (self.gradient)(x)
    }
}
