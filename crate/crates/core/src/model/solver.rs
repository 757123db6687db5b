use crate::error::{Error, Result};

/// A vector field plus the arithmetic needed to take an Euler step on its
/// state type. Lets the same solver drive tape variables and plain floats.
pub trait OdeSystem {
    type State: Clone;

    /// Derivative at `z` during observation interval `interval`.
    fn rhs(&mut self, z: &Self::State, interval: usize) -> Result<Self::State>;

    /// `z + h * dz`.
    fn step(&mut self, z: &Self::State, h: f64, dz: &Self::State) -> Result<Self::State>;

    fn is_finite(&self, z: &Self::State) -> bool;
}

/// Explicit Euler over `intervals` unit intervals with `substeps` steps each.
/// Returns the state at every interval boundary, starting with `z0`.
pub fn solve_euler<S: OdeSystem>(sys: &mut S, z0: S::State, intervals: usize, substeps: usize) -> Result<Vec<S::State>> {
    if substeps < 1 {
        return Err(Error::param("substeps must be at least 1"));
    }
    let h = 1.0 / substeps as f64;
    let mut out = Vec::with_capacity(intervals + 1);
    let mut z = z0;
    out.push(z.clone());
    let mut step = 0;
    for interval in 0..intervals {
        for _ in 0..substeps {
            let dz = sys.rhs(&z, interval)?;
            z = sys.step(&z, h, &dz)?;
            step += 1;
            if !sys.is_finite(&z) {
                return Err(Error::Solve { step });
            }
        }
        out.push(z.clone());
    }
    Ok(out)
}
