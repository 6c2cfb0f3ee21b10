use crate::error::{Error, Result};
use crate::nnkit::Scalar;
use crate::Real;

/// One named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<S: Scalar = Real> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<S>,
}

impl<S: Scalar> Param<S> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered collection of named parameter tensors (model weights, gradients,
/// optimizer moments).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<S: Scalar = Real> {
    entries: Vec<Param<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// Appends an entry, enforcing unique names, positive dims and a
    /// matching value count.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<S>) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::config(format!(
                "parameter `{name}` has non-positive shape {shape:?}"
            )));
        }
        let count: usize = shape.iter().product();
        if count != values.len() {
            return Err(Error::config(format!(
                "parameter `{name}`: shape {shape:?} needs {count} values, got {}",
                values.len()
            )));
        }
        self.entries.push(Param {
            name,
            shape: shape.to_vec(),
            values,
        });
        Ok(())
    }

    pub fn push_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<()> {
        let count = shape.iter().product();
        self.push(name, shape, vec![S::zero(); count])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all entries.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(Param::len).sum()
    }

    pub fn entries(&self) -> &[Param<S>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Param<S>] {
        &mut self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.entries.iter()
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&Param<S>> {
        self.entries
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<S>> {
        self.entries
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    /// Entry that must have exactly `shape`.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Param<S>> {
        let p = self.get(name)?;
        if p.shape != shape {
            return Err(Error::config(format!(
                "parameter `{name}` has shape {:?}, expected {shape:?}",
                p.shape
            )));
        }
        Ok(p)
    }

    /// Identical names and shapes in identical order.
    pub fn is_aligned(&self, other: &ParamSet<S>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn check_aligned(&self, other: &ParamSet<S>, what: &str) -> Result<()> {
        if self.is_aligned(other) {
            Ok(())
        } else {
            Err(Error::config(format!("{what}: parameter sets are not aligned")))
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    values: vec![S::zero(); p.values.len()],
                })
                .collect(),
        }
    }

    pub fn fill(&mut self, v: S) {
        for p in &mut self.entries {
            p.values.iter_mut().for_each(|x| *x = v);
        }
    }

    /// `self += other * scale`, entrywise. Sets must be aligned.
    pub fn add_scaled(&mut self, other: &ParamSet<S>, scale: S) -> Result<()> {
        self.check_aligned(other, "add_scaled")?;
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += *y * scale;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: S) {
        for p in &mut self.entries {
            p.values.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|p| p.values.iter().all(|v| v.is_finite()))
    }

    /// Largest absolute entrywise difference; `None` when not aligned.
    pub fn max_abs_diff(&self, other: &ParamSet<S>) -> Option<S> {
        if !self.is_aligned(other) {
            return None;
        }
        let mut m = S::zero();
        for (a, b) in self.entries.iter().zip(&other.entries) {
            for (x, y) in a.values.iter().zip(&b.values) {
                m = m.max((*x - *y).abs());
            }
        }
        Some(m)
    }

    /// Converts to another scalar type (exact for f32 -> f64).
    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    values: p.values.iter().map(|v| T::lit(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_validates() {
        let mut ps = ParamSet::<f64>::new();
        ps.push("a", &[2, 2], vec![0.0; 4]).unwrap();
        assert!(ps.push("a", &[1], vec![0.0]).is_err());
        assert!(ps.push("b", &[0], vec![]).is_err());
        assert!(ps.push("c", &[3], vec![0.0; 2]).is_err());
        assert_eq!(ps.num_values(), 4);
    }

    #[test]
    fn alignment_requires_order() {
        let mut a = ParamSet::<f64>::new();
        a.push_zeros("x", &[1]).unwrap();
        a.push_zeros("y", &[2]).unwrap();
        let mut b = ParamSet::<f64>::new();
        b.push_zeros("y", &[2]).unwrap();
        b.push_zeros("x", &[1]).unwrap();
        assert!(!a.is_aligned(&b));
        assert!(a.is_aligned(&a.zeros_like()));
    }

    #[test]
    fn missing_entry_is_config_error() {
        let ps = ParamSet::<f64>::new();
        assert!(matches!(ps.get("nope"), Err(Error::Config(_))));
    }
}
