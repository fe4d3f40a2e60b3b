//! Building regression designs: named columns, interactions, fixed-effect dummies.

use crate::econometrics::ols::DesignMatrix;
use crate::error::Result;
use crate::scalar::Scalar;

pub const INTERCEPT: &str = "(intercept)";

#[derive(Debug, Clone)]
pub struct DesignBuilder<T> {
    n: usize,
    names: Vec<String>,
    columns: Vec<Vec<T>>,
    /// Columns removed because they were identically zero.
    pub dropped: Vec<String>,
}

impl<T: Scalar> DesignBuilder<T> {
    pub fn new(n: usize) -> Self {
        Self { n, names: Vec::new(), columns: Vec::new(), dropped: Vec::new() }
    }

    pub fn intercept(mut self) -> Self {
        self.names.push(INTERCEPT.into());
        self.columns.push(vec![T::one(); self.n]);
        self
    }

    /// Adds a column; an all-zero column is recorded in `dropped` instead.
    pub fn column(mut self, name: impl Into<String>, values: Vec<T>) -> Self {
        assert_eq!(values.len(), self.n);
        let name = name.into();
        if values.iter().all(|v| *v == T::zero()) {
            self.dropped.push(name);
        } else {
            self.names.push(name);
            self.columns.push(values);
        }
        self
    }

    /// One dummy per level except the lexicographically first.
    pub fn fixed_effects(mut self, family: &str, keys: &[String]) -> Self {
        assert_eq!(keys.len(), self.n);
        let mut levels: Vec<&String> = keys.iter().collect();
        levels.sort();
        levels.dedup();
        for level in levels.into_iter().skip(1) {
            let col = keys.iter().map(|k| if k == level { T::one() } else { T::zero() }).collect();
            self = self.column(format!("{family}[{level}]"), col);
        }
        self
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn build(self, y: Vec<T>, clusters: Vec<u32>) -> Result<DesignMatrix<T>> {
        DesignMatrix::new(self.names, self.columns, y, clusters)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dummies_drop_first_level_and_zero_columns() {
        let keys: Vec<String> = ["b", "a", "c", "a"].iter().map(|s| s.to_string()).collect();
        let b = DesignBuilder::<f64>::new(4)
            .intercept()
            .fixed_effects("year", &keys)
            .column("never", vec![0.0; 4]);
        assert_eq!(b.names(), &[INTERCEPT, "year[b]", "year[c]"]);
        assert_eq!(b.dropped, vec!["never".to_string()]);
        let single = DesignBuilder::<f64>::new(2).intercept().fixed_effects("year", &["x".into(), "x".into()]);
        assert_eq!(single.names(), &[INTERCEPT]);
    }
}
