//! Design-matrix construction shared by the regression models.

use serde::{Deserialize, Serialize};

use crate::survival::SubjectRecord;

/// Which columns enter a linear predictor: the treatment indicator, a set of
/// covariates (indices into the subject covariate vector) and treatment x
/// covariate interactions. Column order is `[A] covariates... A*interactions...`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub treatment: bool,
    pub covariates: Vec<usize>,
    pub interactions: Vec<usize>,
}

impl DesignSpec {
    pub fn covariates(covariates: Vec<usize>) -> Self {
        DesignSpec {
            treatment: false,
            covariates,
            interactions: Vec::new(),
        }
    }

    /// Treatment, covariates and treatment interactions with every covariate.
    pub fn with_full_interactions(covariates: Vec<usize>) -> Self {
        DesignSpec {
            treatment: true,
            interactions: covariates.clone(),
            covariates,
        }
    }

    pub fn ncols(&self) -> usize {
        usize::from(self.treatment) + self.covariates.len() + self.interactions.len()
    }

    pub fn fill_row(&self, treatment: u8, x: &[f64], out: &mut [f64]) {
        let a = f64::from(treatment);
        let mut c = 0;
        if self.treatment {
            out[c] = a;
            c += 1;
        }
        for &j in &self.covariates {
            out[c] = x[j];
            c += 1;
        }
        for &j in &self.interactions {
            out[c] = a * x[j];
            c += 1;
        }
    }

    pub fn row(&self, treatment: u8, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols()];
        self.fill_row(treatment, x, &mut out);
        out
    }

    /// Row-major design for the observed treatment of each subject.
    pub fn matrix(&self, subjects: &[SubjectRecord]) -> Vec<f64> {
        let p = self.ncols();
        let mut data = vec![0.0; subjects.len() * p];
        for (s, row) in subjects.iter().zip(data.chunks_mut(p.max(1))) {
            if p > 0 {
                self.fill_row(s.treatment, &s.covariates, row);
            }
        }
        data
    }

    pub fn column_names(&self, covariate_names: &[String]) -> Vec<String> {
        let mut names = Vec::with_capacity(self.ncols());
        if self.treatment {
            names.push("A".to_string());
        }
        names.extend(self.covariates.iter().map(|&j| covariate_names[j].clone()));
        names.extend(self.interactions.iter().map(|&j| format!("A:{}", covariate_names[j])));
        names
    }

    /// The same design with covariate `k` removed everywhere it appears.
    pub fn without(&self, k: usize) -> Self {
        DesignSpec {
            treatment: self.treatment,
            covariates: self.covariates.iter().copied().filter(|&j| j != k).collect(),
            interactions: self.interactions.iter().copied().filter(|&j| j != k).collect(),
        }
    }

    /// Drop covariates (and their interactions) for which `keep` is false.
    pub fn retain(&self, keep: impl Fn(usize) -> bool) -> Self {
        DesignSpec {
            treatment: self.treatment,
            covariates: self.covariates.iter().copied().filter(|&j| keep(j)).collect(),
            interactions: self.interactions.iter().copied().filter(|&j| keep(j)).collect(),
        }
    }
}
