//! Hierarchical data: subjects, units on a line, subunit responses.

use serde::{Deserialize, Serialize};

use crate::accum::CompensatedSum;
use crate::error::{Error, Result};

/// One independent replicate: `N` units on a line, each carrying `m` responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    unit_locations: Vec<f64>,
    /// Row-major `N x m`.
    responses: Vec<f64>,
    m: usize,
}

impl Subject {
    /// Builds a subject from a row-major `N x m` response buffer.
    pub fn new(
        id: impl Into<String>,
        unit_locations: Vec<f64>,
        responses: Vec<f64>,
        m: usize,
    ) -> Result<Self> {
        let id = id.into();
        if m == 0 {
            return Err(Error::invalid("subunit count must be at least 1"));
        }
        if responses.len() != unit_locations.len() * m {
            return Err(Error::ShapeMismatch {
                expected: format!("{} x {m} responses for subject `{id}`", unit_locations.len()),
                found: format!("{} values", responses.len()),
            });
        }
        if let Some(bad) = unit_locations.iter().find(|s| !s.is_finite()) {
            return Err(Error::invalid(format!(
                "subject `{id}`: non-finite unit location {bad}"
            )));
        }
        if let Some(i) = responses.iter().position(|y| !y.is_finite()) {
            return Err(Error::invalid(format!(
                "subject `{id}`: non-finite response at unit {}, subunit {}",
                i / m,
                i % m
            )));
        }
        let mut sorted = unit_locations.clone();
        sorted.sort_by(f64::total_cmp);
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!(
                "subject `{id}`: duplicate unit location {}",
                w[0]
            )));
        }
        Ok(Self {
            id,
            unit_locations,
            responses,
            m,
        })
    }

    /// Convenience constructor from one row per unit.
    pub fn from_rows(id: impl Into<String>, unit_locations: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("ragged response rows"));
        }
        Self::new(id, unit_locations, rows.concat(), m)
    }

    pub fn n_units(&self) -> usize {
        self.unit_locations.len()
    }

    pub fn n_subunits(&self) -> usize {
        self.m
    }

    pub fn unit_locations(&self) -> &[f64] {
        &self.unit_locations
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.responses[i * self.m..(i + 1) * self.m]
    }

    /// Keeps the units whose locations satisfy `keep`, in their original order.
    pub fn filter_units(&self, keep: impl Fn(f64) -> bool) -> Subject {
        let mut locations = Vec::new();
        let mut responses = Vec::new();
        for (i, &s) in self.unit_locations.iter().enumerate() {
            if keep(s) {
                locations.push(s);
                responses.extend_from_slice(self.row(i));
            }
        }
        Subject {
            id: self.id.clone(),
            unit_locations: locations,
            responses,
            m: self.m,
        }
    }

    /// Applies `f(unit, subunit, value)` to every response.
    pub fn map_responses(&self, f: impl Fn(usize, usize, f64) -> f64) -> Subject {
        let m = self.m;
        let responses = self
            .responses
            .iter()
            .enumerate()
            .map(|(idx, &y)| f(idx / m, idx % m, y))
            .collect();
        Subject {
            responses,
            ..self.clone()
        }
    }
}

/// Subjects sharing one subunit grid and one domain `[0, L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    subjects: Vec<Subject>,
    subunit_grid: Vec<f64>,
    domain_length: f64,
}

impl Dataset {
    pub fn new(subjects: Vec<Subject>, subunit_grid: Vec<f64>, domain_length: f64) -> Result<Self> {
        if subunit_grid.is_empty() {
            return Err(Error::invalid("subunit grid is empty"));
        }
        if subunit_grid.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("subunit grid has non-finite values"));
        }
        if subunit_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("subunit grid must be strictly increasing"));
        }
        if !(domain_length.is_finite() && domain_length > 0.0) {
            return Err(Error::invalid(format!(
                "domain length must be finite and positive, got {domain_length}"
            )));
        }
        let m = subunit_grid.len();
        for s in &subjects {
            if s.m != m {
                return Err(Error::ShapeMismatch {
                    expected: format!("{m} subunits"),
                    found: format!("{} subunits in subject `{}`", s.m, s.id),
                });
            }
            if let Some(bad) = s
                .unit_locations
                .iter()
                .find(|&&x| !(0.0..=domain_length).contains(&x))
            {
                return Err(Error::invalid(format!(
                    "subject `{}`: unit location {bad} outside [0, {domain_length}]",
                    s.id
                )));
            }
        }
        Ok(Self {
            subjects,
            subunit_grid,
            domain_length,
        })
    }

    /// Regular subunit grid `(j - 1) / (m - 1)`, or `{0}` when `m = 1`.
    pub fn regular_grid(m: usize) -> Vec<f64> {
        if m == 1 {
            vec![0.0]
        } else {
            (0..m).map(|j| j as f64 / (m - 1) as f64).collect()
        }
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn subunit_grid(&self) -> &[f64] {
        &self.subunit_grid
    }

    pub fn n_subunits(&self) -> usize {
        self.subunit_grid.len()
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn total_units(&self) -> usize {
        self.subjects.iter().map(Subject::n_units).sum()
    }

    /// Same grid and domain, different subjects. Subjects must already fit.
    pub(crate) fn with_subjects(&self, subjects: Vec<Subject>) -> Dataset {
        Dataset {
            subjects,
            subunit_grid: self.subunit_grid.clone(),
            domain_length: self.domain_length,
        }
    }

    /// Drops subjects that have no units.
    pub fn without_empty_subjects(&self) -> Dataset {
        self.with_subjects(
            self.subjects
                .iter()
                .filter(|s| s.n_units() > 0)
                .cloned()
                .collect(),
        )
    }
}

/// Within-subject centered residuals `e_rij = Y_rij - mean_i Y_rij`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectResiduals {
    pub id: String,
    pub locations: Vec<f64>,
    /// Row-major `N x m`.
    pub residuals: Vec<f64>,
    pub means: Vec<f64>,
}

impl SubjectResiduals {
    pub fn n_units(&self) -> usize {
        self.locations.len()
    }

    #[inline]
    pub fn row(&self, i: usize, m: usize) -> &[f64] {
        &self.residuals[i * m..(i + 1) * m]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    subjects: Vec<SubjectResiduals>,
    m: usize,
}

impl ResidualSet {
    pub fn subjects(&self) -> &[SubjectResiduals] {
        &self.subjects
    }

    pub fn n_subunits(&self) -> usize {
        self.m
    }

    /// The same residuals without subject `r`.
    pub fn leave_out(&self, r: usize) -> ResidualSet {
        let subjects = self
            .subjects
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != r)
            .map(|(_, s)| s.clone())
            .collect();
        ResidualSet { subjects, m: self.m }
    }
}

/// Centers every subject's responses on its per-subunit mean.
pub fn center_residuals(data: &Dataset) -> Result<ResidualSet> {
    let m = data.n_subunits();
    let subjects = data
        .subjects()
        .iter()
        .map(|s| {
            let n = s.n_units();
            if n == 0 {
                return Err(Error::EmptySubject {
                    subject: s.id.clone(),
                });
            }
            let means: Vec<f64> = (0..m)
                .map(|j| {
                    let total: CompensatedSum = (0..n).map(|i| s.row(i)[j]).collect();
                    total.value() / n as f64
                })
                .collect();
            let residuals = s
                .responses()
                .chunks_exact(m)
                .flat_map(|row| row.iter().zip(&means).map(|(y, mu)| y - mu))
                .collect();
            Ok(SubjectResiduals {
                id: s.id.clone(),
                locations: s.unit_locations().to_vec(),
                residuals,
                means,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualSet { subjects, m })
}
