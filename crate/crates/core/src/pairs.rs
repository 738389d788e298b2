//! Unit-pair enumeration and lag-sorted pair tables.

use crate::data::{Subject, SubjectResiduals};

/// All ordered pairs `(i, k, s_i - s_k)`, `i != k`, optionally pruned to
/// `|s_i - s_k| <= cap`.
pub fn enumerate_pairs(
    subject: &Subject,
    cap: Option<f64>,
) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    let locs = subject.unit_locations();
    let cap = cap.unwrap_or(f64::INFINITY);
    (0..locs.len()).flat_map(move |i| {
        (0..locs.len()).filter_map(move |k| {
            let d = locs[i] - locs[k];
            (i != k && d.abs() <= cap).then_some((i, k, d))
        })
    })
}

/// One unordered unit pair `{a, b}` with `a < b` and `lag = s_a - s_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitPair {
    pub a: u32,
    pub b: u32,
    pub lag: f64,
    pub abs_lag: f64,
    /// `sum_{j >= l} (e_aj e_bl + e_bj e_al)`.
    pub lower: f64,
    /// `sum_{j >= l} |e_aj e_bl + e_bj e_al|`.
    pub lower_abs: f64,
}

/// Unordered pairs of one subject, sorted by absolute lag.
#[derive(Debug, Clone)]
pub struct PairTable {
    pairs: Vec<UnitPair>,
    cap: f64,
}

impl PairTable {
    pub fn build(subject: &SubjectResiduals, m: usize, cap: Option<f64>) -> Self {
        let cap = cap.unwrap_or(f64::INFINITY);
        let locs = &subject.locations;
        let mut order: Vec<usize> = (0..locs.len()).collect();
        order.sort_by(|&x, &y| locs[x].total_cmp(&locs[y]));

        let mut pairs = Vec::new();
        for (p, &i) in order.iter().enumerate() {
            for &k in &order[p + 1..] {
                if locs[k] - locs[i] > cap {
                    break;
                }
                let (a, b) = if i < k { (i, k) } else { (k, i) };
                let lag = locs[a] - locs[b];
                let (lower, lower_abs) = lower_sums(subject.row(a, m), subject.row(b, m));
                pairs.push(UnitPair {
                    a: a as u32,
                    b: b as u32,
                    lag,
                    abs_lag: lag.abs(),
                    lower,
                    lower_abs,
                });
            }
        }
        pairs.sort_by(|x, y| {
            x.abs_lag
                .total_cmp(&y.abs_lag)
                .then(x.a.cmp(&y.a))
                .then(x.b.cmp(&y.b))
        });
        Self { pairs, cap }
    }

    pub fn pairs(&self) -> &[UnitPair] {
        &self.pairs
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs with `|abs_lag - center| < radius`.
    pub fn window(&self, center: f64, radius: f64) -> &[UnitPair] {
        let lo = self.pairs.partition_point(|p| p.abs_lag <= center - radius);
        let hi = self.pairs.partition_point(|p| p.abs_lag < center + radius);
        if lo >= hi {
            &[]
        } else {
            &self.pairs[lo..hi]
        }
    }

    /// Pairs with `abs_lag < limit`.
    pub fn below(&self, limit: f64) -> &[UnitPair] {
        let hi = self.pairs.partition_point(|p| p.abs_lag < limit);
        &self.pairs[..hi]
    }
}

fn lower_sums(ea: &[f64], eb: &[f64]) -> (f64, f64) {
    let mut total = 0.0;
    let mut total_abs = 0.0;
    for j in 0..ea.len() {
        for l in 0..=j {
            let v = ea[j] * eb[l] + eb[j] * ea[l];
            total += v;
            total_abs += v.abs();
        }
    }
    (total, total_abs)
}
