//! Krippendorff's alpha at the nominal level.
//!
//! Uses the coincidence-matrix formulation. A unit with `m` present values
//! contributes `1 / (m - 1)` to `o[c][k]` for every ordered pair of values
//! from different raters; units with fewer than two values contribute
//! nothing. With `n_c` the marginals and `n` their total,
//!
//! ```text
//! alpha = 1 - (n - 1) * sum_{c != k} o[c][k] / sum_{c != k} n_c * n_k
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Debug;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    #[default]
    Nominal,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlphaError {
    #[error("no unit has two or more ratings")]
    NoPairableUnits,
    /// Every pairable value falls in one category, so expected
    /// disagreement is zero and alpha is undefined.
    #[error("degenerate distribution: only one category observed ({category})")]
    Degenerate { category: String },
    #[error("category {0} is not in the matrix's label set")]
    UnknownCategory(String),
}

/// Partial rater × unit table of nominal categories.
#[derive(Debug, Clone)]
pub struct RatingsMatrix<C> {
    categories: BTreeSet<C>,
    raters: Vec<String>,
    units: Vec<String>,
    rater_index: HashMap<String, usize>,
    unit_index: HashMap<String, usize>,
    cells: BTreeMap<(usize, usize), C>,
    pub level: Level,
}

impl<C: Ord + Clone + Debug> RatingsMatrix<C> {
    pub fn new<I: IntoIterator<Item = C>>(categories: I) -> Self {
        RatingsMatrix {
            categories: categories.into_iter().collect(),
            raters: Vec::new(),
            units: Vec::new(),
            rater_index: HashMap::new(),
            unit_index: HashMap::new(),
            cells: BTreeMap::new(),
            level: Level::Nominal,
        }
    }

    fn intern(ids: &mut Vec<String>, index: &mut HashMap<String, usize>, id: &str) -> usize {
        if let Some(&i) = index.get(id) {
            return i;
        }
        ids.push(id.to_string());
        index.insert(id.to_string(), ids.len() - 1);
        ids.len() - 1
    }

    /// Registers a unit without any rating, so it shows up in `units()`.
    pub fn add_unit(&mut self, unit: &str) {
        Self::intern(&mut self.units, &mut self.unit_index, unit);
    }

    pub fn add_rater(&mut self, rater: &str) {
        Self::intern(&mut self.raters, &mut self.rater_index, rater);
    }

    /// Sets (or replaces) one cell.
    pub fn set(&mut self, rater: &str, unit: &str, category: C) -> Result<(), AlphaError> {
        if !self.categories.contains(&category) {
            return Err(AlphaError::UnknownCategory(format!("{category:?}")));
        }
        let r = Self::intern(&mut self.raters, &mut self.rater_index, rater);
        let u = Self::intern(&mut self.units, &mut self.unit_index, unit);
        self.cells.insert((r, u), category);
        Ok(())
    }

    pub fn get(&self, rater: &str, unit: &str) -> Option<&C> {
        let r = *self.rater_index.get(rater)?;
        let u = *self.unit_index.get(unit)?;
        self.cells.get(&(r, u))
    }

    pub fn raters(&self) -> &[String] {
        &self.raters
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Present values per unit, in unit order.
    pub fn unit_values(&self) -> Vec<Vec<&C>> {
        let mut out = vec![Vec::new(); self.units.len()];
        for ((_, u), c) in &self.cells {
            out[*u].push(c);
        }
        out
    }

    /// Units with fewer than two present values; they carry no pairing
    /// information and are left out of the coincidence counts.
    pub fn unpairable_units(&self) -> Vec<&str> {
        self.unit_values()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.len() < 2)
            .map(|(i, _)| self.units[i].as_str())
            .collect()
    }

    pub fn pairable_unit_count(&self) -> usize {
        self.unit_values().iter().filter(|v| v.len() >= 2).count()
    }
}

/// Nominal-level alpha over the present cells of `matrix`.
pub fn krippendorff_alpha<C: Ord + Clone + Debug>(matrix: &RatingsMatrix<C>) -> Result<f64, AlphaError> {
    // Per-unit category tallies give the coincidence matrix directly:
    // o[c][c] += t_c (t_c - 1) / (m - 1), o[c][k] += t_c t_k / (m - 1).
    let mut marginals: BTreeMap<&C, f64> = BTreeMap::new();
    let mut observed_disagreement = 0.0;
    let mut pairable = 0usize;
    for values in matrix.unit_values() {
        let m = values.len();
        if m < 2 {
            continue;
        }
        pairable += 1;
        let mut tally: BTreeMap<&C, usize> = BTreeMap::new();
        for c in values {
            *tally.entry(c).or_default() += 1;
        }
        let same: usize = tally.values().map(|&t| t * (t - 1)).sum();
        let different = m * (m - 1) - same;
        observed_disagreement += different as f64 / (m - 1) as f64;
        for (c, t) in tally {
            *marginals.entry(c).or_default() += t as f64;
        }
    }
    if pairable == 0 {
        return Err(AlphaError::NoPairableUnits);
    }
    if marginals.len() < 2 {
        let category = marginals.keys().next().map(|c| format!("{c:?}")).unwrap_or_default();
        return Err(AlphaError::Degenerate { category });
    }
    let n: f64 = marginals.values().sum();
    let sum_sq: f64 = marginals.values().map(|v| v * v).sum();
    let expected_pairs = n * n - sum_sq;
    Ok(1.0 - (n - 1.0) * observed_disagreement / expected_pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct transcription of the coincidence formula: explicit o[c][k]
    /// over ordered rater pairs, then D_o / D_e.
    fn naive_alpha(raters: usize, units: usize, cell: &dyn Fn(usize, usize) -> Option<u8>) -> Option<f64> {
        let mut o = [[0.0f64; 8]; 8];
        for u in 0..units {
            let m = (0..raters).filter(|&r| cell(r, u).is_some()).count();
            if m < 2 {
                continue;
            }
            for i in 0..raters {
                for j in 0..raters {
                    if i == j {
                        continue;
                    }
                    if let (Some(a), Some(b)) = (cell(i, u), cell(j, u)) {
                        o[a as usize][b as usize] += 1.0 / (m as f64 - 1.0);
                    }
                }
            }
        }
        let nc: Vec<f64> = (0..8).map(|c| o[c].iter().sum()).collect();
        let n: f64 = nc.iter().sum();
        let mut d_o = 0.0;
        let mut d_e = 0.0;
        for c in 0..8 {
            for k in 0..8 {
                if c != k {
                    d_o += o[c][k];
                    d_e += nc[c] * nc[k];
                }
            }
        }
        if n == 0.0 || d_e == 0.0 {
            return None;
        }
        Some(1.0 - (d_o / n) / (d_e / (n * (n - 1.0))))
    }

    #[test]
    fn matches_naive_oracle_3x8_with_missing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let grid: Vec<Vec<Option<u8>>> = (0..3)
                .map(|_| {
                    (0..8)
                        .map(|_| (rng.random::<f64>() >= 0.2).then(|| rng.random_range(0..3)))
                        .collect()
                })
                .collect();
            let mut m = RatingsMatrix::new(0u8..3);
            for (r, row) in grid.iter().enumerate() {
                for (u, c) in row.iter().enumerate() {
                    if let Some(c) = c {
                        m.set(&format!("r{r}"), &format!("u{u}"), *c).unwrap();
                    }
                }
            }
            let oracle = naive_alpha(3, 8, &|r, u| grid[r][u]);
            match (krippendorff_alpha(&m), oracle) {
                (Ok(a), Some(b)) => assert!((a - b).abs() < 1e-9, "{a} vs {b}"),
                (Err(_), None) => {}
                (got, want) => panic!("{got:?} vs {want:?}"),
            }
        }
    }

    #[test]
    fn unanimous_two_categories_is_exactly_one() {
        let mut m = RatingsMatrix::new(["s", "n"]);
        for r in ["v1", "v2", "v3"] {
            m.set(r, "a", "s").unwrap();
            m.set(r, "b", "n").unwrap();
        }
        assert_eq!(krippendorff_alpha(&m).unwrap(), 1.0);
    }

    #[test]
    fn single_category_is_degenerate() {
        let mut m = RatingsMatrix::new(["sarcastic", "non_sarcastic"]);
        for r in ["v1", "v2", "v3"] {
            for u in 0..5 {
                m.set(r, &format!("u{u}"), "sarcastic").unwrap();
            }
        }
        assert!(matches!(krippendorff_alpha(&m), Err(AlphaError::Degenerate { .. })));
    }

    #[test]
    fn no_pairable_units() {
        let mut m = RatingsMatrix::new([1, 2]);
        m.set("r1", "a", 1).unwrap();
        m.set("r2", "b", 2).unwrap();
        assert_eq!(krippendorff_alpha(&m), Err(AlphaError::NoPairableUnits));
        assert_eq!(m.unpairable_units(), vec!["a", "b"]);
    }

    #[test]
    fn rejects_unknown_category() {
        let mut m = RatingsMatrix::new(["a"]);
        assert!(matches!(m.set("r", "u", "b"), Err(AlphaError::UnknownCategory(_))));
    }

    #[test]
    fn textbook_example() {
        // Two raters, nominal: units (a,a) (a,b) (b,b) (b,b).
        // n = 8, n_a = 3, n_b = 5, o_ab = o_ba = 1.
        // alpha = 1 - 7 * 2 / (2 * 3 * 5) = 1 - 14/30.
        let mut m = RatingsMatrix::new(['a', 'b']);
        for (u, (x, y)) in [('a', 'a'), ('a', 'b'), ('b', 'b'), ('b', 'b')].iter().enumerate() {
            m.set("r1", &u.to_string(), *x).unwrap();
            m.set("r2", &u.to_string(), *y).unwrap();
        }
        assert!((krippendorff_alpha(&m).unwrap() - (1.0 - 14.0 / 30.0)).abs() < 1e-15);
    }

    #[test]
    fn relabeling_categories_leaves_alpha_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let mut a = RatingsMatrix::new(0u8..3);
            let mut b = RatingsMatrix::new(0u8..3);
            for r in 0..3 {
                for u in 0..20 {
                    let c: u8 = rng.random_range(0..3);
                    a.set(&r.to_string(), &u.to_string(), c).unwrap();
                    b.set(&r.to_string(), &u.to_string(), (c + 1) % 3).unwrap();
                }
            }
            assert!((krippendorff_alpha(&a).unwrap() - krippendorff_alpha(&b).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn random_binary_ratings_center_on_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let trials = 1000;
        let mut sum = 0.0;
        let mut outside = 0;
        for _ in 0..trials {
            let mut m = RatingsMatrix::new([false, true]);
            for r in 0..3 {
                for u in 0..200 {
                    m.set(&r.to_string(), &u.to_string(), rng.random::<bool>()).unwrap();
                }
            }
            let a = krippendorff_alpha(&m).unwrap();
            sum += a;
            if a.abs() >= 0.15 {
                outside += 1;
            }
        }
        // The band is ~3.5 standard errors wide at 600 values, so a rare
        // single-trial excursion is expected; the mean must sit inside it.
        assert!((sum / trials as f64).abs() < 0.01, "mean {}", sum / trials as f64);
        assert!(outside <= trials / 100, "{outside} trials with |alpha| >= 0.15");
    }
}
