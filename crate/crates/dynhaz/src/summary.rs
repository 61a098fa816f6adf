//! Aggregations over long-format benchmark results.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use dynhaz_core::MethodKind;

use crate::benchmark::{LongRow, Metric, FACTOR_NAMES};
use crate::io::IoError;

/// Forecast horizons `u - t = 1` and `u - t > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HorizonGroup {
    Next,
    Later,
}

impl HorizonGroup {
    pub fn of(t: usize, u: usize) -> Self {
        if u - t == 1 {
            HorizonGroup::Next
        } else {
            HorizonGroup::Later
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            HorizonGroup::Next => "1",
            HorizonGroup::Later => ">1",
        }
    }
}

/// Mean of `m_Separate - m_Superpp` over every replication and `(t, u)` cell
/// at one level of one factor.
#[derive(Debug, Clone, PartialEq)]
pub struct MainEffect {
    pub factor: &'static str,
    pub level: String,
    pub horizon: HorizonGroup,
    pub metric: Metric,
    pub mean_difference: f64,
    pub n_pairs: usize,
    /// Pairs dropped because one side was missing or undefined.
    pub n_missing: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SummaryError {
    #[error("insufficient data: {0}")]
    InsufficientData(&'static str),
}

type PairKey<'a> = (&'a [String; 8], usize, usize, usize, Metric);

/// `(factor levels, method, t, u)`.
pub type CellKey = ([String; 8], MethodKind, usize, usize);

pub fn main_effects(rows: &[LongRow]) -> Result<Vec<MainEffect>, SummaryError> {
    let mut level_order: Vec<Vec<&str>> = vec![Vec::new(); FACTOR_NAMES.len()];
    for r in rows {
        for (i, level) in r.levels.iter().enumerate() {
            if !level_order[i].contains(&level.as_str()) {
                level_order[i].push(level);
            }
        }
    }
    if level_order.iter().all(|l| l.len() < 2) {
        return Err(SummaryError::InsufficientData("every factor has a single level"));
    }

    let mut separate: BTreeMap<PairKey, Option<f64>> = BTreeMap::new();
    let mut superpp: HashMap<PairKey, Option<f64>> = HashMap::new();
    for r in rows {
        let key = (&r.levels, r.t, r.u, r.replication, r.metric);
        match r.method {
            MethodKind::Separate => {
                separate.insert(key, r.value);
            }
            MethodKind::Superpp => {
                superpp.insert(key, r.value);
            }
            _ => {}
        }
    }

    // (factor, level index, group, metric) -> (sum, pairs, missing)
    type Slot = (usize, usize, HorizonGroup, Metric);
    let mut acc: BTreeMap<Slot, (f64, usize, usize)> = BTreeMap::new();
    let mut any_pair = false;
    let mut visit = |key: &PairKey, diff: Option<f64>| {
        let (levels, t, u, _, metric) = *key;
        for (i, level) in levels.iter().enumerate() {
            let li = level_order[i].iter().position(|l| *l == level.as_str()).unwrap_or(0);
            let e = acc.entry((i, li, HorizonGroup::of(t, u), metric)).or_insert((0.0, 0, 0));
            match diff {
                Some(d) => {
                    e.0 += d;
                    e.1 += 1;
                }
                None => e.2 += 1,
            }
        }
    };
    for (key, &s) in &separate {
        let diff = match (s, superpp.remove(key).flatten()) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        };
        any_pair |= diff.is_some();
        visit(key, diff);
    }
    let mut leftovers: Vec<_> = superpp.into_keys().collect();
    leftovers.sort();
    for key in &leftovers {
        visit(key, None);
    }
    if !any_pair {
        return Err(SummaryError::InsufficientData("no replication has both Separate and Superpp results"));
    }

    Ok(acc
        .into_iter()
        .map(|((i, li, horizon, metric), (sum, n_pairs, n_missing))| MainEffect {
            factor: FACTOR_NAMES[i],
            level: level_order[i][li].to_string(),
            horizon,
            metric,
            mean_difference: if n_pairs > 0 { sum / n_pairs as f64 } else { f64::NAN },
            n_pairs,
            n_missing,
        })
        .collect())
}

pub fn write_main_effects<W: Write>(writer: W, effects: &[MainEffect]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["factor", "level", "horizon", "metric", "mean_difference", "n_pairs", "n_missing"])?;
    for e in effects {
        let mean = if e.n_pairs > 0 { format!("{}", e.mean_difference) } else { crate::io::NA.to_string() };
        w.write_record([
            e.factor.to_string(),
            e.level.clone(),
            e.horizon.label().to_string(),
            e.metric.name().to_string(),
            mean,
            e.n_pairs.to_string(),
            e.n_missing.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per `(factor levels, method, t, u)`: mean of the defined values of
/// `metric` over replications and their count.
pub fn cell_means(rows: &[LongRow], metric: Metric) -> BTreeMap<CellKey, (f64, usize)> {
    let mut acc: BTreeMap<_, (f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        if let Some(v) = r.value {
            let e = acc.entry((r.levels.clone(), r.method, r.t, r.u)).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    for v in acc.values_mut() {
        v.0 /= v.1 as f64;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: &str, method: MethodKind, t: usize, u: usize, rep: usize, value: f64) -> LongRow {
        let levels = ["2TI+4TV", "Strong", "High", "Weibull", "Interaction", "0.1", n, "3"].map(String::from);
        LongRow { levels, method, t, u, replication: rep, metric: Metric::Adist, value: Some(value) }
    }

    fn fixture(gap: f64) -> Vec<LongRow> {
        let mut rows = Vec::new();
        for n in ["200", "1000"] {
            for rep in 0..3 {
                for t in 0..3 {
                    for u in t + 1..=3 {
                        let base = 0.1 + 0.01 * (t * 3 + u + rep) as f64;
                        rows.push(row(n, MethodKind::Separate, t, u, rep, base + gap));
                        rows.push(row(n, MethodKind::Superpp, t, u, rep, base));
                        rows.push(row(n, MethodKind::Poolt, t, u, rep, 0.9));
                    }
                }
            }
        }
        rows
    }

    #[test]
    fn identical_estimators_give_zero() {
        let effects = main_effects(&fixture(0.0)).unwrap();
        assert!(effects.iter().all(|e| e.mean_difference == 0.0));
    }

    #[test]
    fn uniform_gap_shows_at_every_level() {
        let effects = main_effects(&fixture(0.01)).unwrap();
        assert_eq!(effects.iter().filter(|e| e.factor == "n").count(), 4);
        for e in &effects {
            assert!((e.mean_difference - 0.01).abs() < 1e-12, "{e:?}");
        }
    }

    #[test]
    fn horizon_groups_partition_the_cells() {
        let effects = main_effects(&fixture(0.01)).unwrap();
        // T = 3: three cells with u - t = 1 and three with u - t > 1, per replication and n level
        for e in effects.iter().filter(|e| e.factor == "n") {
            assert_eq!(e.n_pairs, 9);
        }
        let total: usize = effects.iter().filter(|e| e.factor == "scenario").map(|e| e.n_pairs).sum();
        assert_eq!(total, 2 * 3 * 6);
    }

    #[test]
    fn single_level_is_insufficient() {
        let rows: Vec<_> = fixture(0.0).into_iter().filter(|r| r.levels[6] == "200").collect();
        assert!(main_effects(&rows).is_err());
        assert!(main_effects(&[]).is_err());
    }

    #[test]
    fn cell_means_average_replications() {
        let means = cell_means(&fixture(0.0), Metric::Adist);
        let key = (fixture(0.0)[0].levels.clone(), MethodKind::Poolt, 0, 1);
        assert_eq!(means[&key], (0.9, 3));
    }
}
