//! Survival data and the sufficient statistics of the discrete-hazard
//! likelihood: deaths `r[x,t]` and persons at risk `m[x,t]`.

use log::warn;
use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid};

/// One individual observed at period `time`, dying (`exact`) or censored at `age`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SurvivalRecord {
    pub age: usize,
    pub time: usize,
    pub exact: bool,
}

impl SurvivalRecord {
    pub fn new(age: usize, time: usize, exact: bool) -> Self {
        SurvivalRecord { age, time, exact }
    }
}

/// Deaths and at-risk counts over the extended grid. Forecast columns are
/// always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    grid: Grid,
    deaths: Array2<u64>,
    at_risk: Array2<u64>,
}

impl SufficientStats {
    pub fn new(grid: Grid, deaths: Array2<u64>, at_risk: Array2<u64>) -> Result<Self> {
        for (name, m) in [("deaths", &deaths), ("at_risk", &at_risk)] {
            if m.dim() != grid.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {:?}, grid is {:?}",
                    m.dim(),
                    grid.shape()
                )));
            }
        }
        for cell in grid.cells() {
            let (r, m) = (deaths[cell.ix()], at_risk[cell.ix()]);
            if r > m {
                return Err(Error::DataIntegrity(format!(
                    "cell {cell}: {r} deaths exceed {m} at risk"
                )));
            }
            if grid.is_forecast(cell) && m > 0 {
                return Err(Error::DataIntegrity(format!(
                    "forecast cell {cell} carries data"
                )));
            }
        }
        Ok(SufficientStats {
            grid,
            deaths,
            at_risk,
        })
    }

    /// All-zero statistics, i.e. no data at all.
    pub fn empty(grid: Grid) -> Self {
        SufficientStats {
            grid,
            deaths: Array2::zeros(grid.shape()),
            at_risk: Array2::zeros(grid.shape()),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn deaths(&self) -> &Array2<u64> {
        &self.deaths
    }

    pub fn at_risk(&self) -> &Array2<u64> {
        &self.at_risk
    }

    pub fn deaths_at(&self, cell: Cell) -> u64 {
        self.deaths[cell.ix()]
    }

    pub fn at_risk_at(&self, cell: Cell) -> u64 {
        self.at_risk[cell.ix()]
    }

    /// The same observed data on a grid with a different forecast horizon.
    pub fn with_forecast(&self, n_forecast: usize) -> Self {
        let grid = self.grid.with_forecast(n_forecast);
        let mut deaths = Array2::zeros(grid.shape());
        let mut at_risk = Array2::zeros(grid.shape());
        let keep = self.grid.n_times();
        deaths
            .slice_mut(ndarray::s![.., ..keep])
            .assign(&self.deaths.slice(ndarray::s![.., ..keep]));
        at_risk
            .slice_mut(ndarray::s![.., ..keep])
            .assign(&self.at_risk.slice(ndarray::s![.., ..keep]));
        SufficientStats {
            grid,
            deaths,
            at_risk,
        }
    }
}

/// Count deaths and risk sets from individual records.
///
/// A record observed at age `x` is at risk at every age `<= x`; it adds a
/// death at `x` only if exact.
pub fn aggregate(records: &[SurvivalRecord], grid: &Grid) -> Result<SufficientStats> {
    let mut deaths = Array2::<u64>::zeros(grid.shape());
    let mut exits = Array2::<u64>::zeros(grid.shape());
    for (index, rec) in records.iter().enumerate() {
        if !(1..=grid.n_ages()).contains(&rec.age) || !(1..=grid.n_times()).contains(&rec.time) {
            return Err(Error::InvalidRecord {
                index,
                reason: format!(
                    "(age {}, time {}) outside ages 1..={} and times 1..={}",
                    rec.age,
                    rec.time,
                    grid.n_ages(),
                    grid.n_times()
                ),
            });
        }
        let ix = Cell::new(rec.age, rec.time).ix();
        exits[ix] += 1;
        if rec.exact {
            deaths[ix] += 1;
        }
    }
    let at_risk = reverse_cumsum_ages(&exits);
    SufficientStats::new(*grid, deaths, at_risk)
}

fn reverse_cumsum_ages<T>(m: &Array2<T>) -> Array2<T>
where
    T: Copy + Default + std::ops::Add<Output = T>,
{
    let mut out = m.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mut acc = T::default();
        for v in col.iter_mut().rev() {
            acc = acc + *v;
            *v = acc;
        }
    }
    out
}

/// Aggregated deaths and population by age group (rows) and period (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct LifeTable {
    deaths: Array2<f64>,
    population: Array2<f64>,
    scale: f64,
}

impl LifeTable {
    pub fn new(deaths: Array2<f64>, population: Array2<f64>, scale: f64) -> Result<Self> {
        if deaths.dim() != population.dim() {
            return Err(Error::DimensionMismatch(format!(
                "deaths are {:?} but population is {:?}",
                deaths.dim(),
                population.dim()
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidConfig(format!("scale must be positive, got {scale}")));
        }
        if let Some(v) = deaths
            .iter()
            .chain(population.iter())
            .find(|v| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::DataIntegrity(format!(
                "life-table counts must be finite and non-negative, found {v}"
            )));
        }
        Ok(LifeTable {
            deaths,
            population,
            scale,
        })
    }

    pub fn deaths(&self) -> &Array2<f64> {
        &self.deaths
    }

    pub fn population(&self) -> &Array2<f64> {
        &self.population
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Sufficient statistics from a life table.
///
/// At-risk counts are the population summed from each age group upward.
/// Both deaths and at-risk counts are divided by the scale and rounded to the
/// nearest integer; the rounding is the only perturbation of `r/m`.
pub fn from_life_table(table: &LifeTable, grid: &Grid) -> Result<SufficientStats> {
    let observed = (grid.n_ages(), grid.n_times());
    if table.deaths.dim() != observed {
        return Err(Error::DimensionMismatch(format!(
            "life table is {:?} but the grid observes {:?}",
            table.deaths.dim(),
            observed
        )));
    }
    let k = table.scale;
    let cum = reverse_cumsum_ages(&table.population);
    let mut deaths = Array2::<u64>::zeros(grid.shape());
    let mut at_risk = Array2::<u64>::zeros(grid.shape());
    for ((i, j), &d) in table.deaths.indexed_iter() {
        let scaled_d = d / k;
        let scaled_m = cum[[i, j]] / k;
        // each rounding moves a value by at most 1/2
        if scaled_d > scaled_m + 1.0 {
            return Err(Error::DataIntegrity(format!(
                "cell ({}, {}): {} deaths exceed {} at risk",
                i + 1,
                j + 1,
                d,
                cum[[i, j]]
            )));
        }
        let mut r = scaled_d.round() as u64;
        let m = scaled_m.round() as u64;
        if r > m {
            warn!(
                "cell ({}, {}): rounded deaths {r} exceed rounded at-risk {m}; clamping",
                i + 1,
                j + 1
            );
            r = m;
        }
        deaths[[i, j]] = r;
        at_risk[[i, j]] = m;
    }
    SufficientStats::new(*grid, deaths, at_risk)
}

/// Frequentist hazard `r/m`; `None` where nobody is at risk.
pub fn np_hazard(stats: &SufficientStats) -> Array2<Option<f64>> {
    let mut out = Array2::from_elem(stats.grid.shape(), None);
    ndarray::Zip::from(&mut out)
        .and(&stats.deaths)
        .and(&stats.at_risk)
        .for_each(|h, &r, &m| {
            if m > 0 {
                *h = Some(r as f64 / m as f64);
            }
        });
    out
}

/// Density `f(x) = h(x) * prod_{z < x} (1 - h(z))` for ages `1..=h.len()`
/// from a discrete hazard sequence.
pub fn density_from_hazards(hazards: &[f64]) -> Vec<f64> {
    let mut surv = 1.0;
    hazards
        .iter()
        .map(|&h| {
            let f = h * surv;
            surv *= 1.0 - h;
            f
        })
        .collect()
}

/// Survival `S(x) = prod_{z <= x} (1 - h(z))` for ages `1..=h.len()`.
pub fn survival_from_hazards(hazards: &[f64]) -> Vec<f64> {
    let mut surv = 1.0;
    hazards
        .iter()
        .map(|&h| {
            surv *= 1.0 - h;
            surv
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn aggregate_toy_example() {
        let g = Grid::new(3, 1, 0).unwrap();
        let recs = [
            SurvivalRecord::new(2, 1, true),
            SurvivalRecord::new(3, 1, false),
            SurvivalRecord::new(2, 1, true),
        ];
        let s = aggregate(&recs, &g).unwrap();
        assert_eq!(s.deaths_at(Cell::new(2, 1)), 2);
        assert_eq!(s.deaths_at(Cell::new(3, 1)), 0);
        assert_eq!(s.at_risk().column(0).to_vec(), vec![3, 3, 1]);
    }

    #[test]
    fn aggregate_empty_and_forecast_columns() {
        let g = Grid::new(4, 2, 3).unwrap();
        let s = aggregate(&[], &g).unwrap();
        assert!(s.deaths().iter().all(|&v| v == 0));
        assert!(s.at_risk().iter().all(|&v| v == 0));
        assert_eq!(s.at_risk().dim(), (4, 5));
    }

    #[test]
    fn aggregate_rejects_out_of_bounds() {
        let g = Grid::new(4, 2, 2).unwrap();
        let recs = [
            SurvivalRecord::new(1, 1, true),
            SurvivalRecord::new(1, 3, true), // forecast column
        ];
        match aggregate(&recs, &g) {
            Err(Error::InvalidRecord { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected rejection, got {other:?}"),
        }
        assert!(aggregate(&[SurvivalRecord::new(5, 1, false)], &g).is_err());
        assert!(aggregate(&[SurvivalRecord::new(0, 1, false)], &g).is_err());
    }

    #[test]
    fn life_table_recovery() {
        let g = Grid::new(3, 1, 0).unwrap();
        let t = LifeTable::new(array![[0.0], [0.0], [0.0]], array![[10.0], [5.0], [2.0]], 1.0).unwrap();
        let s = from_life_table(&t, &g).unwrap();
        assert_eq!(s.at_risk().column(0).to_vec(), vec![17, 7, 2]);

        let g = Grid::new(2, 1, 0).unwrap();
        let t = LifeTable::new(array![[20.0], [30.0]], array![[100.0], [50.0]], 10.0).unwrap();
        let s = from_life_table(&t, &g).unwrap();
        assert_eq!(s.deaths().column(0).to_vec(), vec![2, 3]);
        assert_eq!(s.at_risk().column(0).to_vec(), vec![15, 5]);
    }

    #[test]
    fn life_table_toy_hazards_exact() {
        // 3 ages x 2 periods, k = 1
        let g = Grid::new(3, 2, 0).unwrap();
        let deaths = array![[1.0, 2.0], [3.0, 1.0], [4.0, 5.0]];
        let pop = array![[10.0, 20.0], [6.0, 4.0], [4.0, 8.0]];
        let s = from_life_table(&LifeTable::new(deaths, pop, 1.0).unwrap(), &g).unwrap();
        let h = np_hazard(&s);
        let expected = [[1.0 / 20.0, 2.0 / 32.0], [3.0 / 10.0, 1.0 / 12.0], [1.0, 5.0 / 8.0]];
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(h[[i, j]], Some(expected[i][j]));
            }
        }
    }

    #[test]
    fn life_table_integrity_errors() {
        let g = Grid::new(2, 1, 0).unwrap();
        let bad = LifeTable::new(array![[0.0], [90.0]], array![[100.0], [50.0]], 1.0).unwrap();
        assert!(matches!(from_life_table(&bad, &g), Err(Error::DataIntegrity(_))));
        // within rounding slack: clamped rather than rejected
        let near = LifeTable::new(array![[0.0], [5.4]], array![[0.0], [4.6]], 1.0).unwrap();
        let s = from_life_table(&near, &g).unwrap();
        assert_eq!(s.deaths_at(Cell::new(2, 1)), 5);
        assert_eq!(s.at_risk_at(Cell::new(2, 1)), 5);

        let g3 = Grid::new(3, 1, 0).unwrap();
        assert!(matches!(from_life_table(&bad, &g3), Err(Error::DimensionMismatch(_))));
        assert!(LifeTable::new(array![[1.0]], array![[1.0], [2.0]], 1.0).is_err());
        assert!(LifeTable::new(array![[1.0]], array![[1.0]], 0.0).is_err());
        assert!(LifeTable::new(array![[-1.0]], array![[1.0]], 1.0).is_err());
    }

    #[test]
    fn life_table_scaling_only_perturbs_by_rounding() {
        let g = Grid::new(4, 3, 0).unwrap();
        let deaths = array![[120.0, 95.0, 80.0], [230.0, 210.0, 190.0], [400.0, 380.0, 350.0], [610.0, 600.0, 590.0]];
        let pop = array![[9000.0, 9100.0, 9200.0], [7000.0, 7200.0, 7300.0], [4000.0, 4100.0, 4300.0], [1500.0, 1600.0, 1700.0]];
        let exact = np_hazard(&from_life_table(&LifeTable::new(deaths.clone(), pop.clone(), 1.0).unwrap(), &g).unwrap());
        for k in [10.0, 20.0] {
            let s = from_life_table(&LifeTable::new(deaths.clone(), pop.clone(), k).unwrap(), &g).unwrap();
            let h = np_hazard(&s);
            for ((i, j), v) in h.indexed_iter() {
                let (r, m) = (s.deaths()[[i, j]] as f64, s.at_risk()[[i, j]] as f64);
                // |r/m - R/M| with |r - R/k| <= 1/2 and |m - M/k| <= 1/2
                let bound = 0.5 / m + 0.5 * (r + 0.5) / (m * (m - 0.5));
                assert!((v.unwrap() - exact[[i, j]].unwrap()).abs() <= bound);
            }
        }
    }

    #[test]
    fn np_hazard_flags_empty_risk_sets() {
        let g = Grid::new(2, 1, 1).unwrap();
        let s = SufficientStats::new(g, array![[2, 0], [0, 0]], array![[4, 0], [0, 0]]).unwrap();
        let h = np_hazard(&s);
        assert_eq!(h[[0, 0]], Some(0.5));
        assert_eq!(h[[1, 0]], None);
        assert_eq!(h[[0, 1]], None);
    }

    #[test]
    fn density_and_survival_from_hazards() {
        let h = [0.5, 0.5, 1.0];
        assert_eq!(density_from_hazards(&h), vec![0.5, 0.25, 0.25]);
        assert_eq!(survival_from_hazards(&h), vec![0.5, 0.25, 0.0]);
    }

    #[test]
    fn stats_validation() {
        let g = Grid::new(1, 1, 1).unwrap();
        assert!(SufficientStats::new(g, array![[3, 0]], array![[2, 0]]).is_err());
        assert!(SufficientStats::new(g, array![[0, 0]], array![[0, 1]]).is_err());
        assert!(SufficientStats::new(g, array![[0]], array![[0]]).is_err());
    }

    #[test]
    fn with_forecast_pads_zero_columns() {
        let g = Grid::new(2, 2, 0).unwrap();
        let s = SufficientStats::new(g, array![[1, 2], [0, 1]], array![[3, 4], [1, 2]]).unwrap();
        let f = s.with_forecast(2);
        assert_eq!(f.at_risk(), &array![[3, 4, 0, 0], [1, 2, 0, 0]]);
        assert_eq!(f.with_forecast(0), s);
    }

    fn records_strategy() -> impl Strategy<Value = Vec<SurvivalRecord>> {
        prop::collection::vec((1usize..=6, 1usize..=3, any::<bool>()), 0..60)
            .prop_map(|v| v.into_iter().map(|(a, t, e)| SurvivalRecord::new(a, t, e)).collect())
    }

    proptest! {
        #[test]
        fn aggregate_invariants(recs in records_strategy(), seed in any::<u64>()) {
            let g = Grid::new(6, 3, 1).unwrap();
            let s = aggregate(&recs, &g).unwrap();
            for t in 1..=3 {
                let n_t = recs.iter().filter(|r| r.time == t).count() as u64;
                let exact = recs.iter().filter(|r| r.time == t && r.exact).count() as u64;
                prop_assert_eq!(s.at_risk_at(Cell::new(1, t)), n_t);
                prop_assert_eq!(s.deaths().column(t - 1).sum(), exact);
                for x in 1..6 {
                    prop_assert!(s.at_risk_at(Cell::new(x + 1, t)) <= s.at_risk_at(Cell::new(x, t)));
                }
            }
            // permutation invariance
            let mut shuffled = recs.clone();
            let n = shuffled.len();
            if n > 1 {
                let mut state = seed;
                for i in (1..n).rev() {
                    state = crate::dist::derive_seed(state, i as u64);
                    shuffled.swap(i, (state % (i as u64 + 1)) as usize);
                }
            }
            prop_assert_eq!(aggregate(&shuffled, &g).unwrap(), s);
        }
    }
}
