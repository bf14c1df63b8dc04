use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use super::table::RawTable;
use super::ClientDataset;
use crate::error::{Error, Result};
use crate::seed;

/// Regions with fewer rows are skipped.
pub const MIN_CLIENT_SAMPLES: usize = 10;

/// Number of test rows for a split of `n` rows; always leaves at least one
/// row on each side.
pub(crate) fn test_count(n: usize, test_fraction: f64) -> usize {
    ((n as f64 * test_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Seeded uniform split: shuffle `0..n` and take the tail as test.
pub(crate) fn uniform_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let n_test = test_count(n, test_fraction);
    let mut test = idx.split_off(n - n_test);
    idx.sort_unstable();
    test.sort_unstable();
    (idx, test)
}

/// Splits `table` (and its encoded matrix) into one client per region.
///
/// Clients come out sorted by region name. When the table has a timestamp
/// column, each client's rows are ordered chronologically and the most recent
/// `test_fraction` become the test split; otherwise the split is a seeded
/// shuffle. Each client's seed is derived from `(seed, client_id)`.
pub fn partition_by_region(
    table: &RawTable,
    encoded: &Array2<f64>,
    feature_names: &[String],
    test_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test_fraction {test_fraction} not in (0,1)")));
    }
    if encoded.nrows() != table.len() {
        return Err(Error::LengthMismatch { expected: table.len(), actual: encoded.nrows() });
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for i in 0..table.len() {
        groups.entry(table.region(i)).or_default().push(i);
    }
    let target = table.target();
    let chronological = table.has_timestamp();

    let mut clients = Vec::with_capacity(groups.len());
    for (region, mut rows) in groups {
        if rows.len() < MIN_CLIENT_SAMPLES {
            log::warn!("region `{region}` has {} rows, excluded", rows.len());
            continue;
        }
        if chronological {
            // stable: equal timestamps keep file order
            rows.sort_by_key(|&i| table.timestamp(i));
        }
        let client_seed = seed::derive(seed, "client", region);
        let n = rows.len();
        let (train, test) = if chronological {
            let n_test = test_count(n, test_fraction);
            ((0..n - n_test).collect(), (n - n_test..n).collect())
        } else {
            uniform_split(n, test_fraction, client_seed)
        };
        clients.push(ClientDataset::new(
            region,
            encoded.select(Axis(0), &rows),
            rows.iter().map(|&i| target[i]).collect(),
            feature_names.to_vec(),
            train,
            test,
            client_seed,
        )?);
    }
    if clients.is_empty() {
        return Err(Error::EmptyData("no region has enough rows".into()));
    }
    Ok(clients)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::table::{Cell, Column, ColumnKind};

    fn table(regions: &[(&str, usize)], with_time: bool) -> (RawTable, Array2<f64>) {
        let mut columns = vec![
            Column { name: "region".into(), kind: ColumnKind::Categorical },
            Column { name: "sales".into(), kind: ColumnKind::Numeric },
        ];
        if with_time {
            columns.push(Column { name: "ts".into(), kind: ColumnKind::Timestamp });
        }
        let mut rows = Vec::new();
        for (r, n) in regions {
            for i in 0..*n {
                let mut row = vec![Cell::Cat(r.to_string()), Cell::Num(i as f64)];
                if with_time {
                    // rows arrive in reverse time order
                    let day = chrono::NaiveDate::from_ymd_opt(2017, 1, 1).unwrap()
                        + chrono::Days::new((*n - i) as u64);
                    row.push(Cell::Time(day.and_hms_opt(0, 0, 0).unwrap()));
                }
                rows.push(row);
            }
        }
        let t = RawTable::new(columns, rows, "region", "sales").unwrap();
        let x = Array2::from_shape_fn((t.len(), 1), |(i, _)| i as f64);
        (t, x)
    }

    #[test]
    fn two_regions_eighty_twenty() {
        let (t, x) = table(&[("A", 100), ("B", 100)], false);
        let clients = partition_by_region(&t, &x, &["f".into()], 0.2, 42).unwrap();
        assert_eq!(clients.len(), 2);
        for c in &clients {
            assert_eq!(c.train.len(), 80);
            assert_eq!(c.test.len(), 20);
        }
        let again = partition_by_region(&t, &x, &["f".into()], 0.2, 42).unwrap();
        assert_eq!(clients, again);
    }

    #[test]
    fn small_regions_are_excluded_and_counts_add_up() {
        let (t, x) = table(&[("A", 30), ("B", 9), ("C", 12)], false);
        let clients = partition_by_region(&t, &x, &["f".into()], 0.25, 1).unwrap();
        let ids: Vec<_> = clients.iter().map(|c| c.client_id.as_str()).collect();
        assert_eq!(ids, vec!["A", "C"]);
        let total: usize = clients.iter().map(|c| c.n_samples()).sum();
        assert_eq!(total, 42);
    }

    #[test]
    fn chronological_split_puts_latest_rows_in_test() {
        let (t, x) = table(&[("A", 20)], true);
        let clients = partition_by_region(&t, &x, &["f".into()], 0.2, 1).unwrap();
        let c = &clients[0];
        // row i has day n - i, so the latest days are the smallest sales values
        let test_sales = c.test_y();
        assert_eq!(test_sales, vec![3.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_bad_fraction() {
        let (t, x) = table(&[("A", 20)], false);
        assert!(partition_by_region(&t, &x, &["f".into()], 1.0, 1).is_err());
        assert!(partition_by_region(&t, &x, &["f".into()], 0.0, 1).is_err());
    }
}
