//! Sensor subsets and their observation-row bookkeeping.
//!
//! Sensors are indexed `0..N` internally; every sensor owns a contiguous
//! block of `k` observation rows. User-facing formats (JSON configs, CSV
//! logs) use 1-based sensor ids, matching the usual "sensor 1..N" labelling.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A set of sensor indices, kept sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensorSubset {
    sensors: Vec<usize>,
}

impl SensorSubset {
    /// Builds a subset from 0-based sensor indices, all `< n`.
    pub fn new(mut sensors: Vec<usize>, n: usize) -> Result<Self> {
        sensors.sort_unstable();
        sensors.dedup();
        if let Some(&max) = sensors.last() {
            if max >= n {
                return Err(Error::Validation(format!(
                    "sensor index {max} out of range for {n} sensors"
                )));
            }
        }
        Ok(SensorSubset { sensors })
    }

    /// Builds a subset from the 1-based ids used in configs and logs.
    pub fn from_one_based(ids: &[usize], n: usize) -> Result<Self> {
        let mut sensors = Vec::with_capacity(ids.len());
        for &id in ids {
            if id == 0 {
                return Err(Error::Validation("sensor ids are 1-based; got 0".into()));
            }
            sensors.push(id - 1);
        }
        SensorSubset::new(sensors, n)
    }

    /// All `n` sensors.
    pub fn full(n: usize) -> Self {
        SensorSubset {
            sensors: (0..n).collect(),
        }
    }

    /// No sensors.
    pub fn empty() -> Self {
        SensorSubset { sensors: Vec::new() }
    }

    pub fn sensors(&self) -> &[usize] {
        &self.sensors
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn contains(&self, sensor: usize) -> bool {
        self.sensors.binary_search(&sensor).is_ok()
    }

    /// Sensors in `0..n` not in this subset.
    pub fn complement(&self, n: usize) -> SensorSubset {
        SensorSubset {
            sensors: (0..n).filter(|s| !self.contains(*s)).collect(),
        }
    }

    /// Observation-row indices owned by this subset when each sensor
    /// contributes `k` consecutive rows.
    pub fn rows(&self, k: usize) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.sensors.len() * k);
        for &s in &self.sensors {
            rows.extend(s * k..(s + 1) * k);
        }
        rows
    }

    /// 1-based ids for serialization.
    pub fn to_one_based(&self) -> Vec<usize> {
        self.sensors.iter().map(|s| s + 1).collect()
    }

    /// Compact 1-based label such as `{1,3}` for CSV logs.
    pub fn label(&self) -> String {
        let ids: Vec<String> = self.sensors.iter().map(|s| (s + 1).to_string()).collect();
        format!("{{{}}}", ids.join("|"))
    }
}

/// Binomial coefficient `C(n, k)` (saturating is unnecessary at the sizes
/// this crate enumerates; overflow would panic in debug builds).
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Enumerates all size-`size` subsets of `0..n` in lexicographic order.
///
/// Lexicographic order is what gives deterministic tie-breaking everywhere a
/// maximum over subsets is taken: the earliest-enumerated subset wins ties.
pub fn enumerate_subsets(n: usize, size: usize) -> Vec<SensorSubset> {
    if size > n {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(binomial(n, size));
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        out.push(SensorSubset {
            sensors: idx.clone(),
        });
        // Advance to the next combination.
        let mut i = size;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - size {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(5, 5), 1);
        assert_eq!(binomial(4, 6), 0);
    }

    #[test]
    fn enumeration_is_lexicographic_and_complete() {
        let subs = enumerate_subsets(5, 2);
        assert_eq!(subs.len(), 10);
        assert_eq!(subs[0].sensors(), &[0, 1]);
        assert_eq!(subs[1].sensors(), &[0, 2]);
        assert_eq!(subs[9].sensors(), &[3, 4]);
        for w in subs.windows(2) {
            assert!(w[0] < w[1], "not strictly increasing: {:?}", w);
        }
    }

    #[test]
    fn enumeration_edge_sizes() {
        assert_eq!(enumerate_subsets(3, 0).len(), 1);
        assert!(enumerate_subsets(3, 0)[0].is_empty());
        assert_eq!(enumerate_subsets(3, 3).len(), 1);
        assert_eq!(enumerate_subsets(2, 3).len(), 0);
    }

    #[test]
    fn complement_partitions() {
        let b = SensorSubset::new(vec![1, 3], 5).unwrap();
        let bc = b.complement(5);
        assert_eq!(bc.sensors(), &[0, 2, 4]);
        let mut all: Vec<usize> = b.sensors().to_vec();
        all.extend_from_slice(bc.sensors());
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn rows_expand_sensor_blocks() {
        let b = SensorSubset::new(vec![0, 2], 3).unwrap();
        assert_eq!(b.rows(2), vec![0, 1, 4, 5]);
    }

    #[test]
    fn one_based_round_trip() {
        let b = SensorSubset::from_one_based(&[1, 3], 5).unwrap();
        assert_eq!(b.sensors(), &[0, 2]);
        assert_eq!(b.to_one_based(), vec![1, 3]);
        assert_eq!(b.label(), "{1|3}");
        assert!(SensorSubset::from_one_based(&[0], 5).is_err());
        assert!(SensorSubset::from_one_based(&[6], 5).is_err());
    }
}
