use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{CellIndex, Observation, MIN_CELL_SIZE};
use crate::numeric::CompensatedSum;

use super::partition::Partition;

/// Joint law of the report `S` and the outcome interval in one `(z, v)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTable {
    /// `joint[s][j] = Pr(S=s, Y∈Δ_j | z, v)`.
    pub joint: Vec<Vec<f64>>,
    /// `y_joint[s][j] = E[Y·1{Y∈Δ_j}·1{S=s} | z, v]`.
    pub y_joint: Vec<Vec<f64>>,
    /// Observations behind the table; infinite for population tables (`null` in JSON).
    #[serde(with = "population_count")]
    pub count: f64,
}

mod population_count {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(count: &f64, s: S) -> Result<S::Ok, S::Error> {
        if count.is_finite() {
            s.serialize_some(count)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl CellTable {
    pub fn pr_s(&self) -> Vec<f64> {
        self.joint.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn pr_delta(&self) -> Vec<f64> {
        let m = self.joint.first().map_or(0, Vec::len);
        (0..m).map(|j| self.joint.iter().map(|r| r[j]).sum()).collect()
    }

    /// `E[Y·1{S=s} | z, v]`.
    pub fn y_by_s(&self) -> Vec<f64> {
        self.y_joint.iter().map(|r| r.iter().sum()).collect()
    }

    /// `E[Y | z, v]`.
    pub fn ey(&self) -> f64 {
        self.y_by_s().iter().sum()
    }
}

/// Report-by-interval tables for the four cells, canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTables {
    /// Number of report values `K = 2 K_u`.
    pub k: usize,
    pub partition: Partition,
    pub cells: [CellTable; 4],
}

impl JointTables {
    pub fn cell(&self, c: CellIndex) -> &CellTable {
        &self.cells[c.position()]
    }

    /// Empirical tables with `S = 2U + T`.
    pub fn from_data(data: &[Observation], k_u: usize, partition: &Partition) -> Result<Self> {
        let k = 2 * k_u;
        let m = partition.len();
        let mut counts = [0usize; 4];
        let mut joint = vec![vec![vec![0usize; m]; k]; 4];
        let mut y_joint = vec![vec![vec![CompensatedSum::new(); m]; k]; 4];
        for (i, o) in data.iter().enumerate() {
            o.validate()?;
            let u = o
                .u
                .ok_or_else(|| Error::InvalidInput(format!("row {i}: mixture mode needs a u column")))?
                as usize;
            if u >= k_u {
                return Err(Error::InvalidInput(format!("row {i}: u = {u} outside 0..{k_u}")));
            }
            let (c, s, j) = (o.cell().position(), 2 * u + o.t as usize, partition.locate(o.y));
            counts[c] += 1;
            joint[c][s][j] += 1;
            y_joint[c][s][j].add(o.y);
        }
        for (pos, &n) in counts.iter().enumerate() {
            if n < MIN_CELL_SIZE {
                let c = CellIndex::from_position(pos);
                return Err(Error::EmptyCell { z: c.z, v: c.v, count: n, min: MIN_CELL_SIZE });
            }
        }
        let cells = std::array::from_fn(|pos| {
            let n = counts[pos] as f64;
            CellTable {
                joint: joint[pos].iter().map(|r| r.iter().map(|&c| c as f64 / n).collect()).collect(),
                y_joint: y_joint[pos].iter().map(|r| r.iter().map(|s| s.value() / n).collect()).collect(),
                count: n,
            }
        });
        let tables = JointTables { k, partition: partition.clone(), cells };
        tables.check_mass()?;
        Ok(tables)
    }

    /// Fails with `PartitionMismatch` when an interval has no mass in some cell.
    pub fn check_mass(&self) -> Result<()> {
        for c in CellIndex::ALL {
            if let Some(j) = self.cell(c).pr_delta().iter().position(|&p| !(p > 0.0)) {
                return Err(Error::PartitionMismatch { z: c.z, v: c.v, cell: j });
            }
        }
        Ok(())
    }
}
