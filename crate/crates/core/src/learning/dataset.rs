use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::LearningError;

/// One recorded (shifted state, input, cost-to-go) triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    pub s_shift: f64,
    pub v: f64,
    pub u: f64,
    #[serde(rename = "J")]
    pub cost: f64,
    pub iteration: usize,
}

impl DataRow {
    pub fn x(&self) -> Vector2<f64> {
        Vector2::new(self.s_shift, self.v)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<DataRow>,
    /// Iteration index of the newest rows.
    pub iteration: usize,
}

const MERGE_TOL: f64 = 1e-6;

type Cell = (i64, i64, i64);

fn cell(r: &DataRow) -> Cell {
    let q = |x: f64| (x / MERGE_TOL).floor() as i64;
    (q(r.s_shift), q(r.v), q(r.u))
}

fn close(a: &DataRow, b: &DataRow) -> bool {
    (a.s_shift - b.s_shift).abs() <= MERGE_TOL && (a.v - b.v).abs() <= MERGE_TOL && (a.u - b.u).abs() <= MERGE_TOL
}

impl Dataset {
    pub fn new(rows: Vec<DataRow>, iteration: usize) -> Self {
        Self { rows, iteration }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends rows, merging any row within 1e-6 of an existing one in all of
    /// (s_shift, v, u) and keeping the smaller cost. Returns the number merged.
    pub fn extend_dedup(&mut self, new_rows: impl IntoIterator<Item = DataRow>) -> usize {
        let mut index: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            index.entry(cell(r)).or_default().push(i);
        }
        let mut merged = 0;
        for r in new_rows {
            let c = cell(&r);
            let mut hit = None;
            'search: for ds in -1..=1 {
                for dv in -1..=1 {
                    for du in -1..=1 {
                        if let Some(list) = index.get(&(c.0 + ds, c.1 + dv, c.2 + du)) {
                            if let Some(&i) = list.iter().find(|&&i| close(&self.rows[i], &r)) {
                                hit = Some(i);
                                break 'search;
                            }
                        }
                    }
                }
            }
            match hit {
                Some(i) => {
                    merged += 1;
                    if r.cost < self.rows[i].cost {
                        self.rows[i].cost = r.cost;
                    }
                }
                None => {
                    index.entry(c).or_default().push(self.rows.len());
                    self.rows.push(r);
                }
            }
        }
        merged
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), LearningError> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, LearningError> {
        let mut rd = csv::Reader::from_reader(r);
        let rows: Vec<DataRow> = rd.deserialize().collect::<Result<_, _>>()?;
        let iteration = rows.iter().map(|r| r.iteration).max().unwrap_or(0);
        Ok(Self { rows, iteration })
    }
}
