//! The adaptive blocklength matrix: one row per user, one column per packet
//! index `q = 0..=q_th`. Entries are in symbols and may be fractional while
//! optimizing; `n = T * W` links them to TTIs.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BlocklengthMatrix {
    users: usize,
    cols: usize,
    w_hz: f64,
    data: Vec<f64>,
}

impl BlocklengthMatrix {
    pub fn filled(users: usize, cols: usize, w_hz: f64, value: f64) -> Self {
        Self {
            users,
            cols,
            w_hz,
            data: vec![value; users * cols],
        }
    }

    /// Every entry set to `W * tti`.
    pub fn from_tti(users: usize, cols: usize, w_hz: f64, tti_s: f64) -> Self {
        Self::filled(users, cols, w_hz, w_hz * tti_s)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, w_hz: f64) -> Result<Self> {
        let users = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if users == 0 || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Domain("blocklength rows must be non-empty and equally long".into()));
        }
        Ok(Self {
            users,
            cols,
            w_hz,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn w_hz(&self) -> f64 {
        self.w_hz
    }

    pub fn get(&self, k: usize, q: usize) -> f64 {
        self.data[k * self.cols + q]
    }

    pub fn set(&mut self, k: usize, q: usize, value: f64) {
        self.data[k * self.cols + q] = value;
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn column(&self, q: usize) -> Vec<f64> {
        (0..self.users).map(|k| self.get(k, q)).collect()
    }

    pub fn set_column(&mut self, q: usize, values: &[f64]) {
        assert_eq!(values.len(), self.users, "column length must equal user count");
        for (k, v) in values.iter().enumerate() {
            self.set(k, q, *v);
        }
    }

    /// TTI in seconds, `n / W`.
    pub fn tti(&self, k: usize, q: usize) -> f64 {
        self.get(k, q) / self.w_hz
    }

    pub fn tti_row(&self, k: usize) -> Vec<f64> {
        self.row(k).iter().map(|n| n / self.w_hz).collect()
    }

    /// Nearest positive integer symbol count in every entry.
    pub fn rounded(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = v.round().max(1.0);
        }
        out
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn all_positive(&self) -> bool {
        self.data.iter().all(|v| *v > 0.0 && v.is_finite())
    }

    pub fn all_nonnegative(&self) -> bool {
        self.data.iter().all(|v| *v >= 0.0)
    }
}
