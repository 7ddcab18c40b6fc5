use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest margin kept between a Dirichlet concentration and one.
pub const DIRICHLET_MARGIN: f64 = 1e-3;

/// Tolerance of the simplex invariant.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One weight per client for the whole model.
    Network,
    /// One weight per client and parameter-bearing layer.
    Layer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    Softmax,
    Dirichlet,
}

/// `K x P` real matrix stored column by column (one column per layer group).
#[derive(Debug, Clone, PartialEq)]
pub struct KpMatrix {
    k: usize,
    p: usize,
    data: Vec<f64>,
}

impl KpMatrix {
    pub fn zeros(k: usize, p: usize) -> Self {
        KpMatrix {
            k,
            p,
            data: vec![0.0; k * p],
        }
    }

    pub fn filled(k: usize, p: usize, value: f64) -> Self {
        KpMatrix {
            k,
            p,
            data: vec![value; k * p],
        }
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let k = columns.first().map_or(0, Vec::len);
        if k == 0 || columns.iter().any(|c| c.len() != k) {
            return Err(Error::config(
                "columns must be non-empty and of equal length",
            ));
        }
        Ok(KpMatrix {
            k,
            p: columns.len(),
            data: columns.concat(),
        })
    }

    /// Column-major data (`k` fastest).
    pub fn from_col_major(k: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 || p == 0 || data.len() != k * p {
            return Err(Error::config(format!(
                "expected {k}x{p} entries, got {}",
                data.len()
            )));
        }
        Ok(KpMatrix { k, p, data })
    }

    pub fn clients(&self) -> usize {
        self.k
    }

    pub fn groups(&self) -> usize {
        self.p
    }

    pub fn get(&self, k: usize, p: usize) -> f64 {
        self.data[p * self.k + k]
    }

    pub fn set(&mut self, k: usize, p: usize, v: f64) {
        self.data[p * self.k + k] = v;
    }

    pub fn column(&self, p: usize) -> &[f64] {
        &self.data[p * self.k..(p + 1) * self.k]
    }

    pub fn column_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.data[p * self.k..(p + 1) * self.k]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.k)
    }

    /// Column-major flattening.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &KpMatrix) -> bool {
        self.k == other.k && self.p == other.p
    }

    /// Sum over columns, giving a `K x 1` matrix.
    pub fn sum_columns(&self) -> KpMatrix {
        let mut out = KpMatrix::zeros(self.k, 1);
        for col in self.columns() {
            for (o, v) in out.data.iter_mut().zip(col) {
                *o += v;
            }
        }
        out
    }
}

/// Aggregation coefficients: every column lies in the open simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct AggWeights {
    values: KpMatrix,
    granularity: Granularity,
}

impl AggWeights {
    /// Normalizes each column once by its sum, then checks positivity.
    pub fn new(mut values: KpMatrix, granularity: Granularity) -> Result<Self> {
        if granularity == Granularity::Network && values.groups() != 1 {
            return Err(Error::config(
                "network-wise weights have exactly one column",
            ));
        }
        for col in values.data.chunks_mut(values.k) {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical("non-finite aggregation weight"));
            }
            let sum: f64 = col.iter().sum();
            if col.iter().any(|&v| v <= 0.0) || sum <= 0.0 {
                return Err(Error::domain(format!(
                    "aggregation weights must be strictly positive, got {col:?}"
                )));
            }
            col.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(AggWeights {
            values,
            granularity,
        })
    }

    pub fn uniform(k: usize, p: usize, granularity: Granularity) -> Result<Self> {
        AggWeights::new(KpMatrix::filled(k, p, 1.0 / k as f64), granularity)
    }

    /// Vertex `at` of the simplex in every column: all weight on one client.
    /// This is the only constructor that yields zero entries.
    pub fn vertex(k: usize, p: usize, at: usize, granularity: Granularity) -> Result<Self> {
        if at >= k {
            return Err(Error::config(format!(
                "client {at} out of range for {k} clients"
            )));
        }
        if granularity == Granularity::Network && p != 1 {
            return Err(Error::config(
                "network-wise weights have exactly one column",
            ));
        }
        let mut values = KpMatrix::zeros(k, p);
        for col in 0..p {
            values.set(at, col, 1.0);
        }
        Ok(AggWeights {
            values,
            granularity,
        })
    }

    /// Weights proportional to client sample counts (`n_k / n`) in every column.
    pub fn proportional(sizes: &[usize], p: usize, granularity: Granularity) -> Result<Self> {
        let n: usize = sizes.iter().sum();
        let col: Vec<f64> = sizes.iter().map(|&s| s as f64 / n as f64).collect();
        AggWeights::new(KpMatrix::from_columns(&vec![col; p])?, granularity)
    }

    pub fn values(&self) -> &KpMatrix {
        &self.values
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn clients(&self) -> usize {
        self.values.k
    }

    pub fn groups(&self) -> usize {
        self.values.p
    }

    pub fn column(&self, p: usize) -> &[f64] {
        self.values.column(p)
    }

    /// Largest deviation of a column sum from one.
    pub fn simplex_error(&self) -> f64 {
        self.values
            .columns()
            .map(|c| (c.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Parameters from which [`AggWeights`] are derived.
#[derive(Debug, Clone, PartialEq)]
pub struct Concentration {
    values: KpMatrix,
    parameterization: Parameterization,
}

impl Concentration {
    pub fn new(values: KpMatrix, parameterization: Parameterization) -> Result<Self> {
        if values.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite concentration"));
        }
        if parameterization == Parameterization::Dirichlet
            && values.data.iter().any(|&v| v < 1.0 + DIRICHLET_MARGIN)
        {
            return Err(Error::domain(format!(
                "Dirichlet concentrations must be at least {}",
                1.0 + DIRICHLET_MARGIN
            )));
        }
        Ok(Concentration {
            values,
            parameterization,
        })
    }

    /// Same value everywhere.
    pub fn symmetric(
        k: usize,
        p: usize,
        value: f64,
        parameterization: Parameterization,
    ) -> Result<Self> {
        Concentration::new(KpMatrix::filled(k, p, value), parameterization)
    }

    pub fn values(&self) -> &KpMatrix {
        &self.values
    }

    pub fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    pub fn clients(&self) -> usize {
        self.values.k
    }

    pub fn groups(&self) -> usize {
        self.values.p
    }

    pub fn column(&self, p: usize) -> &[f64] {
        self.values.column(p)
    }

    /// Replaces the values, clamping Dirichlet entries to `1 + DIRICHLET_MARGIN`.
    pub fn with_values(&self, mut values: KpMatrix) -> Result<Self> {
        if !values.same_shape(&self.values) {
            return Err(Error::config("concentration shape changed"));
        }
        if values.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite concentration"));
        }
        if self.parameterization == Parameterization::Dirichlet {
            clamp_dirichlet(values.as_mut_slice());
        }
        Ok(Concentration {
            values,
            parameterization: self.parameterization,
        })
    }

    /// Bytes needed to ship this concentration as raw little-endian `f64`s.
    pub fn payload_bytes(&self) -> usize {
        8 * self.values.data.len()
    }
}

pub fn clamp_dirichlet(values: &mut [f64]) {
    for v in values {
        *v = v.max(1.0 + DIRICHLET_MARGIN);
    }
}
