//! Layer-segmented flat parameter vectors.
//!
//! Model weights, client update vectors and server momentum all share this
//! representation. Every reduction runs left to right over the flat buffer so
//! results are bit-for-bit reproducible.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, contiguous slice of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered segment table. Shared between vectors of the same layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    segments: Arc<[Segment]>,
    total: usize,
}

impl Layout {
    /// Builds a layout from `(name, length)` pairs laid out back to back.
    pub fn from_lengths<S: Into<String>>(parts: impl IntoIterator<Item = (S, usize)>) -> Self {
        let mut offset = 0;
        let segments: Vec<Segment> = parts
            .into_iter()
            .map(|(name, len)| {
                let seg = Segment {
                    name: name.into(),
                    offset,
                    len,
                };
                offset += len;
                seg
            })
            .collect();
        Layout {
            segments: segments.into(),
            total: offset,
        }
    }

    pub fn single(name: &str, len: usize) -> Self {
        Self::from_lengths([(name, len)])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    fn check_compatible(&self, other: &Layout) -> Result<()> {
        if Arc::ptr_eq(&self.segments, &other.segments) {
            return Ok(());
        }
        let n = self.segments.len().max(other.segments.len());
        for i in 0..n {
            match (self.segments.get(i), other.segments.get(i)) {
                (Some(a), Some(b)) if a == b => {}
                (a, b) => {
                    let show = |s: Option<&Segment>| match s {
                        Some(s) => format!("{}[{}..{}]", s.name, s.offset, s.offset + s.len),
                        None => "<none>".to_string(),
                    };
                    return Err(Error::ShapeMismatch {
                        index: i,
                        expected: show(a),
                        found: show(b),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Flat vector of `f64` parameters partitioned into named layer segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::Dimension(format!(
                "layout covers {} values, got {}",
                layout.total_len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Usage(format!("non-finite parameter at index {i}")));
        }
        Ok(ParamVector { values, layout })
    }

    /// Single-segment vector named `"param"`, mostly for tests and fixtures.
    pub fn from_vec(values: Vec<f64>) -> Self {
        let layout = Layout::single("param", values.len());
        Self::new(layout, values).expect("finite values")
    }

    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.total_len()];
        ParamVector { values, layout }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn segments(&self) -> &[Segment] {
        self.layout.segments()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment_values(&self, index: usize) -> &[f64] {
        let seg = &self.layout.segments()[index];
        &self.values[seg.offset..seg.offset + seg.len]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_compatible(&self, other: &ParamVector) -> Result<()> {
        self.layout.check_compatible(&other.layout)
    }

    fn zip_map(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<ParamVector> {
        self.check_compatible(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(ParamVector {
            values,
            layout: self.layout.clone(),
        })
    }

    /// `alpha * self`.
    pub fn scale(&self, alpha: f64) -> ParamVector {
        ParamVector {
            values: self.values.iter().map(|v| alpha * v).collect(),
            layout: self.layout.clone(),
        }
    }

    /// `self + other`.
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, |a, b| a + b)
    }
}

/// Elementwise `w_new - w_old`: the update vector a client produced.
pub fn delta(w_new: &ParamVector, w_old: &ParamVector) -> Result<ParamVector> {
    w_new.zip_map(w_old, |a, b| a - b)
}

/// `Σ weight_k · v_k`, accumulated strictly in list order.
pub fn weighted_sum<'a, I>(terms: I) -> Result<ParamVector>
where
    I: IntoIterator<Item = (f64, &'a ParamVector)>,
{
    let mut iter = terms.into_iter();
    let (w0, v0) = iter
        .next()
        .ok_or_else(|| Error::Usage("weighted_sum of an empty list".into()))?;
    let mut acc = v0.scale(w0);
    for (w, v) in iter {
        acc.check_compatible(v)?;
        for (a, x) in acc.values.iter_mut().zip(&v.values) {
            *a += w * x;
        }
    }
    Ok(acc)
}

fn norm_of(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v * v).sqrt()
}

/// Euclidean norm over the whole vector.
pub fn l2_norm(v: &ParamVector) -> f64 {
    norm_of(&v.values)
}

/// Euclidean norm of each segment, in segment order.
pub fn per_layer_norms(v: &ParamVector) -> Vec<(String, f64)> {
    v.segments()
        .iter()
        .enumerate()
        .map(|(i, seg)| (seg.name.clone(), norm_of(v.segment_values(i))))
        .collect()
}

/// `alpha * x + y`.
pub fn axpy(alpha: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    x.zip_map(y, |a, b| alpha * a + b)
}
