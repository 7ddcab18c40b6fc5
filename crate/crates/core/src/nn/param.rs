use std::sync::Arc;

use crate::error::{Error, Result};

/// One named, contiguous slice of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSegment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered partition of a flat parameter array into named layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    segments: Arc<[LayerSegment]>,
    total: usize,
}

impl Layout {
    /// Builds a layout from `(name, len)` pairs laid out back to back.
    pub fn from_lengths<S: Into<String>>(layers: impl IntoIterator<Item = (S, usize)>) -> Self {
        let mut offset = 0;
        let segments: Vec<_> = layers
            .into_iter()
            .map(|(name, len)| {
                let seg = LayerSegment {
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

    /// Validates explicit segments: contiguous, non-overlapping, in order.
    pub fn from_segments(segments: Vec<LayerSegment>) -> Result<Self> {
        let mut expected = 0;
        for seg in &segments {
            if seg.offset != expected {
                return Err(Error::config(format!(
                    "layer {:?} starts at {} but previous layer ends at {expected}",
                    seg.name, seg.offset
                )));
            }
            expected += seg.len;
        }
        Ok(Layout {
            segments: segments.into(),
            total: expected,
        })
    }

    pub fn segments(&self) -> &[LayerSegment] {
        &self.segments
    }

    pub fn num_layers(&self) -> usize {
        self.segments.len()
    }

    pub fn total_len(&self) -> usize {
        self.total
    }
}

/// Flat model parameters partitioned into layers.
///
/// The layout is shared behind an `Arc`, so cloning a vector copies the
/// values only.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

const MAGIC: &[u8; 4] = b"FAPV";

impl ParamVector {
    pub fn zeros(layout: &Layout) -> Self {
        ParamVector {
            values: vec![0.0; layout.total_len()],
            layout: layout.clone(),
        }
    }

    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::config(format!(
                "parameter count {} does not match layout length {}",
                values.len(),
                layout.total_len()
            )));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.layout.num_layers()
    }

    pub fn layer(&self, p: usize) -> &[f64] {
        let seg = &self.layout.segments[p];
        &self.values[seg.offset..seg.offset + seg.len]
    }

    pub fn layer_mut(&mut self, p: usize) -> &mut [f64] {
        let seg = &self.layout.segments[p];
        &mut self.values[seg.offset..seg.offset + seg.len]
    }

    pub fn check_same_layout(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::config("parameter layouts differ"));
        }
        Ok(())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ParamVector) -> Result<()> {
        self.check_same_layout(x)?;
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_same_layout(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn sq_distance(&self, other: &ParamVector) -> Result<f64> {
        self.check_same_layout(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.check_same_layout(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Size in bytes of [`ParamVector::to_bytes`] without serializing.
    pub fn serialized_len(&self) -> usize {
        header_len(&self.layout) + 8 * self.values.len()
    }

    /// Layer table followed by little-endian `f64` values.
    ///
    /// ```text
    /// "FAPV" | u32 layer count
    /// per layer: u32 name length | name (utf-8) | u64 offset | u64 length
    /// u64 value count | value count x f64
    /// ```
    /// All integers are little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.layout.num_layers() as u32).to_le_bytes());
        for seg in self.layout.segments() {
            out.extend_from_slice(&(seg.name.len() as u32).to_le_bytes());
            out.extend_from_slice(seg.name.as_bytes());
            out.extend_from_slice(&(seg.offset as u64).to_le_bytes());
            out.extend_from_slice(&(seg.len as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::config("not a parameter vector (bad magic)"));
        }
        let layers = r.u32()? as usize;
        let mut segments = Vec::with_capacity(layers);
        for _ in 0..layers {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::config("layer name is not utf-8"))?
                .to_string();
            let offset = r.u64()? as usize;
            let len = r.u64()? as usize;
            segments.push(LayerSegment { name, offset, len });
        }
        let layout = Layout::from_segments(segments)?;
        let count = r.u64()? as usize;
        if count != layout.total_len() {
            return Err(Error::config("value count disagrees with layer table"));
        }
        let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::config("trailing bytes after parameter vector"));
        }
        ParamVector::new(values, layout)
    }
}

fn header_len(layout: &Layout) -> usize {
    4 + 4
        + layout
            .segments()
            .iter()
            .map(|s| 4 + s.name.len() + 16)
            .sum::<usize>()
        + 8
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::config("unexpected end of data"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
