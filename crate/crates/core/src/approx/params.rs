use std::io::{BufRead, Read, Write};
use std::ops::{Deref, DerefMut};

use crate::{Error, Result};

/// Flat parameter vector θ.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params(Vec<f64>);

impl From<Vec<f64>> for Params {
    fn from(v: Vec<f64>) -> Self {
        Params(v)
    }
}

impl Deref for Params {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Params {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Params {
    pub fn zeros(n: usize) -> Self {
        Params(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Text snapshot: the dimension on the first line, then one value per line.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.0.len())?;
        for x in &self.0 {
            writeln!(out, "{x:e}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or(Error::Empty("snapshot header"))??;
        let dim: usize = header
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("bad snapshot header {header:?}")))?;
        let mut values = Vec::with_capacity(dim);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            values.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config(format!("bad snapshot value {line:?}")))?,
            );
        }
        if values.len() != dim {
            return Err(Error::ShapeMismatch { expected: dim, actual: values.len() });
        }
        Ok(Params(values))
    }

    /// Binary snapshot: little-endian `u64` dimension then `f64` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.0.len());
        out.extend_from_slice(&(self.0.len() as u64).to_le_bytes());
        for x in &self.0 {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut word = [0u8; 8];
        bytes.read_exact(&mut word)?;
        let dim = u64::from_le_bytes(word) as usize;
        if bytes.len() != dim * 8 {
            return Err(Error::ShapeMismatch { expected: dim, actual: bytes.len() / 8 });
        }
        Ok(Params(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn snapshots_roundtrip(values in proptest::collection::vec(proptest::num::f64::ANY, 0..40)) {
            let p = Params::from(values);
            let mut text = Vec::new();
            p.write_text(&mut text).unwrap();
            let back = Params::read_text(text.as_slice()).unwrap();
            let bin = Params::from_bytes(&p.to_bytes()).unwrap();
            for (a, (b, c)) in p.iter().zip(back.iter().zip(bin.iter())) {
                prop_assert_eq!(a.to_bits(), c.to_bits());
                prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
            }
        }
    }

    #[test]
    fn truncated_snapshot_is_rejected() {
        assert!(Params::read_text("3\n1.0\n2.0\n".as_bytes()).is_err());
        assert!(Params::from_bytes(&[2, 0, 0, 0, 0, 0, 0, 0, 1, 2]).is_err());
    }
}
