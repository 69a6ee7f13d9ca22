use crate::error::{check_len, Result};

/// Row-major `channels × length` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    channels: usize,
    length: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn new(channels: usize, length: usize, data: Vec<f64>) -> Result<Self> {
        check_len("tensor data", channels * length, data.len())?;
        Ok(Self {
            channels,
            length,
            data,
        })
    }

    pub fn zeros(channels: usize, length: usize) -> Self {
        Self {
            channels,
            length,
            data: vec![0.0; channels * length],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.length..(c + 1) * self.length]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.length..(c + 1) * self.length]
    }

    pub fn add_assign(&mut self, other: &Tensor2) {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }

    /// Splits columns into `parts` equal blocks: an `N × 3L` state stack
    /// becomes the three `N × L` field tensors.
    pub fn split_columns(&self, parts: usize) -> Vec<Tensor2> {
        assert_eq!(self.length % parts, 0);
        let width = self.length / parts;
        (0..parts)
            .map(|b| {
                let mut data = Vec::with_capacity(self.channels * width);
                for c in 0..self.channels {
                    data.extend_from_slice(&self.row(c)[b * width..(b + 1) * width]);
                }
                Tensor2 {
                    channels: self.channels,
                    length: width,
                    data,
                }
            })
            .collect()
    }

    /// Inverse of [`Tensor2::split_columns`].
    pub fn concat_columns(parts: &[Tensor2]) -> Tensor2 {
        let channels = parts[0].channels;
        let length: usize = parts.iter().map(|p| p.length).sum();
        let mut data = Vec::with_capacity(channels * length);
        for c in 0..channels {
            for p in parts {
                assert_eq!(p.channels, channels);
                data.extend_from_slice(p.row(c));
            }
        }
        Tensor2 {
            channels,
            length,
            data,
        }
    }
}
