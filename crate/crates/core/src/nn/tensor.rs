use crate::error::{Error, Result};

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Copy> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Stacks equally sized samples along a new leading batch axis.
    pub fn stack(sample_shape: &[usize], samples: &[Vec<T>]) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        let mut data = Vec::with_capacity(per * samples.len());
        for s in samples {
            if s.len() != per {
                return Err(Error::Shape(format!(
                    "sample of length {} does not fit shape {sample_shape:?}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
        }
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(sample_shape);
        Ok(Self { shape, data })
    }

    pub fn batch_size(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Slice of sample `b` along the leading axis.
    pub fn sample(&self, b: usize) -> &[T] {
        let per = self.data.len() / self.batch_size().max(1);
        &self.data[b * per..(b + 1) * per]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        (0..self.batch_size()).map(move |b| self.sample(b))
    }
}
