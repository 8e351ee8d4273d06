use crate::error::{Error, Result};
use crate::gaussian2d::Cov2;

/// Square discrete kernel of odd side `support`, stored row-major with the
/// centre tap at `(support / 2, support / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    support: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn new(support: usize, data: Vec<f64>) -> Result<Self> {
        if support % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel support {support} must be odd")));
        }
        if data.len() != support * support {
            return Err(Error::DimensionMismatch(format!(
                "kernel of support {support} needs {} taps, got {}",
                support * support,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("kernel contains non-finite taps".into()));
        }
        Ok(Self { support, data })
    }

    pub fn delta(support: usize) -> Result<Self> {
        let mut data = vec![0.0; support * support];
        if let Some(c) = data.get_mut((support / 2) * support + support / 2) {
            *c = 1.0;
        }
        Self::new(support, data)
    }

    pub fn support(&self) -> usize {
        self.support
    }

    pub fn radius(&self) -> usize {
        self.support / 2
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Tap at offset `(dx, dy)` from the centre.
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius() as isize;
        self.data[((dy + r) * self.support as isize + dx + r) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Kernel) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn l2_distance(&self, other: &Kernel) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Mean offset and central second moment, treating the taps as weights.
    pub fn moments(&self) -> Result<([f64; 2], Cov2)> {
        let s = self.sum();
        if !(s.abs() > 0.0) {
            return Err(Error::Numerical("kernel has zero mass".into()));
        }
        let r = self.radius() as isize;
        let mut m = [0.0; 2];
        let mut second = [0.0; 3];
        for dy in -r..=r {
            for dx in -r..=r {
                let v = self.at(dx, dy) / s;
                let (x, y) = (dx as f64, dy as f64);
                m[0] += v * x;
                m[1] += v * y;
                second[0] += v * x * x;
                second[1] += v * x * y;
                second[2] += v * y * y;
            }
        }
        Ok((
            m,
            Cov2::new(second[0] - m[0] * m[0], second[1] - m[0] * m[1], second[2] - m[1] * m[1]),
        ))
    }
}
