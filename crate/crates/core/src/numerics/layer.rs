use rand::Rng;

use super::{NumericsError, Tensor};

/// Single fully-connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    weight: Tensor,
    bias: Tensor,
}

impl AffineLayer {
    pub fn new(weight: Tensor, bias: Vec<f64>) -> Result<Self, NumericsError> {
        if weight.shape().len() != 2 || weight.rows() != bias.len() {
            return Err(NumericsError::ShapeMismatch {
                context: "affine layer",
                expected: vec![bias.len()],
                found: weight.shape().to_vec(),
            });
        }
        Ok(Self {
            weight,
            bias: Tensor::row(bias),
        })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![output, input]),
            bias: Tensor::zeros(vec![1, output]),
        }
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let values = (0..input * output)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            weight: Tensor::new(vec![output, input], values).expect("shape"),
            bias: Tensor::zeros(vec![1, output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn into_parts(self) -> (Tensor, Tensor) {
        (self.weight, self.bias)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NumericsError> {
        affine_forward(x, self)
    }
}

pub fn affine_forward(x: &[f64], layer: &AffineLayer) -> Result<Vec<f64>, NumericsError> {
    if x.len() != layer.input_dim() {
        return Err(NumericsError::DimensionMismatch {
            context: "affine_forward",
            expected: layer.input_dim(),
            found: x.len(),
        });
    }
    Ok((0..layer.output_dim())
        .map(|o| dot(layer.weight.row_slice(o), x) + layer.bias.values()[o])
        .collect())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer() {
        let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let l = AffineLayer::new(w, vec![0.0, 0.0]).unwrap();
        assert_eq!(affine_forward(&[1.0, 2.0], &l).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn hand_evaluated_affine() {
        let l = AffineLayer::new(Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap(), vec![0.5]).unwrap();
        assert_eq!(l.forward(&[1.0, 1.0]).unwrap(), vec![2.5]);
    }

    #[test]
    fn mismatch_names_both_extents() {
        let l = AffineLayer::zeros(2, 2);
        let err = affine_forward(&[1.0, 2.0, 3.0], &l).unwrap_err();
        assert_eq!(
            err,
            NumericsError::DimensionMismatch {
                context: "affine_forward",
                expected: 2,
                found: 3
            }
        );
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('3'));
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = AffineLayer::glorot(10, 14, &mut rng);
        let limit = (6.0f64 / 24.0).sqrt();
        assert!(l.weight().values().iter().all(|w| w.abs() < limit));
        assert!(l.bias().values().iter().all(|&b| b == 0.0));
        assert!(AffineLayer::new(Tensor::zeros(vec![3, 2]), vec![0.0; 2]).is_err());
    }
}
