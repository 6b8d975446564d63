use super::{cross_entropy, Model, ModelError};
use crate::data::Dataset;
use crate::rng::Stream;
use crate::types::ParameterVector;

/// Multinomial logistic regression. Parameters are the `classes x dim`
/// weight matrix (row-major) followed by the class biases.
#[derive(Clone, Debug)]
pub struct LinearSoftmax {
    dim: usize,
    classes: usize,
    params: Vec<f64>,
}

/// Weights ~ N(0, init_scale^2), biases zero.
pub fn make_linear_model(feature_dim: usize, num_classes: usize, init_scale: f64, rng: &mut Stream) -> LinearSoftmax {
    let mut params = vec![0.0; num_classes * feature_dim + num_classes];
    for w in &mut params[..num_classes * feature_dim] {
        *w = init_scale * rng.normal();
    }
    LinearSoftmax {
        dim: feature_dim,
        classes: num_classes,
        params,
    }
}

impl LinearSoftmax {
    fn weights(&self) -> &[f64] {
        &self.params[..self.classes * self.dim]
    }

    fn biases(&self) -> &[f64] {
        &self.params[self.classes * self.dim..]
    }
}

impl Model for LinearSoftmax {
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn parameters(&self) -> ParameterVector {
        ParameterVector::from_vec_unchecked(self.params.clone())
    }

    fn set_parameters(&mut self, params: &ParameterVector) -> Result<(), ModelError> {
        if params.dim() != self.params.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.params.len(),
                got: params.dim(),
            });
        }
        self.params.copy_from_slice(params.as_slice());
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let w = self.weights();
        self.biases()
            .iter()
            .enumerate()
            .map(|(c, b)| b + w[c * self.dim..(c + 1) * self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    fn loss_and_gradient(&self, data: &Dataset, indices: &[usize]) -> (f64, ParameterVector) {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let scale = 1.0 / indices.len().max(1) as f64;
        let (gw, gb) = grad.split_at_mut(self.classes * self.dim);
        for &i in indices {
            let x = data.row(i);
            let (l, dlogits) = cross_entropy(&self.forward(x), data.label(i));
            loss += l;
            for (c, d) in dlogits.iter().enumerate() {
                gb[c] += d * scale;
                for (g, xj) in gw[c * self.dim..(c + 1) * self.dim].iter_mut().zip(x) {
                    *g += d * xj * scale;
                }
            }
        }
        (loss * scale, ParameterVector::from_vec_unchecked(grad))
    }

    fn clone_box(&self) -> Box<dyn Model> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs_with_means;
    use crate::model::fd::{numeric_gradient, worst_relative_error};
    use crate::model::{evaluate, sgd_step};
    use crate::rng::seeded_rng;

    #[test]
    fn zero_weights_give_uniform_loss() {
        let m = make_linear_model(5, 4, 0.0, &mut seeded_rng(0, "init"));
        let d = generate_blobs_with_means(&vec![vec![1.0; 5]; 4], 3, 1.0, &mut seeded_rng(0, "d"));
        let idx: Vec<usize> = (0..d.len()).collect();
        let (loss, _) = m.loss_and_gradient(&d, &idx);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded_rng(1, "fd");
        let d = crate::data::generate_blobs(3, 4, 10, 1.0, &mut rng);
        let idx: Vec<usize> = (0..d.len()).collect();
        for point in 0..10 {
            let m = make_linear_model(4, 3, 1.0, &mut seeded_rng(point, "fd/init"));
            let (_, g) = m.loss_and_gradient(&d, &idx);
            let num = numeric_gradient(&m, &d, &idx, 1e-5);
            let err = worst_relative_error(g.as_slice(), &num);
            assert!(err <= 1e-6, "point {point}: {err}");
        }
    }

    #[test]
    fn parameters_round_trip() {
        let mut m = make_linear_model(3, 2, 1.0, &mut seeded_rng(2, "init"));
        let p = m.parameters();
        assert_eq!(p.dim(), 3 * 2 + 2);
        m.set_parameters(&p).unwrap();
        assert_eq!(m.parameters(), p);
        assert!(m.set_parameters(&ParameterVector::zeros(3)).is_err());
    }

    #[test]
    fn separable_blobs_are_learned() {
        // Means (+-3, 0) with spread 0.3: the hyperplane x0 = 0 separates the
        // classes with a margin of 10 sd, so every sample is separable.
        let means = vec![vec![-3.0, 0.0], vec![3.0, 0.0]];
        let d = generate_blobs_with_means(&means, 100, 0.3, &mut seeded_rng(3, "sep"));
        assert!((0..d.len()).all(|i| (d.row(i)[0] > 0.0) == (d.label(i) == 1)));
        let mut m = make_linear_model(2, 2, 0.01, &mut seeded_rng(3, "init"));
        let idx: Vec<usize> = (0..d.len()).collect();
        for _ in 0..50 {
            sgd_step(&mut m, &d, &idx, 0.1);
        }
        let (acc, _) = evaluate(&m, &d);
        assert!(acc >= 0.99, "{acc}");
    }
}
