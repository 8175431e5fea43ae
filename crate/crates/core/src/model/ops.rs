//! Tape-free forward computations, used for inference and as oracles.

use super::{Mlp, Mode, ModelError, ModelParams, SceneFeatures};
use crate::engine::{self, Tensor};
use crate::triad::DiscriminativeTriad;

fn check_len(what: &str, got: usize, want: usize) -> Result<(), ModelError> {
    if got != want {
        return Err(ModelError::Dimension(format!("{what}: expected {want} values, got {got}")));
    }
    Ok(())
}

/// `relu(relu(x) W1 + b1) W2 + b2` for every row of `x`, one score per row.
pub fn attention_scores(x: &Tensor, mlp: &Mlp) -> Result<Vec<f64>, ModelError> {
    check_len("attention input width", x.cols(), mlp.input_dim())?;
    let h = engine::relu(&engine::add(&engine::matmul(&engine::relu(x), &mlp.w1)?, &mlp.b1)?);
    let out = engine::add(&engine::matmul(&h, &mlp.w2)?, &mlp.b2)?;
    Ok(out.into_data())
}

fn single_score(feature: &[f64], embedding: &[f64], mlp: &Mlp) -> Result<f64, ModelError> {
    let mut x = feature.to_vec();
    x.extend_from_slice(embedding);
    Ok(attention_scores(&Tensor::row(x), mlp)?[0])
}

/// Score of one proposal's visual feature against a target unit embedding.
pub fn target_attention(visual: &[f64], embedding: &[f64], mlp: &Mlp) -> Result<f64, ModelError> {
    single_score(visual, embedding, mlp)
}

/// Score of one proposal's visual feature against a reference unit embedding.
pub fn reference_attention(visual: &[f64], embedding: &[f64], mlp: &Mlp) -> Result<f64, ModelError> {
    single_score(visual, embedding, mlp)
}

/// Score of one proposal pair feature against a discriminative unit embedding.
pub fn discriminative_attention(pair: &[f64], embedding: &[f64], mlp: &Mlp) -> Result<f64, ModelError> {
    single_score(pair, embedding, mlp)
}

/// Softmax weights over `scores` and the weighted sum of the rows of
/// `features`.
pub fn aggregate(scores: &[f64], features: &Tensor, mode: Mode, tau: f64) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    check_len("aggregation rows", features.rows(), scores.len())?;
    let weights = engine::softmax(&Tensor::row(scores.to_vec()), mode.temperature(tau))?;
    let agg = engine::matmul(&weights, features)?;
    Ok((weights.into_data(), agg.into_data()))
}

/// `relu(f W1 + b1) W2 + b2`.
pub fn reconstruct(feature: &[f64], mlp: &Mlp) -> Result<Vec<f64>, ModelError> {
    check_len("reconstruction input", feature.len(), mlp.input_dim())?;
    let h = engine::relu(&engine::add(&engine::matmul(&Tensor::row(feature.to_vec()), &mlp.w1)?, &mlp.b1)?);
    Ok(engine::add(&engine::matmul(&h, &mlp.w2)?, &mlp.b2)?.into_data())
}

/// Sum of squared L2 distances between reconstructed and original units.
pub fn triad_loss(reconstructed: &[Vec<f64>; 3], original: &[Vec<f64>; 3]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (a, b) in reconstructed.iter().zip(original) {
        check_len("unit embedding", a.len(), b.len())?;
        total += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(total)
}

/// Raw attention scores of one triad over a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitScores {
    pub n: usize,
    /// Per proposal.
    pub target: Vec<f64>,
    /// Per proposal.
    pub reference: Vec<f64>,
    /// Per pair, index `i * n + j`.
    pub discriminative: Vec<f64>,
    /// Only the pairs `(i, i)` are candidates.
    pub diagonal_only: bool,
}

impl UnitScores {
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        self.discriminative[i * self.n + j]
    }
}

fn with_embedding(features: &Tensor, embedding: &[f64]) -> Result<Tensor, ModelError> {
    let tiled = Tensor::matrix(
        features.rows(),
        embedding.len(),
        (0..features.rows()).flat_map(|_| embedding.iter().copied()).collect(),
    )?;
    Ok(engine::concat(&[features, &tiled])?)
}

pub fn unit_scores(params: &ModelParams, scene: &SceneFeatures, triad: &DiscriminativeTriad) -> Result<UnitScores, ModelError> {
    let [e_t, e_r, e_d] = params.triad_embeddings(triad);
    Ok(UnitScores {
        n: scene.n,
        target: attention_scores(&with_embedding(&scene.visual, &e_t)?, &params.att_t)?,
        reference: attention_scores(&with_embedding(&scene.visual, &e_r)?, &params.att_r)?,
        discriminative: attention_scores(&with_embedding(&scene.pairs, &e_d)?, &params.att_d)?,
        diagonal_only: params.config.unary_diagonal && triad.is_unary(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_mlp() -> Mlp {
        // 4 inputs, 2 hidden, 1 output.
        Mlp {
            w1: Tensor::matrix(4, 2, vec![1.0, -1.0, 0.5, 2.0, -0.5, 1.0, 2.0, 0.0]).unwrap(),
            b1: Tensor::row(vec![0.1, -0.2]),
            w2: Tensor::matrix(2, 1, vec![1.5, -0.5]).unwrap(),
            b2: Tensor::row(vec![0.3]),
        }
    }

    #[test]
    fn hand_evaluated_attention() {
        // x = relu([1, -2] ++ [0.5, 3]) = [1, 0, 0.5, 3]
        // h = relu([1 - 0.25 + 6 + 0.1, -1 + 0.5 + 0 - 0.2]) = [6.85, 0]
        // a = 1.5 * 6.85 + 0.3 = 10.575
        let m = hand_mlp();
        let a = target_attention(&[1.0, -2.0], &[0.5, 3.0], &m).unwrap();
        assert!((a - 10.575).abs() < 1e-12, "{a}");
        assert_eq!(reference_attention(&[1.0, -2.0], &[0.5, 3.0], &m).unwrap(), a);
        assert!(target_attention(&[1.0], &[0.5, 3.0], &m).is_err());
    }

    #[test]
    fn hand_evaluated_discriminative() {
        // 3-wide pair feature plus 1-wide embedding through the same layout.
        let m = hand_mlp();
        // x = [0, 1, 2, 0.5] -> h = relu([0 + 0.5 - 1 + 1 + 0.1, 0 + 2 + 2 + 0 - 0.2]) = [0.6, 3.8]
        // a = 0.9 - 1.9 + 0.3 = -0.7
        let a = discriminative_attention(&[-1.0, 1.0, 2.0], &[0.5], &m).unwrap();
        assert!((a + 0.7).abs() < 1e-12, "{a}");
        let swapped = discriminative_attention(&[2.0, 1.0, -1.0], &[0.5], &m).unwrap();
        assert_ne!(a, swapped);
    }

    #[test]
    fn zero_parameters_score_zero() {
        let m = Mlp::zeros(4, 3, 1);
        assert_eq!(target_attention(&[1.0, 2.0], &[3.0, 4.0], &m).unwrap(), 0.0);
        assert_eq!(discriminative_attention(&[1.0, 2.0, 3.0], &[4.0], &m).unwrap(), 0.0);
        let r = Mlp::zeros(7, 3, 5);
        assert_eq!(reconstruct(&[1.0; 7], &r).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn inner_relu_gates_negative_inputs() {
        let m = Mlp {
            w1: Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            b1: Tensor::row(vec![0.25, 0.5]),
            w2: Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap(),
            b2: Tensor::row(vec![-0.125]),
        };
        let a = target_attention(&[-3.0], &[-7.0], &m).unwrap();
        assert_eq!(a, 0.25 + 1.0 - 0.125);
    }

    #[test]
    fn hand_evaluated_reconstruction() {
        let m = Mlp {
            w1: Tensor::matrix(2, 2, vec![1.0, -1.0, 2.0, 1.0]).unwrap(),
            b1: Tensor::row(vec![0.0, -5.0]),
            w2: Tensor::matrix(2, 3, vec![1.0, 0.0, -1.0, 4.0, 4.0, 4.0]).unwrap(),
            b2: Tensor::row(vec![0.5, 0.5, 0.5]),
        };
        // h = relu([1 + 4, -1 + 2 - 5]) = [5, 0]
        assert_eq!(reconstruct(&[1.0, 2.0], &m).unwrap(), vec![5.5, 0.5, -4.5]);
    }

    #[test]
    fn uniform_scores_average_features() {
        let f = Tensor::matrix(4, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        for mode in [Mode::Soft, Mode::Hard] {
            let (w, agg) = aggregate(&[0.3; 4], &f, mode, 0.1).unwrap();
            assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-15));
            assert!((agg[0] - 4.0).abs() < 1e-12 && (agg[1] - 5.0).abs() < 1e-12);
        }
        let one = Tensor::matrix(1, 3, vec![0.1, -0.2, 0.3]).unwrap();
        assert_eq!(aggregate(&[5.0], &one, Mode::Hard, 0.01).unwrap().1, vec![0.1, -0.2, 0.3]);
        assert!(aggregate(&[1.0, 2.0], &f, Mode::Soft, 1.0).is_err());
        assert!(aggregate(&[1.0; 4], &f, Mode::Hard, 0.0).is_err());
    }

    #[test]
    fn loss_examples() {
        let e = [vec![0.5, 1.0], vec![-1.0, 2.0], vec![0.0, 3.0]];
        assert_eq!(triad_loss(&e, &e).unwrap(), 0.0);
        let mut shifted = e.clone();
        shifted[0][0] += 1.0;
        assert_eq!(triad_loss(&shifted, &e).unwrap(), 1.0);
        assert!(triad_loss(&[vec![1.0], vec![], vec![]], &e).is_err());
    }
}
