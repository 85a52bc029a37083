use rand::Rng;

use crate::nn::{MlpModel, Workspace};

/// Index of the largest value; ties go to the lowest index.
pub fn greedy_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy over the network's outputs.
pub fn select_action<R: Rng + ?Sized>(
    qnet: &MlpModel,
    features: &[f64],
    epsilon: f64,
    ws: &mut Workspace,
    rng: &mut R,
) -> usize {
    let n = qnet.output_width();
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return rng.gen_range(0..n);
    }
    let q = qnet
        .forward_with(features, ws)
        .expect("feature width matches the Q-network");
    greedy_index(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{stream_rng, Stream};
    use std::vec;

    fn net_with_biases(biases: &[f64]) -> MlpModel {
        let mut m = MlpModel::zeros(&[2, biases.len()]).unwrap();
        m.layers_mut()[0].biases.copy_from_slice(biases);
        m
    }

    #[test]
    fn greedy_picks_unique_max() {
        let mut q = vec![0.0; 12];
        q[5] = 1.0;
        let m = net_with_biases(&q);
        let mut ws = Workspace::for_model(&m);
        let mut rng = stream_rng(0, Stream::Agent);
        assert_eq!(select_action(&m, &[0.3, 0.1], 0.0, &mut ws, &mut rng), 5);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let mut q = vec![-1.0; 12];
        q[2] = 4.0;
        q[9] = 4.0;
        let m = net_with_biases(&q);
        let mut ws = Workspace::for_model(&m);
        let mut rng = stream_rng(0, Stream::Agent);
        assert_eq!(select_action(&m, &[0.0, 0.0], 0.0, &mut ws, &mut rng), 2);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let m = net_with_biases(&[0.0; 12]);
        let mut ws = Workspace::for_model(&m);
        let mut rng = stream_rng(42, Stream::Agent);
        let mut counts = [0usize; 12];
        let n = 120_000;
        for _ in 0..n {
            counts[select_action(&m, &[0.0, 0.0], 1.0, &mut ws, &mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 12.0).abs() < 0.01);
        }
    }
}
