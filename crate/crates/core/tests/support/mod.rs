//! Helpers shared by integration test targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use storejourney::nn::{batch_loss, forward_batch, loss_and_grad, Batch, Params, TransformerConfig};

pub fn gradcheck_config() -> TransformerConfig {
    TransformerConfig {
        n_layer: 2,
        n_head: 2,
        d_model: 16,
        d_ff: 64,
        ctx_len: 16,
        vocab_size: 40,
        seed: 11,
        dropout: 0.0,
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng) -> Batch {
    let (n_seq, seq_len) = (2, 12);
    let inputs: Vec<u32> = (0..n_seq * seq_len).map(|_| rng.random_range(0..40)).collect();
    let targets: Vec<u32> = (0..n_seq * seq_len).map(|_| rng.random_range(0..40)).collect();
    // Second sequence is padded after 9 positions.
    let mask = (0..n_seq * seq_len).map(|i| i < seq_len || i % seq_len < 9).collect();
    Batch { n_seq, seq_len, inputs, targets, mask }
}

fn loss_at(params: &Params<f64>, b: &Batch) -> f64 {
    let acts = forward_batch::<f64, ChaCha8Rng>(params, &b.inputs, b.n_seq, b.seq_len, None).unwrap();
    batch_loss(&acts.logits, b, params.config.vocab_size)
}

pub struct GradcheckReport {
    pub checked: usize,
    pub groups: usize,
    pub groups_covered: usize,
    /// Worst relative error with the coordinate it occurred at.
    pub worst: (f64, String),
}

/// Compares analytic gradients with Richardson-extrapolated central
/// differences on at least 200 coordinates spread over every parameter group.
pub fn gradient_check() -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut params = Params::<f64>::init(&gradcheck_config()).unwrap();
    // Perturb gains and biases away from their init so every group carries signal.
    for v in params.data.iter_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    let b = random_batch(&mut rng);
    let (loss, grad) = loss_and_grad::<f64, ChaCha8Rng>(&params, &b, None).unwrap();
    assert!((loss - loss_at(&params, &b)).abs() < 1e-12);

    let h = 1e-4;
    let groups = params.layout.groups.clone();
    let per_group = 200usize.div_ceil(groups.len()).max(8);
    let mut report =
        GradcheckReport { checked: 0, groups: groups.len(), groups_covered: 0, worst: (0.0, String::new()) };
    for g in &groups {
        for _ in 0..per_group.min(g.len()) {
            let i = g.offset + rng.random_range(0..g.len());
            let mut central = |step: f64| {
                let orig = params.data[i];
                params.data[i] = orig + step;
                let up = loss_at(&params, &b);
                params.data[i] = orig - step;
                let down = loss_at(&params, &b);
                params.data[i] = orig;
                (up - down) / (2.0 * step)
            };
            // O(h⁴) truncation error.
            let numeric = (4.0 * central(h / 2.0) - central(h)) / 3.0;
            let analytic = grad[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            if rel > report.worst.0 {
                report.worst = (rel, format!("{}[{}]", g.name, i - g.offset));
            }
            report.checked += 1;
        }
        report.groups_covered += 1;
    }
    report
}
