//! Calibrating and sampling the Laplace mechanism.
//!
//! ```text
//! cargo run --release --example laplace_mechanism
//! ```

use bubblefl::boosting::{normalize, Sensitivity};
use bubblefl::privacy::{noise_scale, perturb, LaplaceSampler, PrivacyBudget};

fn main() -> bubblefl::Result<()> {
    let delta = Sensitivity::new(0.04)?;
    let importance = normalize("client-a", &[0.55, 0.30, 0.10, 0.05], false);
    println!("clean importance  {:?}", importance.values);

    for budget in [PrivacyBudget::LOW, PrivacyBudget::MODERATE, PrivacyBudget::HIGH] {
        let scale = noise_scale(delta, budget);
        let mut sampler = LaplaceSampler::new(7);
        let noisy = normalize("client-a", &perturb(&importance, scale, &mut sampler), true);
        let rounded: Vec<String> = noisy.values.iter().map(|v| format!("{v:.3}")).collect();
        println!("eps {:>4}  sigma {:.4}  released [{}]", budget.epsilon(), scale.sigma, rounded.join(", "));
    }

    let sigma = 0.5;
    let mut sampler = LaplaceSampler::new(1);
    let n = 50_000;
    let draws: Vec<f64> = (0..n).map(|_| sampler.sample(sigma)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
    println!("{n} draws at sigma {sigma}: mean {mean:+.4}, variance {var:.4} (expected {})", 2.0 * sigma * sigma);
    Ok(())
}
