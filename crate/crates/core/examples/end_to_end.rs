//! The whole pipeline from a JSON config: importance release, bubbles,
//! federated training of every method and the comparison report.
//!
//! ```text
//! cargo run --release --example end_to_end [config.json] [out_dir]
//! ```

use std::path::PathBuf;

use bubblefl::evaluation::Method;
use bubblefl::experiment::{load_config, run_experiment};

fn main() -> bubblefl::Result<()> {
    let mut args = std::env::args().skip(1);
    let config_path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/synthetic.json"));
    let mut config = load_config(&config_path)?;
    if let Some(out) = args.next() {
        config.out_dir = out.into();
    } else {
        config.out_dir = std::env::temp_dir().join("bubblefl-end-to-end");
    }

    let report = run_experiment(&config)?;
    if let Some(a) = &report.assignment {
        println!("k* = {}  singletons {:?}", a.k_star, a.singletons);
    }
    print!("{}", report.to_csv()?);
    for method in [Method::Pooled, Method::PaCfl] {
        if let Some(s) = report.summary_for(method) {
            println!(
                "{method}: mean RMSE {:.4}, RMSE change vs local {:+.1}%",
                s.mean_rmse,
                -s.rmse_reduction_pct.unwrap_or(f64::NAN)
            );
        }
    }
    println!("artifacts in {}", config.out_dir.display());
    Ok(())
}
