//! Tabular ingestion: encoding, correlation pruning, ANOVA ranking and
//! per-region client datasets from the bundled sales sample.
//!
//! ```text
//! cargo run --release --example csv_pipeline
//! ```

use std::path::PathBuf;

use bubblefl::experiment::{csv_clients, CsvSource, Preprocessing, SchemaSource};

fn main() -> bubblefl::Result<()> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let source = CsvSource {
        path: data.join("regional_sales.csv"),
        schema: SchemaSource::File(data.join("regional_sales.schema.json")),
        region_column: "region".into(),
        target_column: "sales".into(),
        test_fraction: 0.2,
    };
    let pre = Preprocessing { top_k: 6, ..Default::default() };
    let (clients, selection) = csv_clients(&source, &pre, 0)?;

    println!("encoded columns: {}", selection.encoded.join(", "));
    println!("dropped as correlated: {:?}", selection.removed_correlated);
    println!("dropped as constant: {:?}", selection.zero_variance);
    println!("ANOVA ranking:");
    for (name, f, p) in &selection.ranked {
        println!("  {name:<24} F {f:>10.2}  p {p:.4}");
    }
    println!("selected: {}", selection.selected.join(", "));
    for c in &clients {
        println!("{:<12} {} train rows, {} test rows", c.client_id, c.train.len(), c.test.len());
    }
    Ok(())
}
