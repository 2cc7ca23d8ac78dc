//! Generates a planted-cluster dataset on disk: a raw-f32 embedding file, a
//! label CSV, and a probability CSV for the uncertainty baselines.
//!
//! ```text
//! cargo run --release -p discovery-core --example gen_synthetic -- <out_dir> [seed]
//! ```
//!
//! The layout mirrors the imbalanced benchmark setups: 10 clusters in 16
//! dimensions, clusters 0-6 sized for 1000 labeled + 1000 unlabeled points
//! each, clusters 7-9 with 50 points each.

use discovery_core::dataset::save_embeddings_raw;
use discovery_core::synthetic::{gaussian_clusters, ClusterSpec};
use std::io::Write;
use std::path::PathBuf;

fn main() {
    let mut args = std::env::args().skip(1);
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| {
        eprintln!("usage: gen_synthetic <out_dir> [seed]");
        std::process::exit(2);
    }));
    let seed: u64 = args
        .next()
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(1);
    std::fs::create_dir_all(&out_dir).expect("create output directory");

    let mut sizes = vec![2000usize; 7];
    sizes.extend([50, 50, 50]);
    let spec = ClusterSpec {
        clusters: 10,
        dim: 16,
        points_per_cluster: sizes,
        noise: 0.07,
        max_center_cosine: 0.5,
        seed,
    };
    let (store, labels) = gaussian_clusters(&spec).expect("generator");

    let emb_path = out_dir.join("embeddings.raw");
    save_embeddings_raw(&store, &emb_path).expect("write embeddings");

    let label_path = out_dir.join("labels.csv");
    let mut f = std::fs::File::create(&label_path).expect("create labels.csv");
    writeln!(f, "id,class_id,attrs").unwrap();
    for (id, label) in &labels {
        writeln!(f, "{id},{},{}", label.class_id, label.attributes.join(";")).unwrap();
    }

    // simulated confidences of a model that only knows classes 0-6: unknown
    // points get flat-ish rows, but a fair share of known points are also
    // low-confidence, so uncertainty baselines mix the two as they would on
    // real embeddings
    use rand::{Rng, SeedableRng};
    let mut prob_rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let prob_path = out_dir.join("probabilities.csv");
    let mut f = std::fs::File::create(&prob_path).expect("create probabilities.csv");
    let classes = 7;
    let header: Vec<String> = std::iter::once("id".to_string())
        .chain((0..classes).map(|c| format!("p{c}")))
        .collect();
    writeln!(f, "{}", header.join(",")).unwrap();
    for (id, label) in &labels {
        let known = (label.class_id as usize) < classes;
        let peak = if known {
            label.class_id as usize
        } else {
            prob_rng.gen_range(0..classes)
        };
        let peaked = if known {
            prob_rng.gen_range(0.25..0.95)
        } else {
            prob_rng.gen_range(0.16..0.45)
        };
        let rest = (1.0 - peaked) / (classes - 1) as f64;
        let row: Vec<String> = (0..classes)
            .map(|c| {
                let p = if c == peak { peaked } else { rest };
                format!("{p:.12}")
            })
            .collect();
        writeln!(f, "{id},{}", row.join(",")).unwrap();
    }

    println!(
        "wrote {} ({} points x {} dims), {}, {}",
        emb_path.display(),
        store.len(),
        store.dim(),
        label_path.display(),
        prob_path.display()
    );
}
