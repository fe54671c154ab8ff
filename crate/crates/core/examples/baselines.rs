//! Classical baselines on the same labeled budget: k-nearest neighbours,
//! logistic regression and self-training with pseudo-labels.
//!
//! ```text
//! cargo run --release --example baselines -- [n_lab] [seed]
//! ```

use wlssgan::baselines::{self_training_baseline, KnnModel, LogRegConfig, LogRegModel, SelfTrainingConfig};
use wlssgan::synth::{make_dataset, split_semisupervised, SpectrumParams};

fn main() -> wlssgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n_lab = args.first().and_then(|s| s.parse().ok()).unwrap_or(30);
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);

    let full = make_dataset(1000, 0.7, &SpectrumParams::default(), seed)?;
    let data = split_semisupervised(&full, n_lab, seed)?;
    let (train, test) = (data.train(), data.test());

    let knn = KnnModel::from_batch(&train, KnnModel::DEFAULT_K)?;
    println!("kNN (k = {})           {:.4}", knn.k(), knn.accuracy(&test)?);

    let (logreg, trace) = LogRegModel::from_batch(&train, &LogRegConfig::default())?;
    println!(
        "logistic regression     {:.4}  (loss {:.4} -> {:.4})",
        logreg.accuracy(&test)?,
        trace[0],
        trace[trace.len() - 1]
    );

    let st = self_training_baseline(&data, &SelfTrainingConfig::default())?;
    println!("self-training           {:.4}  (pseudo-labels per round {:?})", st.accuracy, st.added);
    Ok(())
}
