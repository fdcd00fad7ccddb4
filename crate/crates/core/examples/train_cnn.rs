//! Generates probe-beam images for five turbulence classes, trains the
//! strength classifier and saves it.
//!
//! cargo run --release --example train_cnn [per-class] [out-dir]

use std::path::PathBuf;
use std::time::Instant;

use lgcorrect::cnn::{train, CnnModel};
use lgcorrect::config::RunConfig;
use lgcorrect::dataset::generate_dataset;

fn main() -> lgcorrect::Result<()> {
    let mut args = std::env::args().skip(1);
    let per_class: usize = args.next().map_or(Ok(200), |s| s.parse()).expect("per-class count");
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-out/train_cnn".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = RunConfig::default();

    let t = Instant::now();
    let dataset = generate_dataset(&cfg.dataset_config(per_class)?)?;
    println!("{} images in {:.1} s", dataset.len(), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let init = CnnModel::<f32>::new(cfg.architecture()?, dataset.classes.clone(), cfg.task_seed("cnn-init"))?;
    let (model, history) = train(init, &dataset.data, &cfg.train_config())?;
    println!("epoch  train-loss  train-acc  val-loss  val-acc");
    for e in &history.epochs {
        println!("{:5}  {:10.4}  {:9.3}  {:8.4}  {:7.3}", e.epoch, e.train_loss, e.train_accuracy, e.validation_loss, e.validation_accuracy);
    }
    println!("trained in {:.1} s\n", t.elapsed().as_secs_f64());
    println!("{}", model.describe());
    model.save(out.join("model.lgcn"))?;
    std::fs::write(out.join("history.csv"), history.to_csv())?;
    Ok(())
}
