use std::path::PathBuf;

use rcguide::pipeline::{summarize, Pipeline, PipelineConfig};

fn main() -> rcguide::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = PathBuf::from(args.next().expect("usage: run_fixture <config> <out>"));
    let out = PathBuf::from(args.next().expect("usage: run_fixture <config> <out>"));
    let mut cfg = PipelineConfig::load(&config)?;
    cfg.output_dir = out.clone();
    Pipeline::new(cfg)?.run_all()?;
    print!("{}", summarize(&out)?);
    Ok(())
}
