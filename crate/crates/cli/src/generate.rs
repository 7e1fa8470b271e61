use std::path::PathBuf;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use viewset_core::geometry::ImageSize;
use viewset_core::io::{self, DatasetManifest};
use viewset_core::minens::{render_example, MinensConfig, DEFAULT_IMAGE_SIDE, TRAIN_VIEWS};

use crate::config::{ConfigFile, RunManifest};
use crate::{Globals, Status};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Number of examples.
    #[arg(long)]
    count: Option<u64>,
    /// Output dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Square image side in pixels.
    #[arg(long)]
    image_size: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Settings {
    pub count: u64,
    pub out: Option<PathBuf>,
    pub image_size: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self { count: 10, out: None, image_size: DEFAULT_IMAGE_SIDE }
    }
}

impl Args {
    pub fn resolve(self, file: &ConfigFile) -> Result<Settings> {
        let mut s = file.resolve("generate", Settings::default())?;
        s.count = self.count.unwrap_or(s.count);
        s.out = self.out.or(s.out);
        s.image_size = self.image_size.unwrap_or(s.image_size);
        anyhow::ensure!(s.image_size > 0, "image size must be positive");
        Ok(s)
    }
}

pub fn run(g: &Globals, s: Settings) -> Result<Status> {
    let out = s.out.clone().context("--out is required")?;
    io::create_dir(&out)?;
    let cfg = MinensConfig { image_size: ImageSize::square(s.image_size), ..Default::default() };
    let names: Vec<String> = (0..s.count)
        .into_par_iter()
        .map(|i| {
            let name = io::example_dir_name(i);
            io::write_example(&out.join(&name), &render_example(g.seed, i, &cfg))?;
            Ok(name)
        })
        .collect::<Result<_, io::IoError>>()?;
    let manifest = DatasetManifest {
        seed: g.seed,
        count: s.count,
        image_size: [s.image_size, s.image_size],
        train_views_per_example: TRAIN_VIEWS,
        val_views_per_example: 1,
        examples: names,
    };
    io::write_json(&out.join(io::MANIFEST_FILE), &manifest)?;
    io::write_json(&out.join("run.json"), &RunManifest::new("generate", g.seed, g.threads, &s)?)?;
    println!("wrote {} examples to {}", s.count, out.display());
    Ok(Status::Success)
}
