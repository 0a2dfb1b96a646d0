#![allow(dead_code)]

use std::path::{Path, PathBuf};

use msdpp::synth::SynthPlan;
use msdpp_cli::commands::{cmd_gen, load_snapshot};
use msdpp_cli::pipeline::Snapshot;

pub const SEED: u64 = 3;

/// Small fixture with appearance, time and location attributes.
pub const CONFIG: &str = r#"theta = 0.9
k = 10
top_n = 60
tn_mode = "tv_m"

[[attributes]]
name = "appearance"
kind = "appearance"
direction = 1
weight = 0.5

[[attributes]]
name = "time"
kind = "time"
direction = 1
weight = 0.5

[[attributes]]
name = "location"
kind = "geo"
direction = 1
weight = 0.0

[sweep]
attribute = "time"
"#;

pub fn plan() -> SynthPlan {
    SynthPlan {
        n_items: 180,
        n_clusters: 4,
        n_queries: 3,
        dim: 8,
        ..SynthPlan::default()
    }
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        Self::with_config(CONFIG)
    }

    pub fn with_config(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        cmd_gen(SEED, &plan(), dir.path()).unwrap();
        std::fs::write(dir.path().join("config.toml"), config).unwrap();
        Fixture { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn snapshot(&self) -> Snapshot {
        load_snapshot(
            &self.path("config.toml"),
            &self.path("gallery.jsonl"),
            &self.path("queries.jsonl"),
        )
        .unwrap()
    }
}
