//! Writes the built-in scenarios as JSON files into the given directory.
//!
//! ```text
//! cargo run -p relaynet --example export_scenarios -- scenarios
//! ```

use std::path::PathBuf;

use relaynet::io::save_scenario;
use relaynet::scenarios::{self, RandomSpec};

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scenarios".into()));
    std::fs::create_dir_all(&dir).expect("create output directory");
    let mut all = vec![scenarios::reference()];
    for m in [2, 3, 5] {
        all.push(scenarios::single_flow(m, 1.3, 0.25, 6000));
    }
    let spec = RandomSpec {
        mobiles: 8,
        statics: 4,
        flows: 2,
        max_ticks: 3000,
    };
    all.push(scenarios::random_connected(spec, 1));
    for sc in &all {
        let path = dir.join(format!("{}.json", sc.name));
        save_scenario(&path, sc).expect("write scenario");
        println!("{}", path.display());
    }
}
