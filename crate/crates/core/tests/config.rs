use std::path::Path;

use gwork::config::*;
use gwork::gw::{LossWeights, Variant};
use gwork::trainer::Unpaired;

#[test]
fn empty_file_gives_defaults() {
    let cfg = ExperimentConfig::from_toml("", Path::new("x.toml")).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!(cfg.protocol.batch_size, 64);
    assert_eq!(cfg.protocol.steps, 30_000);
    assert_eq!(cfg.ablation.n, vec![50, 100, 500, 1000, 5000, 10_000]);
    assert_eq!(cfg.ooo.far_for(10_000), 50);
}

#[test]
fn toml_round_trip_with_weights_and_all() {
    let text = r#"
specialist_seed = 4

[data.dataset]
k = 2000
n_test = 200
seed = 9

[protocol]
steps = 100
contrastive = "infonce"

[protocol.arch]
hidden_width = 64
hidden_layers = 3

[protocol.weights.all_sup_all_cycles]
tr = 1.0
cont = 0.1
cy = 0.1
dcy = 1.0

[train]
variant = "trans_cont"
n = 100
m = 400

[ablation]
n = [100]
m = "all"
"#;
    let cfg = ExperimentConfig::from_toml(text, Path::new("x.toml")).unwrap();
    assert_eq!(cfg.data.dataset.k, 2000);
    assert_eq!(cfg.train.m, Unpaired::Count(400));
    assert_eq!(cfg.ablation.m, Unpaired::ALL);
    assert_eq!(
        cfg.protocol.weights_for(Variant::AllSupAllCycles),
        LossWeights { tr: 1.0, cont: 0.1, cy: 0.1, dcy: 1.0 }
    );
    assert_eq!(cfg.protocol.weights_for(Variant::TransCont), Variant::TransCont.default_weights());
    let back = ExperimentConfig::from_toml(&cfg.to_toml(), Path::new("y.toml")).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn invalid_configs_are_rejected() {
    for text in [
        "[protocol]\nbatch_size = 2",
        "[protocol]\nlearning_rate = -1.0",
        "[protocol.weights.translation_only]\ntr = 1.0\ncont = 1.0\ncy = 0.0\ndcy = 0.0",
        "[sweep]\nm = [10, 5]",
        "[ablation]\nseeds = []",
        "unknown_key = 1",
        "[train]\nvariant = \"nope\"",
    ] {
        assert!(ExperimentConfig::from_toml(text, Path::new("x.toml")).is_err(), "{text}");
    }
}

#[test]
fn desk_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.data.dataset.k, 10_000);
    assert_eq!(cfg.ablation.variants, Variant::ALL.to_vec());
    assert_eq!(cfg.sweep.m.last().copied(), Some(cfg.data.dataset.k - cfg.sweep.n));
    assert!(cfg.protocol.weights[&Variant::AllSupAllCycles].validate_for(Variant::AllSupAllCycles).is_ok());
}
