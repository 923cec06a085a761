use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use gwork::config::ExperimentConfig;
use gwork::eval::{
    ablation_cells, baselines_csv, build_ooo_dataset, eval_properties, figure_files, ooo_for_model, parse_results_csv,
    results_csv, run_cell, run_cells, run_ooo_baselines, sweep_cells, triplets_csv, Cell, CellResult, EvalError,
    GridContext, OooDataset, OooInputs, ResultRow, RunMeta,
};
use gwork::gw::{read_checkpoint, GwModel, Variant};
use gwork::manifest::{sha256_hex, Manifest, MANIFEST_FILE};
use gwork::shapes::{build_dataset, load_dataset, Dataset, ProtoVector};
use gwork::specialists::Specialists;
use gwork::trainer::{
    calibrate_score_weights, f17, select_coefficients, split_dataset, train, RunSeeds, TrainData, TrainError,
};

use crate::{Cli, Command, Common};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration (exit code 2).
    Usage(anyhow::Error),
    /// Anything that went wrong while running (exit code 1).
    Runtime(anyhow::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) | EvalError::Train(TrainError::Config(_)) => CliError::Usage(e.into()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        EvalError::from(e).into()
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    if cli.jobs == 0 {
        return Err(CliError::Usage(anyhow!("--jobs must be at least 1")));
    }
    let seed = cli.seed;
    match cli.command {
        Command::GenData { k, n_test, images, config, out } => {
            let mut cfg = load_config(config.as_deref())?;
            let d = &mut cfg.data.dataset;
            d.k = k.unwrap_or(d.k);
            d.n_test = n_test.unwrap_or(d.n_test);
            d.seed = seed.unwrap_or(d.seed);
            d.images |= images;
            build_dataset(d, &out).with_context(|| format!("writing dataset to {}", out.display()))?;
            Ok(())
        }
        Command::Train(c) => cmd_train(&c, seed),
        Command::Eval { common, run } => cmd_eval(&common, &run, seed),
        Command::Ablate(c) => cmd_ablate(&c, seed, cli.jobs),
        Command::Ooo { common, run } => cmd_ooo(&common, run.as_deref(), seed),
        Command::Sweep(c) => cmd_sweep(&c, seed, cli.jobs),
        Command::Select(c) => cmd_select(&c, seed),
        Command::Report { inputs, out } => cmd_report(&inputs, &out, seed),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| CliError::Usage(e.into())),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Dataset, specialists and their latents, plus the input hashes to record.
struct World {
    ds: Dataset,
    data: TrainData,
    specialists: Specialists,
    dataset_manifest: Option<String>,
}

fn load_world(cfg: &ExperimentConfig) -> Result<World> {
    let (ds, dataset_manifest) = match &cfg.data.dir {
        Some(dir) => {
            let ds = load_dataset(dir)
                .with_context(|| format!("refusing to use dataset {}: it does not verify", dir.display()))?;
            let bytes = std::fs::read(dir.join(MANIFEST_FILE)).context("reading dataset manifest")?;
            (ds, Some(sha256_hex(&bytes)))
        }
        None => (Dataset::generate(&cfg.data.dataset).map_err(|e| CliError::Usage(e.into()))?, None),
    };
    let specialists = Specialists::new(cfg.specialist_seed, ds.config.shape).context("building specialists")?;
    let data = TrainData::from_dataset(&ds, &specialists, cfg.protocol.language)?;
    Ok(World { ds, data, specialists, dataset_manifest })
}

/// An output directory and the manifest that will describe it.
struct Output {
    dir: PathBuf,
    manifest: Manifest,
}

impl Output {
    fn new(dir: &Path, command: &str, seed: u64, cfg: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), manifest: Manifest::new(command, seed, cfg) })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        self.manifest.write_file(&self.dir, rel, bytes).map_err(|e| CliError::Runtime(e.into()))
    }

    /// Records the specialists and dataset the run depended on and writes
    /// the specialist snapshots.
    fn record_world(&mut self, w: &World) -> Result<()> {
        for (name, bytes) in [("vision", w.specialists.vision.snapshot()), ("text", w.specialists.text.snapshot())] {
            self.manifest.asset_hashes.insert(format!("specialist_{name}"), sha256_hex(&bytes));
            self.write(&format!("specialists/{name}.bin"), &bytes)?;
        }
        if let Some(h) = &w.dataset_manifest {
            self.manifest.asset_hashes.insert("dataset_manifest".into(), h.clone());
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        self.manifest.save(&self.dir).map_err(|e| CliError::Runtime(e.into()))
    }
}

fn write_cell(out: &mut Output, prefix: &str, r: &CellResult) -> Result<()> {
    let stem = r.cell.stem();
    out.write(&format!("{prefix}ckpt/{stem}.bin"), &r.checkpoint)?;
    out.write(&format!("{prefix}metrics/{stem}.csv"), &r.metrics)
}

fn write_splits(out: &mut Output, prefix: &str, results: &[CellResult]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in results {
        if seen.insert((r.cell.n, r.cell.seed)) {
            out.write(&format!("{prefix}splits/{}/{}.txt", r.cell.n, r.cell.seed), r.split.as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_train(c: &Common, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(c.config.as_deref())?;
    cfg.train.seed = seed.unwrap_or(cfg.train.seed);
    let world = load_world(&cfg)?;
    let t = &cfg.train;
    let cell = Cell { variant: t.variant, n: t.n, m: t.m, seed: t.seed };
    let ctx = GridContext { data: &world.data, protocol: &cfg.protocol, ooo: None };
    let r = run_cell(ctx, cell)?;
    let mut out = Output::new(&c.out, "train", t.seed, &cfg)?;
    out.record_world(&world)?;
    write_cell(&mut out, "", &r)?;
    out.write("split.txt", r.split.as_bytes())?;
    out.write("properties.csv", &results_csv(&[ResultRow::from_result(&r)]))?;
    out.finish()
}

/// A verified `train` output: its configuration and model.
fn open_run(run: &Path) -> Result<(ExperimentConfig, GwModel, Manifest)> {
    let m = Manifest::open(run)
        .with_context(|| format!("refusing to use run {}: its manifest does not verify", run.display()))?;
    if m.command != "train" {
        return Err(CliError::Usage(anyhow!("{} was produced by `{}`, not `train`", run.display(), m.command)));
    }
    let cfg: ExperimentConfig = serde_json::from_value(m.config.clone()).context("run manifest config")?;
    let cell = Cell { variant: cfg.train.variant, n: cfg.train.n, m: cfg.train.m, seed: cfg.train.seed };
    let path = run.join(format!("ckpt/{}.bin", cell.stem()));
    let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let (_, model) = read_checkpoint(std::io::BufReader::new(file)).context("reading checkpoint")?;
    Ok((cfg, model, m))
}

/// Fails when the specialists rebuilt from `cfg` differ from those the run
/// recorded.
fn check_specialists(run: &Manifest, world: &World) -> Result<()> {
    for (name, bytes) in [("vision", world.specialists.vision.snapshot()), ("text", world.specialists.text.snapshot())]
    {
        let key = format!("specialist_{name}");
        if let Some(expected) = run.asset_hashes.get(&key) {
            let found = sha256_hex(&bytes);
            if &found != expected {
                return Err(CliError::Runtime(anyhow!(
                    "stale input: the {name} specialist rebuilt here ({found}) differs from the one the run used ({expected})"
                )));
            }
        }
    }
    Ok(())
}

fn cmd_eval(c: &Common, run: &Path, seed: Option<u64>) -> Result<()> {
    let (mut cfg, model, run_manifest) = open_run(run)?;
    if let Some(path) = &c.config {
        // only the data source may be redirected
        cfg.data = load_config(Some(path))?.data;
    }
    let world = load_world(&cfg)?;
    check_specialists(&run_manifest, &world)?;
    let t = &cfg.train;
    let split = split_dataset(world.data.k(), t.n, t.m, t.seed)?;
    let meta = RunMeta {
        variant: t.variant,
        n: t.n,
        m: split.m,
        seeds: RunSeeds::uniform(t.seed),
        weights: cfg.protocol.weights_for(t.variant),
        contrastive: cfg.protocol.contrastive,
    };
    let report =
        eval_properties(&model, &world.data.test_paired(), &world.data.test_unpaired(), meta, cfg.protocol.batch_size)?;
    let row = ResultRow {
        variant: meta.variant,
        n: meta.n,
        m: meta.m,
        seed: t.seed,
        contrastive: meta.contrastive,
        weights: meta.weights,
        tr: report.tr,
        tr_vt: report.tr_vt,
        tr_tv: report.tr_tv,
        cont_literal: report.cont_literal,
        cont_infonce: report.cont_infonce,
        cy: report.cy,
        dcy: report.dcy,
        ooo: None,
    };
    let mut out = Output::new(&c.out, "eval", seed.unwrap_or(t.seed), &cfg)?;
    out.manifest
        .asset_hashes
        .insert("run_manifest".into(), sha256_hex(&std::fs::read(run.join(MANIFEST_FILE)).context("run manifest")?));
    out.write("properties.csv", &results_csv(&[row]))?;
    out.finish()
}

fn protos(ds: &Dataset) -> (Vec<ProtoVector>, Vec<ProtoVector>) {
    (ds.train.iter().map(|r| r.proto).collect(), ds.test.iter().map(|r| r.proto).collect())
}

fn ooo_dataset(cfg: &ExperimentConfig, ds: &Dataset) -> Result<OooDataset> {
    let (train, test) = protos(ds);
    Ok(build_ooo_dataset(&train, &test, cfg.ooo.n_train, cfg.ooo.n_test, cfg.ooo.far_for(train.len()), cfg.ooo.seed)?)
}

fn cmd_ablate(c: &Common, seed: Option<u64>, jobs: usize) -> Result<()> {
    let mut cfg = load_config(c.config.as_deref())?;
    if let Some(s) = seed {
        cfg.ablation.seeds = vec![s];
    }
    let world = load_world(&cfg)?;
    let a = &cfg.ablation;
    let cells = ablation_cells(&a.variants, &a.n, &a.seeds, a.m);
    let ooo = if a.ooo { Some((OooInputs::from_data(&world.data), ooo_dataset(&cfg, &world.ds)?)) } else { None };
    let ctx = GridContext {
        data: &world.data,
        protocol: &cfg.protocol,
        ooo: ooo.as_ref().map(|(i, d)| (i, d, &cfg.ooo.probe)),
    };
    let results = run_cells(ctx, &cells, jobs)?;
    let mut out = Output::new(&c.out, "ablate", a.seeds[0], &cfg)?;
    out.record_world(&world)?;
    for r in &results {
        write_cell(&mut out, "", r)?;
    }
    write_splits(&mut out, "", &results)?;
    if let Some((_, d)) = &ooo {
        out.write("ooo_triplets.csv", &triplets_csv(d))?;
    }
    let rows: Vec<ResultRow> = results.iter().map(ResultRow::from_result).collect();
    out.write("ablation.csv", &results_csv(&rows))?;
    out.finish()
}

fn cmd_ooo(c: &Common, run: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let (mut cfg, model, run_manifest) = match run {
        Some(r) => {
            let (cfg, model, m) = open_run(r)?;
            (cfg, Some(model), Some(m))
        }
        None => (load_config(c.config.as_deref())?, None, None),
    };
    if run.is_some() && c.config.is_some() {
        let local = load_config(c.config.as_deref())?;
        cfg.ooo = local.ooo;
        cfg.data = local.data;
    }
    cfg.ooo.seed = seed.unwrap_or(cfg.ooo.seed);
    let world = load_world(&cfg)?;
    if let Some(m) = &run_manifest {
        check_specialists(m, &world)?;
    }
    let ds = ooo_dataset(&cfg, &world.ds)?;
    let inputs = OooInputs::from_data(&world.data);
    let baselines = run_ooo_baselines(&inputs, &ds, cfg.protocol.arch, &cfg.ooo.probe)?;
    let mut out = Output::new(&c.out, "ooo", cfg.ooo.seed, &cfg)?;
    out.record_world(&world)?;
    out.write("ooo_triplets.csv", &triplets_csv(&ds))?;
    out.write("ooo_baselines.csv", &baselines_csv(&baselines))?;
    if let Some(model) = &model {
        let s = ooo_for_model(model, &inputs, &ds, &cfg.ooo.probe)?;
        let text = format!(
            "variant,ooo_vvv_train,ooo_vvv,ooo_ttt,ooo_ttv\n{},{},{},{},{}\n",
            cfg.train.variant.name(),
            f17(s.vvv_train),
            f17(s.vvv),
            f17(s.ttt),
            f17(s.ttv)
        );
        out.write("ooo_model.csv", text.as_bytes())?;
    }
    out.finish()
}

fn cmd_sweep(c: &Common, seed: Option<u64>, jobs: usize) -> Result<()> {
    let mut cfg = load_config(c.config.as_deref())?;
    if let Some(s) = seed {
        cfg.sweep.seeds = vec![s];
    }
    let world = load_world(&cfg)?;
    let s = &cfg.sweep;
    if s.seeds.is_empty() || s.variants.is_empty() || s.m.is_empty() {
        return Err(CliError::Usage(anyhow!("sweep needs at least one variant, M and seed")));
    }
    let cells = sweep_cells(&s.variants, s.n, &s.m, &s.seeds);
    let ctx = GridContext { data: &world.data, protocol: &cfg.protocol, ooo: None };
    let results = run_cells(ctx, &cells, jobs)?;
    let mut out = Output::new(&c.out, "sweep", s.seeds[0], &cfg)?;
    out.record_world(&world)?;
    for m in &s.m {
        let here: Vec<CellResult> = results.iter().filter(|r| r.report.meta.m == *m).cloned().collect();
        let prefix = format!("m{m}/");
        for r in &here {
            write_cell(&mut out, &prefix, r)?;
        }
        write_splits(&mut out, &prefix, &here)?;
    }
    let rows: Vec<ResultRow> = results.iter().map(ResultRow::from_result).collect();
    out.write("sweep.csv", &results_csv(&rows))?;
    out.finish()
}

fn cmd_select(c: &Common, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(c.config.as_deref())?;
    cfg.select.seed = seed.unwrap_or(cfg.select.seed);
    let world = load_world(&cfg)?;
    let s = &cfg.select;
    let split = split_dataset(world.data.k(), s.n, cfg.train.m, s.seed)?;
    let base = |variant: Variant| cfg.protocol.train_config(&Cell { variant, n: s.n, m: cfg.train.m, seed: s.seed });
    let tr_run = train(&base(Variant::TranslationOnly), &split, &world.data)?;
    let cont_run = train(&base(Variant::TransCont), &split, &world.data)?;
    let tr = tr_run.final_test.tr.expect("evaluated");
    let cont = cont_run.final_test.cont.expect("evaluated");
    let (weights, note) = calibrate_score_weights(tr, cont);
    if let Some(n) = &note {
        eprintln!("warning: {n}");
    }
    let sel = select_coefficients(&base(s.variant), &split, &world.data, &s.values, weights)?;
    let mut csv = String::from("alpha_tr,alpha_cont,alpha_cy,alpha_dcy,score,loss_tr,loss_cont\n");
    for g in &sel.grid {
        let w = g.weights;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            f17(w.tr),
            f17(w.cont),
            f17(w.cy),
            f17(w.dcy),
            f17(g.score),
            f17(g.test.tr.expect("evaluated")),
            f17(g.test.cont.expect("evaluated"))
        ));
    }
    let summary = serde_json::json!({
        "variant": s.variant.name(),
        "best": sel.best,
        "best_score": sel.best_score,
        "score_weights": { "tr": weights.0, "cont": weights.1 },
        "calibration": { "translation_only_tr": tr, "trans_cont_cont": cont, "note": note },
    });
    let mut out = Output::new(&c.out, "select", s.seed, &cfg)?;
    out.record_world(&world)?;
    out.write("selection.csv", csv.as_bytes())?;
    out.write("selection.json", format!("{}\n", serde_json::to_string_pretty(&summary).expect("json")).as_bytes())?;
    out.finish()
}

fn cmd_report(inputs: &[PathBuf], out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let mut ablation = Vec::new();
    let mut sweep = Vec::new();
    for dir in inputs {
        let m = Manifest::open(dir)
            .with_context(|| format!("refusing to report on {}: its manifest does not verify", dir.display()))?;
        for (file, rows) in [("ablation.csv", &mut ablation), ("sweep.csv", &mut sweep)] {
            if m.files.contains_key(file) {
                let text = std::fs::read_to_string(dir.join(file)).with_context(|| format!("reading {file}"))?;
                rows.extend(parse_results_csv(&text).map_err(|e| CliError::Runtime(e.into()))?);
            }
        }
    }
    if ablation.is_empty() && sweep.is_empty() {
        return Err(CliError::Usage(anyhow!("no ablation.csv or sweep.csv among the inputs")));
    }
    let inputs_json: Vec<String> = inputs.iter().map(|p| p.display().to_string()).collect();
    let cfg = serde_json::json!({ "inputs": inputs_json });
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut manifest = Manifest::new("report", seed.unwrap_or(0), &cfg);
    for (rows, by_m) in [(&ablation, false), (&sweep, true)] {
        if rows.is_empty() {
            continue;
        }
        for (name, bytes) in figure_files(rows, by_m) {
            manifest.write_file(out_dir, &name, &bytes).map_err(|e| CliError::Runtime(e.into()))?;
        }
    }
    for dir in inputs {
        let bytes = std::fs::read(dir.join(MANIFEST_FILE)).context("input manifest")?;
        manifest.asset_hashes.insert(format!("input:{}", dir.display()), sha256_hex(&bytes));
    }
    manifest.save(out_dir).map_err(|e| CliError::Runtime(e.into()))
}
