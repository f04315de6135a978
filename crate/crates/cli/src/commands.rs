use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};

use ingnn::dataio::{self, DatasetBundle, SplitPolicy, Table};
use ingnn::model::{MlpModel, ModelInput, NodeClassifier};
use ingnn::rng::derive_seed;
use ingnn::synth::{gen_homophily_graph, FeatureSource, GaussianClassSpec, SynSpec};
use ingnn::theory::{epsilon_curve, monte_carlo_error, uniform_grid, McSource};
use ingnn::trainer::{
    ablation_suite, bilevel_train_model, evaluate, full_grid, grid_search, mean_std, mlp_baseline_model, Ablation,
    Task,
};
use ingnn::wl::{rook_graph_4x4, shrikhande_graph, wl_demo as run_wl_demo};
use ingnn::{DataSplit, IngnnModel, RunRecord, Schedule, TrainConfig};

use crate::{
    AblationArgs, Common, EvalArgs, GridArgs, GridKind, ImportanceArgs, McKind, ModelFlags, ModelKind, Pair,
    SynthArgs, TheoryArgs, TrainArgs, WlDemoArgs,
};

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| std::env::var_os("INGNN_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("ingnn-out"));
    fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

/// Defaults, then the `--config` file, then flags.
fn resolve_config(flags: &ModelFlags) -> Result<(TrainConfig, Schedule)> {
    let mut config = TrainConfig::default();
    let mut schedule = Schedule::default();
    let mut pairs = Vec::new();
    if let Some(path) = &flags.config {
        pairs = dataio::read_kv_file(path)?;
    }
    pairs.extend(flags.pairs().into_iter().map(|(k, v)| (k.to_string(), v.to_string())));
    for (k, v) in &pairs {
        if !(schedule.apply_kv(k, v)? || config.apply_kv(k, v)?) {
            bail!("unknown config key {k:?}");
        }
    }
    config.validate()?;
    schedule.validate()?;
    Ok((config, schedule))
}

fn load(dir: &Path) -> Result<DatasetBundle> {
    dataio::load_bundle(dir).with_context(|| format!("cannot load dataset bundle {}", dir.display()))
}

/// The stored split `index`, or one sampled under `policy` when the
/// bundle has none.
fn split_for(bundle: &DatasetBundle, policy: &str, index: usize, seed: u64) -> Result<DataSplit> {
    if !bundle.splits.is_empty() {
        return bundle.splits.get(index).cloned().with_context(|| {
            format!("{} has {} stored splits; index {index} requested", bundle.name, bundle.splits.len())
        });
    }
    let policy: SplitPolicy = policy.parse().map_err(anyhow::Error::msg)?;
    Ok(dataio::sample_splits(&bundle.labels, policy, derive_seed(seed, index as u64))?)
}

fn task<'a>(b: &'a DatasetBundle, split: &'a DataSplit) -> Task<'a> {
    Task {
        graph: &b.graph,
        features: &b.features,
        labels: &b.labels,
        split,
    }
}

fn fmt_f(x: f64) -> String {
    x.to_string()
}

pub fn train(args: TrainArgs) -> Result<()> {
    let (config, schedule) = resolve_config(&args.flags)?;
    let bundle = load(&args.data)?;
    let split = split_for(&bundle, &args.split.split_policy, args.split.split_index, args.common.seed)?;
    let out = out_dir(&args.common)?;
    let seed = args.common.seed;
    let (record, tensors) = match args.model {
        ModelKind::Ingnn => {
            let (r, m) = bilevel_train_model(&bundle.graph, &bundle.features, &bundle.labels, &split, &config, &schedule, seed)?;
            (r, m.named_tensors())
        }
        ModelKind::Mlp => {
            let (r, m) = mlp_baseline_model(&bundle.features, &bundle.labels, &split, &config, &schedule, seed)?;
            (r, m.named_tensors())
        }
    };
    dataio::export_run(&record, &out.join("runrecord.json"))?;
    dataio::export_csv(&dataio::metrics_table(&record), &out.join("metrics.csv"))?;
    dataio::save_checkpoint(&tensors, &out.join("checkpoint.bin"))?;
    let mut kv = config.to_kv();
    kv.extend(schedule.to_kv());
    dataio::write_kv_file(&kv, &out.join("config.kv"))?;
    println!(
        "{} on {}: best epoch {} (valid acc {:.4}), {} epochs",
        record.model,
        bundle.name,
        record.best_epoch,
        record.best_valid_acc,
        record.epochs.len()
    );
    if let Some([e, a, s]) = record.importance {
        println!("fusion weights {:?}; importance ego {e:.4} agg {a:.4} strc {s:.4}", record.fusion_weights);
    }
    println!("test accuracy: {:.4}", record.test_acc);
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let out = out_dir(&args.common)?;
    let run = args.run.clone().unwrap_or_else(|| out.clone());
    let record: RunRecord = dataio::load_run(&run.join("runrecord.json"))?;
    let tensors = dataio::load_checkpoint(&run.join("checkpoint.bin"))?;
    let bundle = load(&args.data)?;
    let split = split_for(&bundle, &args.split.split_policy, args.split.split_index, args.common.seed)?;
    let (n, d, c) = (bundle.num_nodes(), bundle.features.cols(), bundle.labels.num_classes());
    let config = &record.config;
    let mut table = Table::new(["split", "accuracy"]);
    let mut score = |name: &str, acc: f64| {
        println!("{name} accuracy: {acc:.4}");
        table.push(vec![name.to_string(), fmt_f(acc)]);
    };
    if record.model == "mlp" {
        let mut model = MlpModel::new(d, config.model.hidden, c, config.model.dropout, record.seed)?;
        model.load_named_tensors(&tensors)?;
        let mut mc = config.model.clone();
        mc.self_loops = false;
        let input = ModelInput::new(&ingnn::Graph::empty(n), &bundle.features, &mc)?;
        for (name, nodes) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
            score(name, evaluate(&mut model, &input, &bundle.labels, nodes)?);
        }
    } else {
        let mut model = IngnnModel::new(config.model.clone(), n, d, c, record.seed)?;
        model.load_named_tensors(&tensors)?;
        let input = ModelInput::new(&bundle.graph, &bundle.features, &config.model)?;
        for (name, nodes) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
            score(name, evaluate(&mut model, &input, &bundle.labels, nodes)?);
        }
    }
    dataio::export_csv(&table, &out.join("eval.csv"))?;
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let hs: Vec<f64> = match args.h {
        Some(h) => {
            ensure!((0.0..=1.0).contains(&h), "--h must lie in [0, 1], got {h}");
            vec![h]
        }
        None => (0..=10).map(|k| k as f64 / 10.0).collect(),
    };
    let out = out_dir(&args.common)?;
    for h in hs {
        let spec = SynSpec {
            num_nodes: args.nodes,
            num_classes: args.classes,
            homophily: h,
            avg_degree: args.avg_degree,
            features: FeatureSource::GaussianPool {
                dim: args.dim,
                separation: args.separation,
                noise: args.noise,
                pool_size: 2000,
            },
            seed: args.common.seed,
        };
        let g = gen_homophily_graph(&spec)?;
        let realized = g.realized_homophily;
        let name = format!("syn-h{h}");
        let mut bundle = DatasetBundle::from_syn(name.clone(), g);
        for i in 0..args.num_splits {
            bundle.splits.push(dataio::sample_splits(
                &bundle.labels,
                SplitPolicy::FRACTIONAL,
                derive_seed(args.common.seed, i as u64),
            )?);
        }
        let dir = out.join(&name);
        dataio::save_bundle(&bundle, &dir, false)?;
        dataio::load_bundle(&dir).context("written bundle does not reload")?;
        println!("{name}: {} edges, homophily {realized:.4}", bundle.graph.num_edges());
    }
    Ok(())
}

pub fn wl_demo(args: WlDemoArgs) -> Result<()> {
    let rook = rook_graph_4x4();
    let (g2, names) = match args.pair {
        Pair::RookShrikhande => (shrikhande_graph(), ["rook 4x4", "Shrikhande"]),
        Pair::SelfPair => (rook_graph_4x4(), ["rook 4x4", "rook 4x4"]),
    };
    let report = run_wl_demo(&rook, &g2)?;
    for (name, srg) in names.iter().zip(&report.srg) {
        match srg {
            Some(p) => println!(
                "{name}: strongly regular ({}, {}, {}, {})",
                p.v,
                p.k,
                p.lambda,
                p.mu.map_or("-".to_string(), |m| m.to_string())
            ),
            None => println!("{name}: not strongly regular"),
        }
    }
    println!(
        "1-WL: {}",
        if report.wl1_distinguishes { "distinguishes" } else { "does not distinguish" }
    );
    for (name, s) in names.iter().zip(&report.neighborhoods) {
        println!(
            "{name} neighborhood of node 0: {} nodes, {} edges, {} components, degrees {:?}",
            s.nodes, s.edges, s.components, s.degree_sequence
        );
    }
    println!(
        "neighborhood subgraphs {}",
        if report.neighborhoods_isomorphic { "isomorphic" } else { "non-isomorphic" }
    );
    println!("verdict: {}", report.verdict());
    let mut json = serde_json::to_value(&report)?;
    json["verdict"] = report.verdict().into();
    let path = out_dir(&args.common)?.join("wl_demo.json");
    fs::write(&path, serde_json::to_string_pretty(&json)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn theory(args: TheoryArgs) -> Result<()> {
    ensure!(args.steps > 0, "--steps must be positive");
    let spec = GaussianClassSpec {
        mu1: args.mu1,
        sigma1: args.sigma1,
        mu2: args.mu2,
        sigma2: args.sigma2,
        degree: args.degree,
        homophily: 0.5,
    };
    spec.validate()?;
    let grid = uniform_grid(args.steps);
    let curve = epsilon_curve(&spec, &grid)?;
    let mc = match args.monte_carlo {
        None => None,
        Some(n) => {
            let source = match args.mc_source {
                McKind::Aggregated => McSource::AggregatedGaussian,
                McKind::Graph => McSource::Graph,
            };
            let mut out = Vec::with_capacity(grid.len());
            for (i, &h) in grid.iter().enumerate() {
                let s = GaussianClassSpec { homophily: h, ..spec };
                out.push(monte_carlo_error(&s, n, source, derive_seed(args.common.seed, i as u64))?);
            }
            Some(out)
        }
    };
    let out = out_dir(&args.common)?;
    dataio::export_csv(&dataio::epsilon_curve_table(&curve, mc.as_deref()), &out.join("theory.csv"))?;
    println!("eps_raw = {:.6}", curve.eps_raw);
    let show = |x: Option<f64>| x.map_or("none".to_string(), |h| format!("{h:.6}"));
    println!("H_l = {}, H_u = {}", show(curve.h_lower), show(curve.h_upper));
    match curve.crossing_interval() {
        Some((lo, hi)) => println!("aggregation hurts for h in ({lo:.6}, {hi:.6})"),
        None => println!("no crossing interval"),
    }
    if let Some(mc) = &mc {
        // compared at the realized homophily, which moves only under graph sampling
        let mut worst: f64 = 0.0;
        for m in mc {
            let analytic = epsilon_curve(&spec, &[m.homophily])?.eps_agg[0];
            if m.stderr > 0.0 {
                worst = worst.max(((m.eps - analytic) / m.stderr).abs());
            }
        }
        println!("Monte-Carlo: largest deviation {worst:.2} standard errors");
    }
    let summary = serde_json::json!({
        "eps_raw": curve.eps_raw,
        "h_lower": curve.h_lower,
        "h_upper": curve.h_upper,
    });
    fs::write(out.join("crossing.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

pub fn ablation(args: AblationArgs) -> Result<()> {
    ensure!(args.seeds > 0, "--seeds must be positive");
    let (config, schedule) = resolve_config(&args.flags)?;
    let bundle = load(&args.data)?;
    let split = split_for(&bundle, &args.split.split_policy, args.split.split_index, args.common.seed)?;
    let mut accs = vec![Vec::new(); Ablation::ALL.len()];
    for s in 0..args.seeds {
        let seed = if args.seeds == 1 { args.common.seed } else { derive_seed(args.common.seed, s as u64) };
        for (i, row) in ablation_suite(&task(&bundle, &split), &config, &schedule, seed)?.into_iter().enumerate() {
            accs[i].push(row.record.test_acc);
        }
    }
    let base = mean_std(&accs[0]).0;
    let mut table = Table::new(["variant", "mean_test_acc", "std_test_acc", "delta"]);
    println!("{:<14} {:>8} {:>8} {:>8}", "variant", "acc", "std", "delta");
    for (variant, a) in Ablation::ALL.iter().zip(&accs) {
        let (mean, std) = mean_std(a);
        println!("{:<14} {mean:>8.4} {std:>8.4} {:>+8.4}", variant.name(), mean - base);
        table.push(vec![variant.name().into(), fmt_f(mean), fmt_f(std), fmt_f(mean - base)]);
    }
    dataio::export_csv(&table, &out_dir(&args.common)?.join("ablation.csv"))?;
    Ok(())
}

pub fn grid(args: GridArgs) -> Result<()> {
    ensure!(args.splits > 0, "--splits must be positive");
    let (config, schedule) = resolve_config(&args.flags)?;
    let bundle = load(&args.data)?;
    let splits = (0..args.splits)
        .map(|i| split_for(&bundle, &args.split_policy, i, args.common.seed))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<Task> = splits.iter().map(|s| task(&bundle, s)).collect();
    let grid = match args.grid {
        GridKind::Base => vec![config],
        GridKind::Full => full_grid(&config),
    };
    let result = grid_search(&tasks, &grid, &schedule, args.common.seed)?;
    let mut table = Table::new([
        "index",
        "hidden",
        "prop_steps",
        "adj_powers",
        "lr",
        "weight_decay",
        "row_normalize_features",
        "mean_valid_acc",
        "mean_test_acc",
        "std_test_acc",
    ]);
    for (i, r) in result.rows.iter().enumerate() {
        let c = &r.config;
        table.push(vec![
            i.to_string(),
            c.model.hidden.to_string(),
            c.model.prop_steps.to_string(),
            c.model.adj_powers.to_string(),
            fmt_f(c.lr),
            fmt_f(c.weight_decay),
            c.model.row_normalize_features.to_string(),
            fmt_f(r.mean_valid_acc),
            fmt_f(r.mean_test_acc),
            fmt_f(r.std_test_acc),
        ]);
    }
    let out = out_dir(&args.common)?;
    dataio::export_csv(&table, &out.join("grid.csv"))?;
    let mut kv = result.best.to_kv();
    kv.extend(schedule.to_kv());
    dataio::write_kv_file(&kv, &out.join("best.kv"))?;
    let best = &result.rows[result.best_index];
    println!(
        "{} configs; best #{}: valid {:.4}, test {:.4} ± {:.4}",
        result.rows.len(),
        result.best_index,
        best.mean_valid_acc,
        best.mean_test_acc,
        best.std_test_acc
    );
    Ok(())
}

pub fn importance(args: ImportanceArgs) -> Result<()> {
    ensure!(args.seeds > 0, "--seeds must be positive");
    let (config, schedule) = resolve_config(&args.flags)?;
    let mut table = Table::new(["dataset", "I_ego", "I_agg", "I_strc"]);
    for dir in &args.data {
        let bundle = load(dir)?;
        let split = split_for(&bundle, &args.split.split_policy, args.split.split_index, args.common.seed)?;
        let mut sum = [0.0; 3];
        for s in 0..args.seeds {
            let seed = if args.seeds == 1 { args.common.seed } else { derive_seed(args.common.seed, s as u64) };
            let (record, _) =
                bilevel_train_model(&bundle.graph, &bundle.features, &bundle.labels, &split, &config, &schedule, seed)?;
            let imp = record
                .importance
                .with_context(|| format!("{}: importance undefined (all fused branch outputs are zero)", bundle.name))?;
            for (acc, x) in sum.iter_mut().zip(imp) {
                *acc += x / args.seeds as f64;
            }
        }
        println!("{}: ego {:.4} agg {:.4} strc {:.4}", bundle.name, sum[0], sum[1], sum[2]);
        table.push(vec![bundle.name.clone(), fmt_f(sum[0]), fmt_f(sum[1]), fmt_f(sum[2])]);
    }
    dataio::export_csv(&table, &out_dir(&args.common)?.join("importance.csv"))?;
    Ok(())
}
