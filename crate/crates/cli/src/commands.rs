use std::path::{Path, PathBuf};

use serde::Serialize;
use vocspec::analysis::{
    abs_cam, dunn_posthoc, evaluate, kruskal_wallis, mean_se, Adjustment, Evaluated, MetricReport, PValueMethod,
    Score, SignificanceMatrix,
};
use vocspec::augmentation::{train_enhanced, AugmentMode, FoldCvae, SweepReport, SWEEP_GRID};
use vocspec::checkpoint::{load_cvae, load_discriminator, save_cvae, save_discriminator, spectra_digest, TrainedOn};
use vocspec::cvae::{train_cvae_fold, CvaeArch};
use vocspec::dataset::io::{atomic_write, parse_raw_csv, read_spectra_csv, write_json, write_spectra_csv};
use vocspec::dataset::{build_corpus, Corpus, CorpusRecipe, Spectrum, VocClass, N_FOLDS};
use vocspec::discriminator::{train_kfold, DiscriminatorArch, DiscriminatorModel, FoldOutcome};
use vocspec::seed::{rng_for, stream};
use vocspec::train::{History, TrainConfig};
use vocspec::{par, Error};

use crate::error::{usage, CliResult};
use crate::settings::Settings;
use crate::{AugmentSweep, Command, Compare, Evaluate, GenData, Generate, Ingest, SaliencyArgs, Train, TrainFlags};

const DEFAULT_ALPHA: f64 = 0.05;

pub fn run(command: &Command, seed: u64, config: Option<&Path>) -> CliResult<()> {
    let name = match command {
        Command::GenData(_) => "gen-data",
        Command::Ingest(_) => "ingest",
        Command::Train(_) => "train",
        Command::AugmentSweep(_) => "augment-sweep",
        Command::Generate(_) => "generate",
        Command::Evaluate(_) => "evaluate",
        Command::Saliency(_) => "saliency",
        Command::Compare(_) => "compare",
    };
    let s = Settings::load(config, name)?;
    match command {
        Command::GenData(a) => gen_data(a, seed, &s),
        Command::Ingest(a) => ingest(a, &s),
        Command::Train(a) => train(a, seed, &s),
        Command::AugmentSweep(a) => augment_sweep(a, seed, &s),
        Command::Generate(a) => generate(a, seed, &s),
        Command::Evaluate(a) => evaluate_cmd(a, &s),
        Command::Saliency(a) => saliency(a, &s),
        Command::Compare(a) => compare(a, &s),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(atomic_write(path, text.as_bytes())?)
}

fn fold_path(dir: &Path, fold: usize) -> PathBuf {
    dir.join(format!("fold{fold}.ckpt"))
}

fn recipe_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.recipe.json"))
}

fn gen_data(a: &GenData, seed: u64, s: &Settings) -> CliResult<()> {
    let preset: String = s.or("preset", a.preset.clone(), "balanced".into())?;
    let out = s.path("out", a.out.clone())?;
    let recipe = match preset.as_str() {
        "balanced" => CorpusRecipe::balanced(s.or("per_class", a.per_class, 100)?, seed),
        "starved" => {
            let max = s.or("max_count", a.max_count, 150)?;
            if max < 50 {
                return Err(usage("--max-count must be at least 50 so the starved classes keep one spectrum"));
            }
            CorpusRecipe::starved_scaled(max, seed)
        }
        other => return Err(usage(format!("unknown preset `{other}`; expected balanced or starved"))),
    };
    let corpus = build_corpus(&recipe)?;
    write_spectra_csv(&out, corpus.spectra(), false)?;
    write_json(&recipe_path(&out), &recipe)?;
    eprintln!("wrote {} spectra to {}", corpus.len(), out.display());
    Ok(())
}

fn ingest(a: &Ingest, s: &Settings) -> CliResult<()> {
    let input = s.path("input", a.input.clone())?;
    let out = s.path("out", a.out.clone())?;
    let v1 = s.or("chamber_volume", a.chamber_volume, 0.6)?;
    let v2 = s.or("cell_volume", a.cell_volume, 2.0)?;
    let text = std::fs::read_to_string(&input).map_err(|e| Error::Io {
        path: input.clone(),
        source: e,
    })?;
    let spectra = parse_raw_csv(&input, &text, v1, v2)?;
    write_spectra_csv(&out, &spectra, false)?;
    eprintln!("ingested {} spectra into {}", spectra.len(), out.display());
    Ok(())
}

fn train_config(f: &TrainFlags, seed: u64, s: &Settings) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    let config = TrainConfig {
        epochs: s.or("epochs", f.epochs, d.epochs)?,
        batch_size: s.or("batch_size", f.batch_size, d.batch_size)?,
        learning_rate: s.or("learning_rate", f.learning_rate, d.learning_rate)?,
        patience: s.or("patience", f.patience, d.patience)?,
        seed,
        ..d
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn load_corpus(path: &Path, seed: u64) -> CliResult<Corpus> {
    Ok(Corpus::new(read_spectra_csv(path)?, seed)?)
}

#[derive(Serialize)]
struct FoldSummary {
    fold: usize,
    epochs_run: usize,
    best_epoch: usize,
    best_validation_loss: f64,
}

impl FoldSummary {
    fn new(fold: usize, h: &History) -> Self {
        let best_validation_loss = match h.best_epoch {
            0 => h.initial_validation_loss,
            e => h.epochs[e - 1].validation_loss,
        };
        FoldSummary {
            fold,
            epochs_run: h.epochs.len(),
            best_epoch: h.best_epoch,
            best_validation_loss,
        }
    }
}

#[derive(Serialize)]
struct TrainReport<'a> {
    model: &'a str,
    train_config: &'a TrainConfig,
    checkpoints: Vec<String>,
    folds: Vec<FoldSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    validation_loss: Option<Score>,
}

fn trained_on(corpus: &Corpus, fold: usize) -> CliResult<TrainedOn> {
    let split = corpus.kfold_split(fold)?;
    Ok(TrainedOn {
        fold: Some(fold),
        train_digest: spectra_digest(corpus.select(&split.train)),
    })
}

fn validation_metrics(corpus: &Corpus, outcomes: &[FoldOutcome]) -> CliResult<MetricReport> {
    let folds: Vec<Vec<Evaluated>> = outcomes
        .iter()
        .map(|o| evaluate(&o.model, &corpus.select(&o.validation)))
        .collect::<Result<_, _>>()?;
    Ok(MetricReport::from_folds(&folds)?)
}

fn save_fold_models(dir: &Path, corpus: &Corpus, outcomes: &[FoldOutcome]) -> CliResult<Vec<String>> {
    let mut names = Vec::new();
    for o in outcomes {
        let path = fold_path(dir, o.fold);
        save_discriminator(&path, &o.model, Some(trained_on(corpus, o.fold)?))?;
        names.push(file_name(&path));
    }
    Ok(names)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn train(a: &Train, seed: u64, s: &Settings) -> CliResult<()> {
    let model: String = s.or("model", a.model.clone(), "basic".into())?;
    let data = s.path("data", a.data.clone())?;
    let out_dir = s.path("out_dir", a.out_dir.clone())?;
    let config = train_config(&a.train, seed, s)?;
    let corpus = load_corpus(&data, seed)?;
    match model.as_str() {
        "basic" => {
            let outcomes = train_kfold(&corpus, &DiscriminatorArch::standard(), &config)?;
            let checkpoints = save_fold_models(&out_dir, &corpus, &outcomes)?;
            let metrics = validation_metrics(&corpus, &outcomes)?;
            write_text(&out_dir.join("report.csv"), &metrics.to_csv())?;
            let report = TrainReport {
                model: "basic",
                train_config: &config,
                checkpoints,
                folds: outcomes.iter().map(|o| FoldSummary::new(o.fold, &o.history)).collect(),
                metrics: Some(metrics),
                validation_loss: None,
            };
            write_json(&out_dir.join("report.json"), &report)?;
            if let Some(m) = &report.metrics {
                eprintln!("accuracy {:.4} ± {:.4}, mse {:.3} ± {:.3}", m.accuracy.mean, m.accuracy.se, m.mse.mean, m.mse.se);
            }
        }
        "cvae" => {
            let arch = CvaeArch::standard();
            let folds = par::map_indexed(N_FOLDS, |f| train_cvae_fold(&corpus, f, &arch, &config))
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?;
            let mut checkpoints = Vec::new();
            let mut rows: Vec<(usize, usize, &Spectrum, Vec<f64>)> = Vec::new();
            for f in &folds {
                let path = fold_path(&out_dir, f.fold);
                save_cvae(&path, &f.model, Some(f.trained_on(&corpus)))?;
                checkpoints.push(file_name(&path));
                let val = corpus.kfold_split(f.fold)?.validation;
                let z = f.model.embed(&corpus.select(&val))?;
                rows.extend(val.iter().zip(z).map(|(&i, z)| (i, f.fold, &corpus.spectra()[i], z)));
            }
            rows.sort_by_key(|r| r.0);
            write_text(&out_dir.join("embeddings.csv"), &embeddings_csv(&rows, arch.latent))?;
            let summaries: Vec<FoldSummary> = folds.iter().map(|f| FoldSummary::new(f.fold, &f.history)).collect();
            let losses: Vec<f64> = summaries.iter().map(|f| f.best_validation_loss).collect();
            let report = TrainReport {
                model: "cvae",
                train_config: &config,
                checkpoints,
                folds: summaries,
                metrics: None,
                validation_loss: mean_se(&losses),
            };
            write_json(&out_dir.join("report.json"), &report)?;
        }
        other => return Err(usage(format!("unknown model `{other}`; expected basic or cvae"))),
    }
    Ok(())
}

fn embeddings_csv(rows: &[(usize, usize, &Spectrum, Vec<f64>)], latent: usize) -> String {
    let mut out = String::from("index,fold,class,concentration_ppm");
    for k in 0..latent {
        out.push_str(&format!(",z{k}"));
    }
    out.push('\n');
    for (i, fold, s, z) in rows {
        out.push_str(&format!("{i},{fold},{},{}", s.class().name(), s.concentration()));
        for v in z {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct SweepSummaryFile<'a> {
    mode: AugmentMode,
    selected_count: usize,
    selected_checkpoints: Vec<String>,
    train_config: &'a TrainConfig,
    sweep: &'a SweepReport,
    metrics: MetricReport,
}

fn augment_sweep(a: &AugmentSweep, seed: u64, s: &Settings) -> CliResult<()> {
    let mode: String = s.required("mode", a.mode.clone())?;
    let mode: AugmentMode = mode.parse().map_err(|e: Error| usage(e.to_string()))?;
    let data = s.path("data", a.data.clone())?;
    let out_dir = s.path("out_dir", a.out_dir.clone())?;
    let grid: Vec<usize> = s.or("grid", a.grid.clone(), SWEEP_GRID.to_vec())?;
    if grid.is_empty() || grid.iter().any(|g| !SWEEP_GRID.contains(g)) {
        return Err(usage(format!("--grid values must come from {SWEEP_GRID:?}")));
    }
    let config = train_config(&a.train, seed, s)?;
    let corpus = load_corpus(&data, seed)?;
    let loaded = match mode {
        AugmentMode::Oversample => None,
        AugmentMode::Synthetic => Some(load_fold_cvaes(s.get("cvae_dir", a.cvae_dir.clone())?, &data)?),
    };
    let fold_cvaes: Option<Vec<FoldCvae<'_>>> = loaded.as_ref().map(|v| {
        v.iter()
            .map(|(m, t)| FoldCvae {
                model: m,
                trained_on: t,
            })
            .collect()
    });
    let outcome = train_enhanced(&corpus, mode, fold_cvaes.as_deref(), &grid, &DiscriminatorArch::standard(), &config)?;
    let selected_checkpoints = save_fold_models(&out_dir, &corpus, &outcome.models)?;
    write_text(&out_dir.join("sweep.csv"), &outcome.report.to_csv())?;
    let summary = SweepSummaryFile {
        mode,
        selected_count: outcome.report.selected_count,
        selected_checkpoints,
        train_config: &config,
        sweep: &outcome.report,
        metrics: validation_metrics(&corpus, &outcome.models)?,
    };
    write_json(&out_dir.join("sweep.json"), &summary)?;
    eprintln!("{} sweep selected {} spectra per class", mode.name(), summary.selected_count);
    Ok(())
}

fn load_fold_cvaes(dir: Option<PathBuf>, data: &Path) -> CliResult<Vec<(vocspec::cvae::CvaeModel, TrainedOn)>> {
    let remedy = format!(
        "train them first with `vocspec train --model cvae --data {} --out-dir <dir> --seed <same seed>` and pass `--cvae-dir <dir>`",
        data.display()
    );
    let Some(dir) = dir else {
        return Err(Error::Config(format!("synthetic augmentation needs per-fold CVAE checkpoints; {remedy}")).into());
    };
    let mut out = Vec::with_capacity(N_FOLDS);
    for fold in 0..N_FOLDS {
        let path = fold_path(&dir, fold);
        if !path.exists() {
            return Err(Error::Config(format!("missing CVAE checkpoint {}; {remedy}", path.display())).into());
        }
        let (model, header) = load_cvae(&path)?;
        let t = header
            .trained_on
            .ok_or_else(|| Error::Config(format!("{} does not record its training split; {remedy}", path.display())))?;
        out.push((model, t));
    }
    Ok(out)
}

fn generate(a: &Generate, seed: u64, s: &Settings) -> CliResult<()> {
    let ckpt = s.path("checkpoint", a.checkpoint.clone())?;
    let class: String = s.required("class", a.class.clone())?;
    let class: VocClass = class.parse().map_err(|e: Error| usage(e.to_string()))?;
    let concentration: f64 = s.or("concentration", a.concentration, 0.0)?;
    let n: usize = s.required("n", a.n)?;
    if n == 0 {
        return Err(usage("--n must be positive"));
    }
    let out = s.path("out", a.out.clone())?;
    let (model, _) = load_cvae(&ckpt)?;
    let mut rng = rng_for(seed, &[stream::GENERATE]);
    let spectra = model.generate(class, concentration, n, &mut rng)?;
    write_spectra_csv(&out, &spectra, true)?;
    Ok(())
}

fn discover_checkpoints(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let n = file_name(p);
            n.starts_with("fold") && n.ends_with(".ckpt")
        })
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(Error::Config(format!("no fold*.ckpt files in {}", dir.display())).into());
    }
    Ok(found)
}

#[derive(Serialize)]
struct EvalReport {
    data: String,
    checkpoints: Vec<String>,
    metrics: MetricReport,
}

fn evaluate_cmd(a: &Evaluate, s: &Settings) -> CliResult<()> {
    let checkpoints = match (s.get("checkpoints", a.checkpoints.clone())?, s.get("model_dir", a.model_dir.clone())?) {
        (Some(c), None) if !c.is_empty() => c,
        (None, Some(dir)) => discover_checkpoints(&dir)?,
        _ => return Err(usage("pass exactly one of --checkpoints or --model-dir")),
    };
    let data = s.path("data", a.data.clone())?;
    let out_dir = s.path("out_dir", a.out_dir.clone())?;
    let spectra = read_spectra_csv(&data)?;
    let refs: Vec<&Spectrum> = spectra.iter().collect();
    let models: Vec<DiscriminatorModel> = checkpoints
        .iter()
        .map(|p| load_discriminator(p).map(|(m, _)| m))
        .collect::<Result<_, _>>()?;
    let folds: Vec<Vec<Evaluated>> = models.iter().map(|m| evaluate(m, &refs)).collect::<Result<_, _>>()?;
    let metrics = MetricReport::from_folds(&folds)?;
    write_text(&out_dir.join("predictions.csv"), &predictions_csv(&spectra, &folds))?;
    write_text(&out_dir.join("report.csv"), &metrics.to_csv())?;
    let report = EvalReport {
        data: data.display().to_string(),
        checkpoints: checkpoints.iter().map(|p| p.display().to_string()).collect(),
        metrics,
    };
    write_json(&out_dir.join("report.json"), &report)?;
    eprintln!(
        "accuracy {:.4} ± {:.4}, mse {:.3} ± {:.3}",
        report.metrics.accuracy.mean, report.metrics.accuracy.se, report.metrics.mse.mean, report.metrics.mse.se
    );
    Ok(())
}

fn predictions_csv(spectra: &[Spectrum], folds: &[Vec<Evaluated>]) -> String {
    let mut out = String::from("row,class,concentration_ppm");
    for k in 0..folds.len() {
        out.push_str(&format!(",model{k}_class,model{k}_concentration_ppm"));
    }
    out.push('\n');
    for (i, s) in spectra.iter().enumerate() {
        out.push_str(&format!("{i},{},{}", s.class().name(), s.concentration()));
        for f in folds {
            let p = &f[i].prediction;
            out.push_str(&format!(",{},{}", p.predicted_class.name(), p.predicted_concentration));
        }
        out.push('\n');
    }
    out
}

fn saliency(a: &SaliencyArgs, s: &Settings) -> CliResult<()> {
    let ckpt = s.path("checkpoint", a.checkpoint.clone())?;
    let data = s.path("data", a.data.clone())?;
    let index: usize = s.required("index", a.index)?;
    let out = s.path("out", a.out.clone())?;
    let (model, _) = load_discriminator(&ckpt)?;
    let spectra = read_spectra_csv(&data)?;
    let spectrum = spectra.get(index).ok_or_else(|| {
        Error::Config(format!("row {index} out of range: {} has {} spectra", data.display(), spectra.len()))
    })?;
    let map = abs_cam(&model, spectrum.absorbance())?;
    if map.degenerate {
        eprintln!("warning: saliency map is degenerate (all weighted activations vanish)");
    }
    write_text(&out, &map.to_csv())
}

#[derive(Serialize)]
struct GroupEntry {
    name: String,
    report: String,
    fold_mses: Vec<f64>,
}

#[derive(Serialize)]
struct Omnibus {
    test: &'static str,
    statistic: &'static str,
    note: &'static str,
    h: f64,
    p: f64,
    df: usize,
    exact: bool,
    groups: Vec<GroupEntry>,
}

#[derive(serde::Deserialize)]
struct ReportMetrics {
    metrics: MetricReport,
}

fn default_names(reports: &[PathBuf]) -> Vec<String> {
    let base: Vec<String> = reports
        .iter()
        .map(|p| p.parent().map(file_name).filter(|n| !n.is_empty()).unwrap_or_else(|| file_name(p)))
        .collect();
    let unique = base.iter().enumerate().all(|(i, n)| !base[..i].contains(n));
    if unique {
        base
    } else {
        base.iter().enumerate().map(|(i, n)| format!("{n}#{i}")).collect()
    }
}

fn compare(a: &Compare, s: &Settings) -> CliResult<()> {
    let reports: Vec<PathBuf> = s.required("reports", a.reports.clone())?;
    if reports.len() < 2 {
        return Err(usage("--reports needs at least two evaluation reports"));
    }
    let names = s.or("names", a.names.clone(), default_names(&reports))?;
    if names.len() != reports.len() {
        return Err(usage("--names needs one name per report"));
    }
    let alpha = s.or("alpha", a.alpha, DEFAULT_ALPHA)?;
    let adjustment: String = s.or("adjustment", a.adjustment.clone(), "none".into())?;
    let adjustment = match adjustment.as_str() {
        "none" => Adjustment::None,
        "bonferroni" => Adjustment::Bonferroni,
        "holm" => Adjustment::Holm,
        other => return Err(usage(format!("unknown adjustment `{other}`; expected none, bonferroni or holm"))),
    };
    let out_dir = s.path("out_dir", a.out_dir.clone())?;
    let groups: Vec<Vec<f64>> = reports
        .iter()
        .map(|p| vocspec::dataset::io::read_json::<ReportMetrics>(p).map(|r| r.metrics.fold_mses()))
        .collect::<Result<_, _>>()?;
    let kw = kruskal_wallis(&groups, PValueMethod::Auto)?;
    let matrix: SignificanceMatrix = dunn_posthoc(&groups, &names, alpha, adjustment)?;
    let omnibus = Omnibus {
        test: "kruskal_wallis",
        statistic: "H",
        note: "rank-based H statistic; some sources label it F",
        h: kw.h,
        p: kw.p,
        df: kw.df,
        exact: kw.exact,
        groups: names
            .iter()
            .zip(&reports)
            .zip(groups)
            .map(|((n, r), g)| GroupEntry {
                name: n.clone(),
                report: r.display().to_string(),
                fold_mses: g,
            })
            .collect(),
    };
    write_json(&out_dir.join("omnibus.json"), &omnibus)?;
    write_json(&out_dir.join("significance.json"), &matrix)?;
    write_text(&out_dir.join("significance.csv"), &matrix.pairs_csv())?;
    write_text(&out_dir.join("significance_p.csv"), &matrix.p_csv())?;
    eprintln!("H = {:.4}, p = {:.4}", kw.h, kw.p);
    Ok(())
}
