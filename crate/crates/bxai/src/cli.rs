//! Command-line interface.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use bxai_core::dsp::{self, HealthClass};
use bxai_core::eval::{self, Importances, JobOutcome};
use bxai_core::gradcam::{self, BandsByClass};
use bxai_core::library::{self, Algo};
use bxai_core::nn::{self, Model};
use bxai_core::{retrieval, synth};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{Config, GeometrySection, SynthSection};
use crate::error::{Error, Result};
use crate::formats::{self, Dataset};
use crate::{plot, report, runner};

#[derive(Debug, Parser)]
#[command(
    name = "bxai",
    version,
    about = "Bearing fault diagnosis on envelope order spectra, explained by Grad-CAM prediction bases"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Root seed for data generation, training and random removal [default: 42]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of order bins spanning orders 0 to 30 [default: 1536]
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    /// Relative half-width of the fault sub-bands, in (0, 0.2] [default: 0.05]
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Number of prediction basis samples per test sample [default: 4]
    #[arg(long = "top-k", global = true)]
    pub top_k: Option<usize>,
    /// Activation vector compared during retrieval [default: cam-sub]
    #[arg(long, global = true, value_enum)]
    pub algo: Option<AlgoArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    CamFull,
    CamSub,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::CamFull => Algo::CamFull,
            AlgoArg::CamSub => Algo::CamSub,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic spectra and write train.bxai, test.bxai and synth.json
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train the CNN; writes model.bxmw and history.csv
    Train {
        #[arg(long, value_name = "FILE")]
        train: PathBuf,
        /// Held-out set to report accuracy and a confusion matrix on
        #[arg(long, value_name = "FILE")]
        test: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Build the health library from the training set; writes library.bxhl
    BuildLibrary {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        train: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Retrieve prediction bases; writes report.jsonl and one SVG per sample
    Explain {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        library: PathBuf,
        /// Training set the library was built from (for plotting basis spectra)
        #[arg(long, value_name = "FILE")]
        train: PathBuf,
        #[arg(long, value_name = "FILE")]
        test: PathBuf,
        /// Comma-separated test sample ids [default: every test sample]
        #[arg(long, value_delimiter = ',')]
        ids: Vec<u32>,
        /// Plot only positive importance
        #[arg(long)]
        clamp: bool,
        /// Skip the SVG plots
        #[arg(long)]
        no_plots: bool,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Remove the most important training samples, re-train and compare with random removal
    EvalRemoval {
        /// Model the importance ranking is computed from
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        train: PathBuf,
        #[arg(long, value_name = "FILE")]
        test: PathBuf,
        /// Library of `model`; rebuilt when omitted
        #[arg(long, value_name = "FILE")]
        library: Option<PathBuf>,
        /// Re-trainings per method and fraction [default: 10]
        #[arg(long)]
        repeats: Option<usize>,
        /// Comma-separated removal fractions [default: 0.10,0.15,...,0.45]
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(common: &Common, command: &Command) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(b) = common.bins {
        cfg.spectrum.bins = b;
    }
    if let Some(e) = common.epsilon {
        cfg.explain.epsilon = e;
    }
    if let Some(k) = common.top_k {
        cfg.explain.top_k = k;
    }
    if let Some(a) = common.algo {
        cfg.explain.algo = Algo::from(a).name().to_string();
    }
    match command {
        Command::Explain { clamp, no_plots, .. } => {
            cfg.explain.clamp |= *clamp;
            cfg.explain.plots &= !*no_plots;
        }
        Command::EvalRemoval { repeats, fractions, .. } => {
            if let Some(r) = repeats {
                cfg.removal.repeats = *r;
            }
            if let Some(f) = fractions {
                cfg.removal.fractions = f.clone();
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve(&cli.common, &cli.command)?;
    match &cli.command {
        Command::Synth { out } => cmd_synth(&cfg, out),
        Command::Train { train, test, out } => cmd_train(&cfg, train, test.as_deref(), out),
        Command::BuildLibrary { model, train, out } => cmd_build_library(&cfg, model, train, out),
        Command::Explain {
            model,
            library,
            train,
            test,
            ids,
            out,
            ..
        } => cmd_explain(&cfg, model, library, train, test, ids, out),
        Command::EvalRemoval {
            model,
            train,
            test,
            library,
            out,
            ..
        } => cmd_eval_removal(&cfg, model, train, test, library.as_deref(), out),
    }
}

fn prepare_out(out: &Path, cfg: &Config) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    formats::write_file(&out.join("resolved_config.toml"), cfg.to_toml().as_bytes())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    formats::write_file(path, text.as_bytes())
}

#[derive(Serialize)]
struct SynthRecord<'a> {
    seed: u64,
    bins: usize,
    geometry: &'a GeometrySection,
    synth: &'a SynthSection,
    bpfo_order: f64,
    bpfi_order: f64,
    n_train: usize,
    n_test: usize,
}

pub fn cmd_synth(cfg: &Config, out: &Path) -> Result<()> {
    let sc = cfg.synth();
    let orders = dsp::compute_fault_orders(&sc.geometry)?;
    let grid = cfg.grid()?;
    prepare_out(out, cfg)?;
    let samples = synth::generate_dataset(&sc)?;
    let spectra = synth::to_spectra(&samples, sc.sample_rate, &grid)?;
    let labels: Vec<HealthClass> = samples.iter().map(|s| s.label).collect();
    let (tr, te) = synth::stratified_split(&labels, cfg.synth.train_fraction)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| spectra[i].clone()).collect::<Vec<_>>();
    let train = Dataset::new(grid, pick(&tr))?;
    let test = Dataset::new(grid, pick(&te))?;
    formats::save_dataset(&out.join("train.bxai"), &train)?;
    formats::save_dataset(&out.join("test.bxai"), &test)?;
    let record = SynthRecord {
        seed: cfg.seed,
        bins: grid.n_bins,
        geometry: &cfg.geometry,
        synth: &cfg.synth,
        bpfo_order: orders.bpfo,
        bpfi_order: orders.bpfi,
        n_train: train.samples.len(),
        n_test: test.samples.len(),
    };
    let json = serde_json::to_string_pretty(&record).expect("record serializes");
    write_text(&out.join("synth.json"), &(json + "\n"))?;
    log::info!(
        "wrote {} training and {} test spectra to {} (BPFO order {:.4}, BPFI order {:.4})",
        train.samples.len(),
        test.samples.len(),
        out.display(),
        orders.bpfo,
        orders.bpfi
    );
    Ok(())
}

pub fn cmd_train(cfg: &Config, train_path: &Path, test_path: Option<&Path>, out: &Path) -> Result<()> {
    let train = formats::load_dataset(train_path)?;
    let test = test_path.map(formats::load_dataset).transpose()?;
    if let Some(t) = &test {
        if t.grid != train.grid {
            return Err(Error::Usage("training and test sets use different order grids".into()));
        }
    }
    prepare_out(out, cfg)?;
    let model = Model::<f32>::new(cfg.arch(train.grid.n_bins), cfg.seed)?;
    let (model, history) = nn::train(model, &train.samples, &cfg.train())?;
    let fp = formats::save_model(&out.join("model.bxmw"), &model)?;
    write_text(&out.join("history.csv"), &report::history_csv(&history))?;
    log::info!("trained for {} epochs; model fingerprint {fp}", history.len());
    if let Some(test) = test {
        let (acc, loss) = nn::evaluate(&model, &test.samples)?;
        let cm = eval::confusion_matrix(&model, &test.samples)?;
        write_text(&out.join("confusion_test.csv"), &report::confusion_csv(&cm))?;
        println!("test accuracy {acc:.4} loss {loss:.4}");
    }
    Ok(())
}

fn check_grid(model: &Model<f32>, ds: &Dataset, what: &str) -> Result<()> {
    if ds.grid.n_bins != model.arch.input_len {
        return Err(Error::Usage(format!(
            "{what} has {} order bins but the model expects {}",
            ds.grid.n_bins, model.arch.input_len
        )));
    }
    Ok(())
}

pub fn cmd_build_library(cfg: &Config, model_path: &Path, train_path: &Path, out: &Path) -> Result<()> {
    let (model, fp) = formats::load_model(model_path)?;
    let train = formats::load_dataset(train_path)?;
    check_grid(&model, &train, "training set")?;
    prepare_out(out, cfg)?;
    let lib = library::build_library(&model, &train.samples, cfg.algo()?, cfg.explain.epsilon, fp)?;
    formats::save_library(&out.join("library.bxhl"), &lib)?;
    log::info!("health library holds {} entries", lib.len());
    Ok(())
}

fn bands_for(cfg: &Config, grid: &dsp::OrderGrid) -> Result<BandsByClass> {
    let orders = dsp::compute_fault_orders(&cfg.geometry())?;
    Ok(BandsByClass::new(&orders, cfg.explain.epsilon, grid)?)
}

pub fn cmd_explain(
    cfg: &Config,
    model_path: &Path,
    library_path: &Path,
    train_path: &Path,
    test_path: &Path,
    ids: &[u32],
    out: &Path,
) -> Result<()> {
    let (model, fp) = formats::load_model(model_path)?;
    let lib = formats::load_library(library_path, Some(&fp))?;
    let train = formats::load_dataset(train_path)?;
    let test = formats::load_dataset(test_path)?;
    check_grid(&model, &test, "test set")?;
    if lib.grid.n_bins != test.grid.n_bins {
        return Err(Error::Usage("library and test set use different order grids".into()));
    }
    let algo = cfg.algo()?;
    let bands = bands_for(cfg, &test.grid)?;
    let selected: Vec<&dsp::EnvelopeSpectrum> = if ids.is_empty() {
        test.samples.iter().collect()
    } else {
        ids.iter()
            .map(|&id| {
                test.find(id)
                    .ok_or_else(|| Error::Usage(format!("test set has no sample with id {id}")))
            })
            .collect::<Result<_>>()?
    };
    prepare_out(out, cfg)?;
    let mut lines = String::new();
    for spectrum in selected {
        let basis = retrieval::retrieve_basis(&model, &lib, spectrum, cfg.explain.top_k, algo, &bands)?;
        if basis.fallback {
            log::info!(
                "sample {}: predicted {} has no sub-bands; compared full vectors",
                spectrum.sample_id,
                basis.predicted
            );
        }
        lines.push_str(&report::basis_json(&basis));
        lines.push('\n');
        if cfg.explain.plots {
            let svg = explain_plot(cfg, &model, &lib, &train, spectrum, &basis, &bands)?;
            write_text(&out.join(format!("explain_{}.svg", spectrum.sample_id)), &svg)?;
        }
    }
    write_text(&out.join("report.jsonl"), &lines)
}

fn explain_plot(
    cfg: &Config,
    model: &Model<f32>,
    lib: &library::HealthLibrary,
    train: &Dataset,
    spectrum: &dsp::EnvelopeSpectrum,
    basis: &retrieval::PredictionBasis,
    bands: &BandsByClass,
) -> Result<String> {
    let test_importance = gradcam::full_vector(model, &spectrum.amplitudes, basis.predicted)?;
    let mut panels = vec![plot::ExplainPanel {
        title: format!(
            "test sample {} (predicted {}, p = {:.3}, {})",
            spectrum.sample_id,
            basis.predicted,
            basis.probabilities[basis.predicted.index()],
            basis.algo
        ),
        spectrum,
        importance: &test_importance,
    }];
    for (rank, b) in basis.basis.iter().enumerate() {
        let entry = lib
            .entries
            .iter()
            .find(|e| e.sample_id == b.entry_id)
            .expect("retrieved ids come from the library");
        let s = train.find(b.entry_id).ok_or_else(|| {
            Error::Usage(format!("training set has no sample {} from the library", b.entry_id))
        })?;
        panels.push(plot::ExplainPanel {
            title: format!("basis {}: training sample {} ({}), distance {:.4}", rank + 1, b.entry_id, b.class, b.distance),
            spectrum: s,
            importance: &entry.vector,
        });
    }
    Ok(plot::explain_svg(&panels, bands.sub_bands(basis.predicted), cfg.explain.clamp))
}

pub fn cmd_eval_removal(
    cfg: &Config,
    model_path: &Path,
    train_path: &Path,
    test_path: &Path,
    library_path: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let (model, fp) = formats::load_model(model_path)?;
    let train = formats::load_dataset(train_path)?;
    let test = formats::load_dataset(test_path)?;
    check_grid(&model, &train, "training set")?;
    check_grid(&model, &test, "test set")?;
    let lib = match library_path {
        Some(p) => formats::load_library(p, Some(&fp))?,
        None => library::build_library(&model, &train.samples, cfg.algo()?, cfg.explain.epsilon, fp)?,
    };
    let lib_ids: Vec<u32> = lib.entries.iter().map(|e| e.sample_id).collect();
    let train_ids: Vec<u32> = train.samples.iter().map(|s| s.sample_id).collect();
    if lib_ids != train_ids {
        return Err(Error::Usage("library entries do not match the training set".into()));
    }
    let bands = bands_for(cfg, &train.grid)?;
    let rc = cfg.removal(train.grid.n_bins)?;
    prepare_out(out, cfg)?;

    let importances = Importances::compute(&model, &lib, &test.samples, &bands)?;
    let mut imp_csv = String::from("sample_id,class,cam_full,cam_sub\n");
    for (i, s) in train.samples.iter().enumerate() {
        imp_csv.push_str(&format!(
            "{},{},{},{}\n",
            s.sample_id,
            s.label.map_or("", |c| c.name()),
            report::sig9(importances.cam_full[i]),
            report::sig9(importances.cam_sub[i])
        ));
    }
    write_text(&out.join("importance.csv"), &imp_csv)?;

    let jobs = eval::plan_removal(&rc)?;
    let pool = runner::pool()?;
    log::info!("running {} re-trainings on {} threads", jobs.len(), pool.current_num_threads());
    let outcomes = runner::run_jobs(&pool, &jobs, &rc, &train.samples, &test.samples, &importances);
    write_text(&out.join("removal.csv"), &report::removal_csv(&outcomes))?;

    let results = eval::summarize(&outcomes);
    let mut summary = String::from("method,fraction,mean_accuracy,std_accuracy,mean_loss,std_loss,failed\n");
    for r in &results {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method.map_or("baseline", |m| m.name()),
            report::sig9(r.fraction),
            report::sig9(r.mean_accuracy),
            report::sig9(r.std_accuracy),
            report::sig9(r.mean_loss),
            report::sig9(r.std_loss),
            r.failed()
        ));
    }
    write_text(&out.join("removal_summary.csv"), &summary)?;
    write_text(&out.join("removal.svg"), &plot::removal_svg(&results))?;
    write_confusions(&outcomes, out)?;

    let failed: usize = results.iter().map(|r| r.failed()).sum();
    if failed > 0 {
        log::warn!("{failed} re-trainings failed; they are recorded as NaN and excluded from the statistics");
    }
    Ok(())
}

/// Confusion matrices of the first successful repeat of the baseline and of
/// every method at fractions 0.20 and 0.40.
fn write_confusions(outcomes: &[JobOutcome], out: &Path) -> Result<()> {
    let mut targets: Vec<(Option<eval::Method>, f64)> = vec![(None, 0.0)];
    for o in outcomes {
        if let Some(m) = o.job.method {
            for f in [0.2, 0.4] {
                if (o.job.fraction - f).abs() < 1e-9 && !targets.contains(&(Some(m), f)) {
                    targets.push((Some(m), f));
                }
            }
        }
    }
    for (method, f) in targets {
        let hit = outcomes
            .iter()
            .filter(|o| o.job.method == method && (o.job.fraction - f).abs() < 1e-9)
            .find_map(|o| o.result.as_ref().ok());
        if let Some(m) = hit {
            let name = format!("confusion_{}_{:.2}.csv", method.map_or("baseline", |m| m.name()), f);
            write_text(&out.join(name), &report::confusion_csv(&m.confusion))?;
        }
    }
    Ok(())
}
