use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use qsurv::autodiff::{decode_checkpoint, encode_checkpoint};
use qsurv::data::{parse_grid, read_covariates, Dataset};
use qsurv::error::Error;
use qsurv::metrics::evaluate_model;
use qsurv::model::{Architecture, HazardModel};
use qsurv::quadrature;
use qsurv::simulation::{evaluation_grid, simulate, write_truth_csv, Family, GeneratorSpec};
use qsurv::training::{random_search, sweep_nodes, train, SearchSpace, TrainedModel, TrainingConfig, TrainingLog};
use serde::Serialize;

use crate::manifest::{self, InputFile, RunManifest, MANIFEST_SCHEMA_VERSION};
use crate::{Cli, CliError, Command, Global};

/// Default quadrature order when neither the flag nor a descriptor provides one.
const DEFAULT_K: usize = 15;

type Outcome = Result<(), CliError>;

/// Collects the pieces of a manifest while a command runs.
struct Run<'a> {
    global: &'a Global,
    command: &'static str,
    started: Instant,
    config_sha256: String,
    seed: u64,
    inputs: Vec<InputFile>,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    fn new(global: &'a Global, command: &'static str) -> Self {
        Self {
            global,
            command,
            started: Instant::now(),
            config_sha256: String::new(),
            seed: global.seed.unwrap_or(0),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn config<T: Serialize>(&mut self, value: &T) -> Outcome {
        let text = serde_json::to_string(value).map_err(|e| CliError::internal(e.to_string()))?;
        self.config_sha256 = manifest::sha256_hex(text.as_bytes());
        Ok(())
    }

    fn input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::input(path, e))?;
        self.inputs.push(InputFile {
            path: path.display().to_string(),
            sha256: manifest::sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
        fs::write(path, contents).map_err(|e| CliError::output(path, e))?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    fn create(&mut self, path: &Path) -> Result<BufWriter<File>, CliError> {
        let f = File::create(path).map_err(|e| CliError::output(path, e))?;
        self.outputs.push(path.display().to_string());
        Ok(BufWriter::new(f))
    }

    fn finish(self, manifest_path: &Path) -> Outcome {
        let m = RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: self.command.to_string(),
            config_sha256: self.config_sha256,
            seed: self.seed,
            threads: self.global.threads,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        manifest::write(manifest_path, &m)?;
        Ok(())
    }
}

fn out_path(global: &Global) -> Result<&Path, CliError> {
    global.out.as_deref().ok_or_else(|| CliError::usage("--out is required"))
}

fn out_dir(global: &Global) -> Result<PathBuf, CliError> {
    let dir = out_path(global)?.to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| CliError::output(&dir, e))?;
    Ok(dir)
}

/// `<file>.manifest.json` beside a single-file output.
fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn parent_dir(out: &Path) -> Outcome {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| CliError::output(p, e)),
        _ => Ok(()),
    }
}

fn text(bytes: Vec<u8>, path: &Path) -> Result<String, CliError> {
    String::from_utf8(bytes).map_err(|_| CliError {
        code: crate::EXIT_DATA,
        message: format!("{} is not UTF-8", path.display()),
    })
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::from(Error::from(e))
}

fn parse_family(name: &str) -> Result<Family, CliError> {
    name.parse::<Family>().map_err(|_| {
        let known: Vec<&str> = Family::ALL.iter().map(|f| f.name()).collect();
        CliError::usage(format!("unknown family `{name}`; expected one of {}", known.join(", ")))
    })
}

/// Loads a config file (or defaults) and applies the global overrides.
fn load_config(run: &mut Run<'_>, path: Option<&Path>) -> Result<TrainingConfig, CliError> {
    let mut config = match path {
        Some(p) => {
            let bytes = run.input(p)?;
            TrainingConfig::from_json(&text(bytes, p)?)?
        }
        None => TrainingConfig::default(),
    };
    let g = run.global;
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(k) = g.k_nodes {
        config.k_nodes = k;
    }
    if let Some(c) = g.conditioning {
        config.conditioning = c;
    }
    config.validate()?;
    run.seed = config.seed;
    Ok(config)
}

fn load_dataset(run: &mut Run<'_>, path: &Path) -> Result<Dataset, CliError> {
    let bytes = run.input(path)?;
    Ok(Dataset::from_csv(bytes.as_slice())?)
}

fn load_model(run: &mut Run<'_>, checkpoint: &Path, architecture: Option<&Path>) -> Result<HazardModel, CliError> {
    let arch_path = match architecture {
        Some(p) => p.to_path_buf(),
        None => checkpoint.with_file_name("architecture.json"),
    };
    let arch_bytes = run.input(&arch_path)?;
    let arch = Architecture::from_json(&text(arch_bytes, &arch_path)?)?;
    let ckpt_bytes = run.input(checkpoint)?;
    let params = decode_checkpoint(&text(ckpt_bytes, checkpoint)?)?;
    Ok(HazardModel::from_parameters(arch, params)?)
}

/// Column indices of `wanted` within `names`.
fn column_order(names: &[String], wanted: &[String]) -> Result<Vec<usize>, CliError> {
    let order: Option<Vec<usize>> = wanted.iter().map(|w| names.iter().position(|n| n == w)).collect();
    order.ok_or_else(|| CliError {
        code: crate::EXIT_DATA,
        message: format!("shape mismatch: covariate columns {names:?} do not provide model features {wanted:?}"),
    })
}

/// Reorders a dataset's covariates to the model's feature order.
fn align(data: Dataset, arch: &Architecture) -> Result<Dataset, CliError> {
    if data.feature_names == arch.feature_names {
        return Ok(data);
    }
    let order = column_order(&data.feature_names, &arch.feature_names)?;
    let records = data
        .records
        .into_iter()
        .map(|mut r| {
            r.x = order.iter().map(|&c| r.x[c]).collect();
            r
        })
        .collect();
    Ok(Dataset::new(arch.feature_names.clone(), records)?)
}

fn rule_order(global: &Global, arch: &Architecture) -> usize {
    global.k_nodes.unwrap_or(if arch.k_nodes > 0 { arch.k_nodes } else { DEFAULT_K })
}

fn save_fit(run: &mut Run<'_>, dir: &Path, fit: &TrainedModel, log: &TrainingLog) -> Outcome {
    run.write(&dir.join("checkpoint.json"), encode_checkpoint(fit.model.parameters())? + "\n")?;
    run.write(&dir.join("architecture.json"), fit.model.architecture().to_json()? + "\n")?;
    run.write(&dir.join("training_log.ndjson"), log.to_ndjson()?)?;
    Ok(())
}

pub fn run(cli: &Cli) -> Outcome {
    let g = &cli.global;
    if g.threads == 0 {
        return Err(CliError::usage("--threads must be >= 1"));
    }
    match &cli.command {
        Command::Simulate { family, n_train, n_test } => cmd_simulate(g, family, *n_train, *n_test),
        Command::Train { config, train } => cmd_train(g, config.as_deref(), train),
        Command::Evaluate {
            checkpoint,
            architecture,
            test,
            train,
        } => cmd_evaluate(g, checkpoint, architecture.as_deref(), test, train),
        Command::Predict {
            checkpoint,
            architecture,
            covariates,
            grid,
        } => cmd_predict(g, checkpoint, architecture.as_deref(), covariates, grid),
        Command::SweepNodes {
            family,
            ks,
            seeds,
            config,
            n_train,
            n_test,
        } => cmd_sweep(g, family, ks, seeds, config.as_deref(), *n_train, *n_test),
        Command::Hpo {
            space,
            trials,
            train,
            config,
        } => cmd_hpo(g, space.as_deref(), *trials, train, config.as_deref()),
        Command::DumpRule => cmd_dump_rule(g),
    }
}

fn cmd_simulate(g: &Global, family: &str, n_train: usize, n_test: usize) -> Outcome {
    let family = parse_family(family)?;
    let dir = out_dir(g)?;
    let mut run = Run::new(g, "simulate");
    let spec = GeneratorSpec {
        n_train,
        n_test,
        ..GeneratorSpec::new(family)
    };
    run.config(&spec)?;
    let sim = simulate(&spec, run.seed)?;
    let w = run.create(&dir.join("train.csv"))?;
    sim.train.to_csv(w)?;
    let w = run.create(&dir.join("test.csv"))?;
    sim.test.to_csv(w)?;
    let grid = evaluation_grid(&sim.train.times())?;
    let w = run.create(&dir.join("truth.csv"))?;
    write_truth_csv(w, &sim.truth, &sim.train.covariates(), &grid)?;
    let censored = |d: &Dataset| 1.0 - d.event_count() as f64 / d.len().max(1) as f64;
    println!(
        "{}: {} train / {} test rows, censoring {:.3} / {:.3}",
        family,
        sim.train.len(),
        sim.test.len(),
        censored(&sim.train),
        censored(&sim.test)
    );
    run.finish(&dir.join("manifest.json"))
}

fn cmd_train(g: &Global, config: Option<&Path>, train_csv: &Path) -> Outcome {
    let dir = out_dir(g)?;
    let mut run = Run::new(g, "train");
    let config = load_config(&mut run, config)?;
    run.config(&config)?;
    let data = load_dataset(&mut run, train_csv)?;
    run.write(&dir.join("config.json"), config.to_json()? + "\n")?;
    match train(&config, &data) {
        Ok((fit, log)) => {
            save_fit(&mut run, &dir, &fit, &log)?;
            println!(
                "best epoch {} of {}, validation C_td {:.4}, IBS {:.4}, {} clipped steps",
                fit.best_epoch,
                log.records.len(),
                fit.val_ctd,
                fit.val_ibs,
                log.clip_events
            );
            run.finish(&dir.join("manifest.json"))
        }
        Err(Error::Diverged { epoch, last_finite }) => {
            let path = dir.join("checkpoint.last_finite.json");
            run.write(&path, encode_checkpoint(last_finite.model.parameters())? + "\n")?;
            run.write(&dir.join("architecture.json"), last_finite.model.architecture().to_json()? + "\n")?;
            run.finish(&dir.join("manifest.json"))?;
            Err(CliError {
                code: crate::EXIT_NUMERIC,
                message: format!(
                    "training diverged in epoch {epoch}; last finite parameters saved to {}",
                    path.display()
                ),
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_evaluate(g: &Global, checkpoint: &Path, architecture: Option<&Path>, test: &Path, train_csv: &Path) -> Outcome {
    let out = out_path(g)?.to_path_buf();
    parent_dir(&out)?;
    let mut run = Run::new(g, "evaluate");
    let model = load_model(&mut run, checkpoint, architecture)?;
    let arch = model.architecture().clone();
    let k = rule_order(g, &arch);
    run.config(&(k, &arch))?;
    let test_set = align(load_dataset(&mut run, test)?, &arch)?;
    let train_set = align(load_dataset(&mut run, train_csv)?, &arch)?;
    let rule = quadrature::rule(k)?;
    let report = evaluate_model(&model, &rule, &train_set, &test_set)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::internal(e.to_string()))?;
    run.write(&out, json + "\n")?;
    println!(
        "C_td {:.4} / {:.4} / {:.4} (full / q1 / q2), IBS {:.4}, D-cal p {:.3}",
        report.full.ctd, report.q1.ctd, report.q2.ctd, report.full.ibs, report.dcal_p
    );
    for tie in &report.horizon_ties {
        println!("horizon tie: {tie}");
    }
    run.finish(&sibling_manifest(&out))
}

fn cmd_predict(g: &Global, checkpoint: &Path, architecture: Option<&Path>, covariates: &Path, grid: &str) -> Outcome {
    let out = out_path(g)?.to_path_buf();
    parent_dir(&out)?;
    let mut run = Run::new(g, "predict");
    let model = load_model(&mut run, checkpoint, architecture)?;
    let arch = model.architecture().clone();
    let k = rule_order(g, &arch);
    let grid = parse_grid(grid)?;
    run.config(&(k, &grid, &arch))?;
    let bytes = run.input(covariates)?;
    let (names, values) = read_covariates(bytes.as_slice())?;
    let order = column_order(&names, &arch.feature_names)?;
    let xs: Vec<f64> = values
        .chunks_exact(names.len())
        .flat_map(|row| order.iter().map(move |&c| row[c]))
        .collect();
    let rule = quadrature::rule(k)?;
    let mut w = csv::Writer::from_writer(run.create(&out)?);
    w.write_record(["subject_id", "t", "hazard", "cumhaz", "survival"]).map_err(csv_err)?;
    let subjects = xs.len() / arch.input_dim.max(1);
    if subjects > 0 {
        let curves = model.grid_curves(&xs, &grid, &rule)?;
        for i in 0..subjects {
            for (j, &t) in grid.iter().enumerate() {
                let idx = i * grid.len() + j;
                let c = curves.cumhaz[idx];
                w.write_record([
                    i.to_string(),
                    format!("{t:?}"),
                    format!("{:?}", curves.hazard[idx]),
                    format!("{c:?}"),
                    format!("{:?}", (-c).exp()),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::output(&out, e))?;
    println!("{subjects} subjects x {} times", grid.len());
    run.finish(&sibling_manifest(&out))
}

fn cmd_sweep(
    g: &Global,
    family: &str,
    ks: &[usize],
    seeds: &[u64],
    config: Option<&Path>,
    n_train: usize,
    n_test: usize,
) -> Outcome {
    let family = parse_family(family)?;
    let out = out_path(g)?.to_path_buf();
    parent_dir(&out)?;
    let mut run = Run::new(g, "sweep-nodes");
    let base = load_config(&mut run, config)?;
    let spec = GeneratorSpec {
        n_train,
        n_test,
        ..GeneratorSpec::new(family)
    };
    run.config(&(&spec, ks, seeds, &base))?;
    let cells = sweep_nodes(&spec, ks, seeds, &base)?;
    let mut w = csv::Writer::from_writer(run.create(&out)?);
    w.write_record(["k_nodes", "seed", "iae_survival", "iae_cumhaz", "iae_hazard", "train_seconds", "error"])
        .map_err(csv_err)?;
    for c in &cells {
        let (s, ch, h) = match c.iae {
            Some(e) => (format!("{:?}", e.survival), format!("{:?}", e.cumhaz), format!("{:?}", e.hazard)),
            None => (String::new(), String::new(), String::new()),
        };
        w.write_record([
            c.k_nodes.to_string(),
            c.seed.to_string(),
            s,
            ch,
            h,
            format!("{:.3}", c.train_seconds),
            c.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::output(&out, e))?;
    for &k in ks {
        let ok: Vec<f64> = cells
            .iter()
            .filter(|c| c.k_nodes == k)
            .filter_map(|c| c.iae.map(|e| e.hazard))
            .collect();
        if ok.is_empty() {
            println!("K={k}: every cell failed");
        } else {
            println!("K={k}: mean IAE(hazard) {:.4} over {} seeds", ok.iter().sum::<f64>() / ok.len() as f64, ok.len());
        }
    }
    run.finish(&sibling_manifest(&out))
}

fn cmd_hpo(g: &Global, space: Option<&Path>, trials: usize, train_csv: &Path, config: Option<&Path>) -> Outcome {
    let dir = out_dir(g)?;
    let mut run = Run::new(g, "hpo");
    let base = load_config(&mut run, config)?;
    let space = match space {
        Some(p) => {
            let bytes = run.input(p)?;
            SearchSpace::from_json(&text(bytes, p)?)?
        }
        None => SearchSpace::default(),
    };
    run.config(&(&space, trials, &base))?;
    let data = load_dataset(&mut run, train_csv)?;
    let outcome = random_search(&space, trials, &base, &data, run.seed)?;
    save_fit(&mut run, &dir, &outcome.best, &outcome.log)?;
    run.write(&dir.join("best_config.json"), outcome.best_config.to_json()? + "\n")?;
    let mut w = csv::Writer::from_writer(run.create(&dir.join("trials.csv"))?);
    w.write_record(["trial", "val_ctd", "val_ibs", "error", "config"]).map_err(csv_err)?;
    for t in &outcome.trials {
        let config = serde_json::to_string(&t.config).map_err(|e| CliError::internal(e.to_string()))?;
        w.write_record([
            t.trial.to_string(),
            format!("{:?}", t.val_ctd),
            format!("{:?}", t.val_ibs),
            t.error.clone().unwrap_or_default(),
            config,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::output(&dir, e))?;
    println!(
        "best of {trials} trials: validation C_td {:.4}, IBS {:.4}",
        outcome.best.val_ctd, outcome.best.val_ibs
    );
    run.finish(&dir.join("manifest.json"))
}

#[derive(Serialize)]
struct RuleDump<'a> {
    #[serde(rename = "K")]
    k: usize,
    nodes: &'a [f64],
    unit_nodes: &'a [f64],
    weights: &'a [f64],
}

fn cmd_dump_rule(g: &Global) -> Outcome {
    let out = out_path(g)?.to_path_buf();
    parent_dir(&out)?;
    let mut run = Run::new(g, "dump-rule");
    let k = g.k_nodes.unwrap_or(DEFAULT_K);
    run.config(&k)?;
    let rule = quadrature::rule(k)?;
    let dump = RuleDump {
        k,
        nodes: rule.canonical_nodes(),
        unit_nodes: rule.unit_nodes(),
        weights: rule.weights(),
    };
    let json = serde_json::to_string_pretty(&dump).map_err(|e| CliError::internal(e.to_string()))?;
    run.write(&out, json + "\n")?;
    run.finish(&sibling_manifest(&out))
}
