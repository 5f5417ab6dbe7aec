use std::io::Write;
use std::path::{Path, PathBuf};

use lga_core::data::{gen_dataset_with, load_dataset, write_dataset, Dataset};
use lga_core::gradsuite;
use lga_core::model::{forward, load_model, write_model, LgaModel, Variant};
use lga_core::numerics::Tape;
use lga_core::training::{
    ablation_compare, check_compatible, evaluate_with, train, AblationSetup, Head, METRICS_HEADER,
};

use crate::config::{parse_seeds, RunConfig};
use crate::output::{pgm, write_atomic};
use crate::CliError;

fn say(out: &mut dyn Write, line: &str) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(CliError::from)
}

fn read_data(path: &Path) -> Result<Dataset, CliError> {
    load_dataset(path).map_err(|e| match CliError::from(e) {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn read_model(path: &Path) -> Result<(LgaModel, Variant), CliError> {
    load_model(path).map_err(|e| match CliError::from(e) {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Clone, Debug, Default)]
pub struct GenDataArgs {
    pub config: Option<PathBuf>,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    /// Defaults to the config's `n_train`.
    pub n: Option<usize>,
    pub out: PathBuf,
}

pub fn cmd_gen_data(args: &GenDataArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref(), &args.sets)?;
    let n = args.n.unwrap_or(cfg.n_train);
    if n == 0 {
        return Err(CliError::Config {
            key: "n".into(),
            msg: "must be at least 1".into(),
        });
    }
    let seed = args.seed.unwrap_or(cfg.train.seed);
    let data = gen_dataset_with(cfg.exec(), seed, n, &cfg.task)?;
    write_atomic(&args.out, |w| Ok(write_dataset(w, &data)?))?;
    say(
        out,
        &format!(
            "wrote {n} instances ({} classes, seed {seed}) to {}",
            cfg.task.classes,
            args.out.display()
        ),
    )
}

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub sets: Vec<String>,
    pub data: PathBuf,
    pub val: Option<PathBuf>,
    pub out_model: PathBuf,
    pub metrics: PathBuf,
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref(), &args.sets)?;
    let data = read_data(&args.data)?;
    let val = args.val.as_deref().map(read_data).transpose()?;
    let model_cfg = cfg.model_config();
    check_compatible(&model_cfg, &data.config)?;
    let tcfg = cfg.train_config();
    let mut model =
        LgaModel::init(model_cfg, tcfg.seed).map_err(|e| CliError::Input(e.to_string()))?;
    let log = train(&mut model, &data, val.as_ref(), &tcfg)?;
    let variant = tcfg.variant();
    write_atomic(&args.out_model, |w| Ok(write_model(w, &model, variant)?))?;
    let csv = log.to_csv();
    write_atomic(&args.metrics, |w| Ok(w.write_all(csv.as_bytes())?))?;
    let last = log
        .records
        .iter()
        .rev()
        .find(|r| r.split == "train")
        .expect("final epoch is always recorded");
    say(
        out,
        &format!(
            "trained {} for {} epochs: train acc_main {:.4}, loss {:.4}; skipped steps {}",
            variant.name(),
            tcfg.epochs,
            last.metrics.acc_main,
            last.metrics.loss_total,
            log.skipped_steps
        ),
    )
}

#[derive(Clone, Debug, Default)]
pub struct EvalArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub metrics_out: PathBuf,
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, variant) = read_model(&args.model)?;
    let data = read_data(&args.data)?;
    let m = evaluate_with(
        &Head {
            model: &model,
            variant,
        },
        &data,
        Default::default(),
    )?;
    let csv = format!("{METRICS_HEADER}\n{}\n", m.csv_row("final", "eval"));
    write_atomic(&args.metrics_out, |w| Ok(w.write_all(csv.as_bytes())?))?;
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    say(
        out,
        &format!(
            "{} instances, {}: acc_main {:.4}, acc_aux {}, loss_total {:.4}, mask_dist {}, box_l1 {:.4}",
            m.count,
            variant.name(),
            m.acc_main,
            opt(m.acc_aux),
            m.loss_total,
            opt(m.mask_dist),
            m.box_l1
        ),
    )
}

/// Parses a half-open range `a..b`.
pub fn parse_range(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Config {
        key: "index-range".into(),
        msg: format!("expected a..b with a < b, got {s:?}"),
    };
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a >= b {
        return Err(bad());
    }
    Ok((a, b))
}

#[derive(Clone, Debug, Default)]
pub struct DumpMasksArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub range: (usize, usize),
    pub out_dir: PathBuf,
}

/// Writes `mask_<index>.pgm` per instance plus `params.csv`.
pub fn cmd_dump_masks(args: &DumpMasksArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, _) = read_model(&args.model)?;
    let data = read_data(&args.data)?;
    check_compatible(model.config(), &data.config)?;
    let (start, end) = args.range;
    if start >= end || end > data.len() {
        return Err(CliError::Config {
            key: "index-range".into(),
            msg: format!("{start}..{end} is not within 0..{}", data.len()),
        });
    }
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out_dir.display())))?;
    let c = model.config();
    let k = c.masks;
    let mut csv = String::from("index,label");
    for name in ["mu_y", "mu_x", "sigma"] {
        for g in 1..=k {
            csv.push_str(&format!(",{name}_{g}"));
        }
    }
    csv.push_str(",patch_cy,patch_cx\n");
    for index in start..end {
        let inst = &data.instances[index];
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let x = tape.constant(inst.features.clone());
        let r = forward(&bound, &mut tape, x, Variant::Lga)
            .map_err(|e| CliError::Input(e.to_string()))?;
        let att = r.attention.expect("attention variant has masks");
        let mask = tape.value(att.mask).data().to_vec();
        let params = att.params.values(&tape);
        let image = pgm(&mask, c.height, c.width);
        write_atomic(&args.out_dir.join(format!("mask_{index}.pgm")), |w| {
            Ok(w.write_all(image.as_bytes())?)
        })?;
        let mut row = format!("{index},{}", inst.label);
        for &(y, _) in &params.centers {
            row.push_str(&format!(",{y}"));
        }
        for &(_, x) in &params.centers {
            row.push_str(&format!(",{x}"));
        }
        for s in &params.scales {
            row.push_str(&format!(",{s}"));
        }
        row.push_str(&format!(
            ",{},{}\n",
            inst.patch_center.0, inst.patch_center.1
        ));
        csv.push_str(&row);
    }
    write_atomic(&args.out_dir.join("params.csv"), |w| {
        Ok(w.write_all(csv.as_bytes())?)
    })?;
    say(
        out,
        &format!("wrote {} masks to {}", end - start, args.out_dir.display()),
    )
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckArgs {
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        Self {
            seed: 0,
            tolerance: 1e-6,
        }
    }
}

/// Prints one line per check; fails with exit code 1 if any check fails.
pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(args.tolerance.is_finite() && args.tolerance > 0.0) {
        return Err(CliError::Config {
            key: "tolerance".into(),
            msg: format!("must be positive, got {}", args.tolerance),
        });
    }
    let rows =
        gradsuite::run(args.seed, args.tolerance).map_err(|e| CliError::Input(e.to_string()))?;
    let mut failed = Vec::new();
    for row in &rows {
        let r = &row.report;
        let status = if r.passed() { "ok" } else { "FAIL" };
        say(
            out,
            &format!(
                "{:<22} max_rel_err {:.3e}  coords {:>5}  skipped {:>3}  {status}",
                row.name,
                r.max_rel_error,
                r.coords.len(),
                r.skipped()
            ),
        )?;
        if !r.passed() {
            failed.push(row.name.clone());
        }
    }
    if failed.is_empty() {
        say(
            out,
            &format!(
                "all {} checks passed at tolerance {:e}",
                rows.len(),
                args.tolerance
            ),
        )
    } else {
        Err(CliError::Verification(format!(
            "{} of {} checks above tolerance {:e}: {}",
            failed.len(),
            rows.len(),
            args.tolerance,
            failed.join(", ")
        )))
    }
}

#[derive(Clone, Debug, Default)]
pub struct CompareArgs {
    pub config: Option<PathBuf>,
    pub sets: Vec<String>,
    /// Comma-separated; overrides the config's `seeds`.
    pub seeds: Option<String>,
    pub out: PathBuf,
}

pub fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.config.as_deref(), &args.sets)?;
    if let Some(s) = &args.seeds {
        cfg.seeds = parse_seeds("seeds", s)?;
    }
    let mut setup = AblationSetup::new(cfg.seeds.clone(), cfg.task.clone());
    setup.model = cfg.model_config();
    setup.train = cfg.train_config();
    setup.train.track_metrics = false;
    setup.n_train = cfg.n_train;
    setup.n_val = cfg.n_val;
    let report = ablation_compare(&setup)?;
    let csv = report.to_csv();
    write_atomic(&args.out, |w| Ok(w.write_all(csv.as_bytes())?))?;
    let dist = report
        .treatment_mask_dist()
        .map_or("-".to_string(), |d| format!("{d:.4}"));
    say(
        out,
        &format!(
            "{} seeds: mean acc difference ({}) {:+.4}; mask distance {dist} vs centered {:.4}",
            cfg.seeds.len(),
            format_args!(
                "{} - {}",
                setup.arms.treatment.name(),
                setup.arms.control.name()
            ),
            report.mean_acc_difference(),
            report.center_dist()
        ),
    )
}
