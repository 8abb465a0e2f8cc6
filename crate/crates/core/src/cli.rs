//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::augment::{self, AugmentSpec, FrameImage, PrecomputedDescriptors};
use crate::config::{self, AuditConfig, ConfigLayer, ReportFormat};
use crate::curve;
use crate::embedding_format;
use crate::error::{exit, Error, Result};
use crate::frechet::FrechetOptions;
use crate::output::StagedOutput;
use crate::report::{self, AuditInputs, LoadedInput};
use crate::similarity;

#[derive(Debug, Parser)]
#[command(
    name = "repaudit",
    version,
    about = "Audit video generators for training-data replication"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Copy-similarity report of generated against real descriptors.
    Score(CommonArgs),
    /// Fréchet distance between two feature sets.
    Fvd(CommonArgs),
    /// FVD recomputed while replicated videos are removed.
    Curve(CurveArgs),
    /// Write augmented conditioning frames for the motion-replication probe.
    Probe(ProbeArgs),
    /// Check embedding files and, with --gen, their compatibility.
    Validate(CommonArgs),
    /// Score, FVD and curves in one report.
    Audit(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Real (training) embedding file.
    #[arg(long)]
    pub real: Option<PathBuf>,
    /// Generated embedding file.
    #[arg(long)]
    pub gen: Option<PathBuf>,
    /// Real FVD features, when they differ from the similarity descriptors.
    #[arg(long)]
    pub real_fvd: Option<PathBuf>,
    /// Generated FVD features.
    #[arg(long)]
    pub gen_fvd: Option<PathBuf>,
    /// Replication threshold on the top similarity score.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Secondary flag level below which content counts as unique.
    #[arg(long)]
    pub uniqueness_band: Option<f64>,
    /// Output directory for report files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report formats, comma separated: json,csv,md.
    #[arg(long)]
    pub format: Option<String>,
    /// Retained fractions for the ranked curve, comma separated.
    #[arg(long)]
    pub curve_steps: Option<String>,
    /// Also report each real video's best generated match.
    #[arg(long)]
    pub per_real: bool,
    /// Diagonal added to both covariances before the square roots.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// TOML file with audit settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurveModeArg {
    Ranked,
    Flagged,
}

#[derive(Debug, Clone, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Ranked sweeps the curve steps; flagged removes thresholded videos only.
    #[arg(long, value_enum, default_value_t = CurveModeArg::Ranked)]
    pub mode: CurveModeArg,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    /// Conditioning frame to augment.
    #[arg(long)]
    pub image: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// File name stem; defaults to the image's stem.
    #[arg(long)]
    pub stem: Option<String>,
    #[arg(long, default_value_t = 0.8)]
    pub crop: f64,
    #[arg(long, default_value_t = 0.2)]
    pub occlusion: f64,
    /// Horizontal and vertical shift as fractions, `dx,dy`.
    #[arg(long, default_value = "0.1,0.1")]
    pub translate: String,
    /// Rotation in degrees.
    #[arg(long, default_value_t = 15.0, allow_hyphen_values = true)]
    pub rotate: f64,
    /// Precomputed descriptors with ids orig, flip, crop, occlusion,
    /// translation, rotation and random; prints the robustness table.
    #[arg(long)]
    pub descriptors: Option<PathBuf>,
}

impl CommonArgs {
    fn layer(&self) -> Result<ConfigLayer> {
        Ok(ConfigLayer {
            threshold: self.threshold,
            uniqueness_band: self.uniqueness_band,
            curve_steps: self
                .curve_steps
                .as_deref()
                .map(config::parse_steps)
                .transpose()?,
            real: self.real.clone(),
            gen: self.gen.clone(),
            real_fvd: self.real_fvd.clone(),
            gen_fvd: self.gen_fvd.clone(),
            output_dir: self.out.clone(),
            formats: self
                .format
                .as_deref()
                .map(config::parse_formats)
                .transpose()?,
            per_real: self.per_real.then_some(true),
            diagonal_epsilon: self.epsilon,
        })
    }

    fn resolve(&self) -> Result<AuditConfig> {
        let file = self.config.as_deref().map(ConfigLayer::load).transpose()?;
        let mut flags = self.layer()?;
        // A band left at its default must not trip the ordering check when
        // only the threshold was lowered.
        if flags.uniqueness_band.is_none()
            && file.as_ref().and_then(|f| f.uniqueness_band).is_none()
        {
            let threshold = flags
                .threshold
                .or(file.as_ref().and_then(|f| f.threshold))
                .unwrap_or(similarity::DEFAULT_THRESHOLD);
            flags.uniqueness_band = Some(similarity::DEFAULT_UNIQUENESS_BAND.min(threshold));
        }
        AuditConfig::resolve(file, flags)
    }
}

fn load_pair(cfg: &AuditConfig) -> Result<(LoadedInput, LoadedInput)> {
    let real = LoadedInput::load(cfg.require_real()?.to_path_buf())?;
    let gen = LoadedInput::load(cfg.require_gen()?.to_path_buf())?;
    embedding_format::validate_pair(&real.file, &gen.file)?;
    Ok((real, gen))
}

fn frechet_options(cfg: &AuditConfig) -> FrechetOptions {
    FrechetOptions {
        diagonal_epsilon: cfg.diagonal_epsilon,
    }
}

fn commit(staged: StagedOutput, dir: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    if let Some(dir) = dir {
        for path in staged.commit(dir)? {
            let _ = writeln!(out, "wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_score(args: &CommonArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.resolve()?;
    let (real, gen) = load_pair(&cfg)?;
    let rep = similarity::score_with(&real.file.set, &gen.file.set, &report::score_options(&cfg))?;
    let _ = writeln!(
        out,
        "top_vsscd {:.6}  average_top {:.6}  flagged {}/{}",
        rep.top_vsscd,
        rep.average_top,
        rep.replicated_ids.len(),
        rep.gen_count()
    );
    let mut staged = StagedOutput::new();
    for f in &cfg.formats {
        match f {
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(&rep).expect("report serializes");
                s.push('\n');
                staged.add("similarity.json", s);
            }
            ReportFormat::Csv => staged.add("similarity.csv", rep.to_csv()),
            ReportFormat::Md => staged.add("similarity.md", report::similarity_markdown(&rep)),
        }
    }
    commit(staged, cfg.output_dir.as_deref(), out)
}

fn cmd_fvd(args: &CommonArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.resolve()?;
    let (real, gen) = load_pair(&cfg)?;
    let res = report::fvd_for(&real, &gen, &frechet_options(&cfg))?;
    let _ = writeln!(out, "fvd {}", res.value);
    let _ = writeln!(
        out,
        "mean_term {}  trace_term {}  eigen_clamped {}",
        res.mean_term, res.trace_term, res.eigen_clamped
    );
    for w in &res.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    let mut staged = StagedOutput::new();
    if cfg.wants(ReportFormat::Json) {
        let mut s = serde_json::to_string_pretty(&res).expect("result serializes");
        s.push('\n');
        staged.add("fvd.json", s);
    }
    commit(staged, cfg.output_dir.as_deref(), out)
}

fn cmd_curve(args: &CurveArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.common.resolve()?;
    let (real, gen) = load_pair(&cfg)?;
    let rep = similarity::score_with(&real.file.set, &gen.file.set, &report::score_options(&cfg))?;
    let (fvd_real, fvd_gen) = match (&cfg.real_fvd, &cfg.gen_fvd) {
        (Some(r), Some(g)) => {
            let r = LoadedInput::load(r.clone())?;
            let g = LoadedInput::load(g.clone())?;
            embedding_format::validate_pair(&r.file, &g.file)?;
            (r, g)
        }
        _ => (real, gen),
    };
    let opts = frechet_options(&cfg);
    let c = match args.mode {
        CurveModeArg::Ranked => curve::integrated_curve_with(
            &fvd_real.file.set,
            &fvd_gen.file.set,
            &rep,
            &cfg.curve_steps,
            &opts,
        )?,
        CurveModeArg::Flagged => {
            curve::flagged_curve_with(&fvd_real.file.set, &fvd_gen.file.set, &rep, &opts)?
        }
    };
    let csv = c.to_csv();
    let _ = out.write_all(csv.as_bytes());
    let mut staged = StagedOutput::new();
    for f in &cfg.formats {
        match f {
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(&c).expect("curve serializes");
                s.push('\n');
                staged.add("curve.json", s);
            }
            ReportFormat::Csv => {
                staged.add("curve.csv", csv.clone());
                staged.add("curve_plot.csv", c.to_plot_csv());
            }
            ReportFormat::Md => {}
        }
    }
    commit(staged, cfg.output_dir.as_deref(), out)
}

fn parse_pair(s: &str) -> Result<(f64, f64)> {
    let parts = config::parse_steps(s)?;
    match parts[..] {
        [dx, dy] => Ok((dx, dy)),
        _ => Err(Error::Config(format!("expected dx,dy but got {s:?}"))),
    }
}

fn cmd_probe(args: &ProbeArgs, out: &mut dyn Write) -> Result<()> {
    let img = FrameImage::open(&args.image)?;
    let (dx, dy) = parse_pair(&args.translate)?;
    let specs = vec![
        AugmentSpec::Flip,
        AugmentSpec::Crop {
            fraction: args.crop,
        },
        AugmentSpec::Occlusion {
            fraction: args.occlusion,
        },
        AugmentSpec::Translation { dx, dy },
        AugmentSpec::Rotation {
            degrees: args.rotate,
        },
    ];
    let stem = match &args.stem {
        Some(s) => s.clone(),
        None => args
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "frame".into()),
    };
    let mut staged = StagedOutput::new();
    for (name, bytes) in augment::probe_files(&img, &specs, &stem)? {
        staged.add(name, bytes);
    }
    if let Some(path) = &args.descriptors {
        let file = embedding_format::read_embedding_set(path)?;
        let provider = PrecomputedDescriptors::from_set(&file.set);
        // Precomputed descriptors ignore the frame, so the original stands in
        // for the unrelated one.
        let table = augment::robustness_table(&provider, &img, &specs, &img)?;
        let md = table.to_markdown();
        let _ = out.write_all(md.as_bytes());
        staged.add(format!("{stem}_robustness.md"), md);
    }
    commit(staged, Some(&args.out), out)
}

fn cmd_validate(args: &CommonArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.resolve()?;
    let mut loaded = Vec::new();
    for (label, path) in [
        ("real", cfg.real.as_ref()),
        ("gen", cfg.gen.as_ref()),
        ("real_fvd", cfg.real_fvd.as_ref()),
        ("gen_fvd", cfg.gen_fvd.as_ref()),
    ] {
        if let Some(p) = path {
            let input = LoadedInput::load(p.clone())?;
            let _ = writeln!(
                out,
                "{label}: {} ok ({} vectors x {} dims, extractor {})",
                p.display(),
                input.file.set.count(),
                input.file.set.dim(),
                input.file.manifest.extractor
            );
            loaded.push(input);
        }
    }
    if loaded.is_empty() {
        return Err(Error::Config(
            "nothing to validate: pass --real and/or --gen".into(),
        ));
    }
    if loaded.len() >= 2 {
        embedding_format::validate_pair(&loaded[0].file, &loaded[1].file)?;
        let _ = writeln!(out, "pair ok");
    }
    if loaded.len() == 4 {
        embedding_format::validate_pair(&loaded[2].file, &loaded[3].file)?;
        let _ = writeln!(out, "fvd pair ok");
    }
    Ok(())
}

fn cmd_audit(args: &CommonArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.resolve()?;
    let dir = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Error::Config("--out is required for audit".into()))?;
    let inputs = AuditInputs::load(&cfg)?;
    let rep = report::run_audit(&inputs, &cfg)?;
    let v = &rep.verdict;
    let _ = writeln!(
        out,
        "avg_top_vsscd {:.4}  flagged {:.1}%  fvd {:.4}  fvd_filtered {:.4}",
        v.avg_top_vsscd, v.pct_flagged, v.fvd_baseline, v.fvd_at_full_filter
    );
    for w in &rep.fvd_baseline.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    commit(rep.staged_files(&cfg.formats), Some(&dir), out)
}

/// Runs a parsed command; returns the process exit code.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Score(a) => cmd_score(a, out),
        Command::Fvd(a) => cmd_fvd(a, out),
        Command::Curve(a) => cmd_curve(a, out),
        Command::Probe(a) => cmd_probe(a, out),
        Command::Validate(a) => cmd_validate(a, out),
        Command::Audit(a) => cmd_audit(a, out),
    };
    match result {
        Ok(()) => exit::SUCCESS,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
