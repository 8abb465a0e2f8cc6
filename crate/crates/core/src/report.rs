//! Audit report assembly: similarity, FVD and both curves in one document
//! with the provenance needed to re-run it.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::{AuditConfig, ReportFormat};
use crate::curve::{self, Curve};
use crate::embedding_format::{self, EmbeddingFile, Manifest};
use crate::error::{Error, Result};
use crate::frechet::{self, FrechetOptions, FvdResult};
use crate::output::StagedOutput;
use crate::similarity::{self, ScoreOptions, SimilarityReport};

pub const TOOL_NAME: &str = "repaudit";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// An embedding file together with the path it was loaded from.
#[derive(Debug, Clone)]
pub struct LoadedInput {
    pub path: PathBuf,
    pub file: EmbeddingFile,
}

impl LoadedInput {
    pub fn load(path: PathBuf) -> Result<Self> {
        let file = embedding_format::read_embedding_set(&path)?;
        Ok(Self { path, file })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputProvenance {
    pub role: String,
    pub path: String,
    pub name: String,
    pub count: usize,
    pub dim: usize,
    pub manifest: Manifest,
}

impl InputProvenance {
    fn of(role: &str, input: &LoadedInput) -> Self {
        Self {
            role: role.into(),
            path: input.path.display().to_string(),
            name: input.file.set.name().into(),
            count: input.file.set.count(),
            dim: input.file.set.dim(),
            manifest: input.file.manifest.clone(),
        }
    }
}

/// Settings that influence the numbers; the output location does not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub threshold: f64,
    pub uniqueness_band: f64,
    pub curve_steps: Vec<f64>,
    pub per_real: bool,
    pub diagonal_epsilon: f64,
    pub formats: Vec<ReportFormat>,
}

impl From<&AuditConfig> for ConfigSnapshot {
    fn from(cfg: &AuditConfig) -> Self {
        Self {
            threshold: cfg.threshold,
            uniqueness_band: cfg.uniqueness_band,
            curve_steps: cfg.curve_steps.clone(),
            per_real: cfg.per_real,
            diagonal_epsilon: cfg.diagonal_epsilon,
            formats: cfg.formats.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub config: ConfigSnapshot,
    pub inputs: Vec<InputProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub avg_top_vsscd: f64,
    pub top_vsscd: f64,
    pub pct_flagged: f64,
    pub pct_above_band: f64,
    pub fvd_baseline: f64,
    pub fvd_at_full_filter: f64,
    pub removed_at_full_filter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub verdict: Verdict,
    pub similarity: SimilarityReport,
    pub fvd_baseline: FvdResult,
    /// Threshold-gated removal.
    pub curve: Curve,
    /// Rank-gated removal over the configured steps that keep two videos.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranked_curve: Option<Curve>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

/// Loaded inputs of one audit.
#[derive(Debug, Clone)]
pub struct AuditInputs {
    pub real: LoadedInput,
    pub gen: LoadedInput,
    /// Separate FVD features; `None` reuses the similarity descriptors.
    pub fvd: Option<(LoadedInput, LoadedInput)>,
}

impl AuditInputs {
    pub fn load(cfg: &AuditConfig) -> Result<Self> {
        let real = LoadedInput::load(cfg.require_real()?.to_path_buf())?;
        let gen = LoadedInput::load(cfg.require_gen()?.to_path_buf())?;
        let fvd = match (&cfg.real_fvd, &cfg.gen_fvd) {
            (Some(r), Some(g)) => {
                Some((LoadedInput::load(r.clone())?, LoadedInput::load(g.clone())?))
            }
            _ => None,
        };
        Ok(Self { real, gen, fvd })
    }

    pub fn fvd_pair(&self) -> (&LoadedInput, &LoadedInput) {
        match &self.fvd {
            Some((r, g)) => (r, g),
            None => (&self.real, &self.gen),
        }
    }
}

/// Warning attached when FVD runs on features outside the I3D family.
pub fn extractor_warning(manifest: &Manifest) -> Option<String> {
    (!manifest.extractor.starts_with("i3d")).then(|| {
        format!(
            "FVD computed on {:?} features, not I3D: values are comparable only within this extractor",
            manifest.extractor
        )
    })
}

/// FVD between two loaded files, including rank and extractor warnings.
pub fn fvd_for(real: &LoadedInput, gen: &LoadedInput, opts: &FrechetOptions) -> Result<FvdResult> {
    embedding_format::validate_pair(&real.file, &gen.file)?;
    let mut result = frechet::fvd_with(&real.file.set, &gen.file.set, opts)?;
    result
        .warnings
        .extend(extractor_warning(&real.file.manifest));
    Ok(result)
}

pub fn score_options(cfg: &AuditConfig) -> ScoreOptions {
    ScoreOptions {
        threshold: cfg.threshold,
        uniqueness_band: cfg.uniqueness_band,
        per_real: cfg.per_real,
    }
}

pub fn run_audit(inputs: &AuditInputs, cfg: &AuditConfig) -> Result<AuditReport> {
    embedding_format::validate_pair(&inputs.real.file, &inputs.gen.file)?;
    let similarity = similarity::score_with(
        &inputs.real.file.set,
        &inputs.gen.file.set,
        &score_options(cfg),
    )?;

    let opts = FrechetOptions {
        diagonal_epsilon: cfg.diagonal_epsilon,
    };
    let (fvd_real, fvd_gen) = inputs.fvd_pair();
    let fvd_baseline = fvd_for(fvd_real, fvd_gen, &opts)?;
    let curve =
        curve::flagged_curve_with(&fvd_real.file.set, &fvd_gen.file.set, &similarity, &opts)?;

    let mut notes = Vec::new();
    if curve.removal_capped {
        notes.push(format!(
            "flagged removal stopped at {} of {} flagged videos so that two remain for the covariance",
            curve.last().removed_count,
            curve.flagged_count.unwrap_or(0)
        ));
    }
    let m = similarity.gen_count();
    let steps = curve::feasible_steps(&cfg.curve_steps, m);
    if steps.len() < cfg.curve_steps.len() {
        let dropped: Vec<String> = cfg.curve_steps[steps.len()..]
            .iter()
            .map(f64::to_string)
            .collect();
        notes.push(format!(
            "ranked curve omits steps {} (fewer than 2 of {m} generated videos would remain)",
            dropped.join(", ")
        ));
    }
    let ranked_curve = if steps.is_empty() {
        None
    } else {
        Some(curve::integrated_curve_with(
            &fvd_real.file.set,
            &fvd_gen.file.set,
            &similarity,
            &steps,
            &opts,
        )?)
    };

    let mut inputs_prov = vec![
        InputProvenance::of("real", &inputs.real),
        InputProvenance::of("generated", &inputs.gen),
    ];
    if let Some((r, g)) = &inputs.fvd {
        inputs_prov.push(InputProvenance::of("real_fvd", r));
        inputs_prov.push(InputProvenance::of("generated_fvd", g));
    }

    let pct = |n: usize| 100.0 * n as f64 / m as f64;
    let verdict = Verdict {
        avg_top_vsscd: similarity.average_top,
        top_vsscd: similarity.top_vsscd,
        pct_flagged: pct(similarity.replicated_ids.len()),
        pct_above_band: pct(similarity.above_band_ids.len()),
        fvd_baseline: fvd_baseline.value,
        fvd_at_full_filter: curve.last().fvd,
        removed_at_full_filter: curve.last().removed_count,
    };
    let report = AuditReport {
        verdict,
        similarity,
        fvd_baseline,
        curve,
        ranked_curve,
        notes,
        provenance: Provenance {
            tool: TOOL_NAME.into(),
            tool_version: TOOL_VERSION.into(),
            config: cfg.into(),
            inputs: inputs_prov,
        },
    };
    report.check_consistency()?;
    Ok(report)
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

impl AuditReport {
    /// Cross-checks the embedded sub-reports against each other.
    pub fn check_consistency(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Consistency(msg));
        let sim = &self.similarity;
        let max = sim
            .per_gen
            .iter()
            .map(|m| m.top_score)
            .fold(f64::NEG_INFINITY, f64::max);
        if max != sim.top_vsscd {
            return fail(format!(
                "top_vsscd {} differs from per-video maximum {max}",
                sim.top_vsscd
            ));
        }
        if !(-1.0..=1.0).contains(&sim.average_top) {
            return fail(format!(
                "average top score {} outside [-1, 1]",
                sim.average_top
            ));
        }
        for id in &sim.replicated_ids {
            if !sim.per_gen.iter().any(|m| &m.gen_id == id) {
                return fail(format!("replicated id {id:?} is not a generated video"));
            }
        }
        for c in std::iter::once(&self.curve).chain(self.ranked_curve.as_ref()) {
            if c.gen_set_size != sim.gen_count() {
                return fail("curve and similarity report cover different sets".into());
            }
            let first = &c.points[0];
            if first.removed_count != 0 || (first.fvd - self.fvd_baseline.value).abs() > 1e-9 {
                return fail(format!(
                    "curve starts at FVD {} but the baseline is {}",
                    first.fvd, self.fvd_baseline.value
                ));
            }
        }
        if (self.fvd_baseline.value - (self.fvd_baseline.mean_term + self.fvd_baseline.trace_term))
            .abs()
            > 1e-8
        {
            return fail("FVD value is not the sum of its terms".into());
        }
        Ok(())
    }

    fn gen_label(&self) -> &str {
        self.provenance
            .inputs
            .iter()
            .find(|i| i.role == "generated")
            .map(|i| i.name.as_str())
            .unwrap_or("generated")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let sim = &self.similarity;
        let mut out = String::new();
        out.push_str("# Replication audit\n\n");
        out.push_str(&summary_table(&[(self.gen_label(), self)]));
        out.push_str(
            "\nRead the two columns together: copies of training videos lower FVD while raising the similarity scores.\n",
        );

        out.push_str("\n## Similarity\n\n");
        let _ = writeln!(out, "- Threshold: {}", sim.threshold);
        let _ = writeln!(
            out,
            "- Flagged (top score >= {}): {} of {}",
            sim.threshold,
            sim.replicated_ids.len(),
            sim.gen_count()
        );
        let _ = writeln!(
            out,
            "- At or above the uniqueness band ({}): {} of {}",
            sim.uniqueness_band,
            sim.above_band_ids.len(),
            sim.gen_count()
        );
        if let Some(avg) = sim.average_top_per_real {
            let _ = writeln!(out, "- Average top score per real video: {}", fmt4(avg));
        }
        out.push_str(
            "\n| Generated | Best real match | Top score | Replicated |\n|---|---|---|---|\n",
        );
        for m in &sim.per_gen {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                m.gen_id,
                m.best_real_id,
                fmt4(m.top_score),
                if m.top_score >= sim.threshold {
                    "yes"
                } else {
                    "no"
                }
            );
        }

        let f = &self.fvd_baseline;
        out.push_str("\n## FVD\n\n");
        let _ = writeln!(out, "- Value: {}", fmt4(f.value));
        let _ = writeln!(out, "- Mean term: {}", fmt4(f.mean_term));
        let _ = writeln!(out, "- Trace term: {}", fmt4(f.trace_term));
        let _ = writeln!(out, "- Clamped eigenvalues: {}", f.eigen_clamped);
        for w in &f.warnings {
            let _ = writeln!(out, "- Warning: {w}");
        }

        out.push_str("\n## FVD-VSSCD curve (flagged removal)\n\n");
        out.push_str(&curve_table(&self.curve));
        if let Some(c) = &self.ranked_curve {
            out.push_str("\n## FVD-VSSCD curve (ranked removal)\n\n");
            out.push_str(&curve_table(c));
        }
        if !self.notes.is_empty() {
            out.push_str("\n## Notes\n\n");
            for n in &self.notes {
                let _ = writeln!(out, "- {n}");
            }
        }

        out.push_str("\n## Provenance\n\n");
        let _ = writeln!(
            out,
            "- Tool: {} {}",
            self.provenance.tool, self.provenance.tool_version
        );
        for i in &self.provenance.inputs {
            let _ = writeln!(
                out,
                "- {}: `{}` ({}, {} x {}, extractor {}, sha256 {})",
                i.role, i.path, i.name, i.count, i.dim, i.manifest.extractor, i.manifest.checksum
            );
        }
        out
    }

    /// Files written for the requested formats.
    pub fn staged_files(&self, formats: &[ReportFormat]) -> StagedOutput {
        let mut out = StagedOutput::new();
        for f in formats {
            match f {
                ReportFormat::Json => out.add("audit.json", self.to_json()),
                ReportFormat::Csv => {
                    out.add("similarity.csv", self.similarity.to_csv());
                    out.add("curve.csv", self.curve.to_csv());
                    out.add("curve_plot.csv", self.curve.to_plot_csv());
                    if let Some(c) = &self.ranked_curve {
                        out.add("ranked_curve.csv", c.to_csv());
                        out.add("ranked_curve_plot.csv", c.to_plot_csv());
                    }
                }
                ReportFormat::Md => out.add("audit.md", self.to_markdown()),
            }
        }
        out
    }
}

/// Similarity and FVD side by side, one row per audited generated set.
pub fn summary_table(rows: &[(&str, &AuditReport)]) -> String {
    let mut out = String::from(
        "| Generated set | Videos | Avg top VSSCD | Top-VSSCD | Flagged | FVD | FVD (flagged removed) |\n\
         |---|---|---|---|---|---|---|\n",
    );
    for (label, r) in rows {
        let v = &r.verdict;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {:.1}% | {} | {} |",
            label,
            r.similarity.gen_count(),
            fmt4(v.avg_top_vsscd),
            fmt4(v.top_vsscd),
            v.pct_flagged,
            fmt4(v.fvd_baseline),
            fmt4(v.fvd_at_full_filter)
        );
    }
    out
}

fn curve_table(c: &Curve) -> String {
    let mut out = String::from(
        "| Step | Retained | Removed | FVD | Max remaining top score |\n|---|---|---|---|---|\n",
    );
    for p in &c.points {
        let step = p
            .requested_fraction
            .map(|s| format!("{:.2}", s))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "| {} | {:.1}% | {} | {} | {} |",
            step,
            p.retained_fraction * 100.0,
            p.removed_count,
            fmt4(p.fvd),
            fmt4(p.max_remaining_top_score)
        );
    }
    if let Some(f) = c.flatness {
        let _ = writeln!(out, "\nFlatness (max relative FVD change): {}", fmt4(f));
    }
    out
}

/// Markdown for a stand-alone similarity report.
pub fn similarity_markdown(sim: &SimilarityReport) -> String {
    let mut out = String::from("# Similarity report\n\n");
    let _ = writeln!(out, "- Top-VSSCD: {}", fmt4(sim.top_vsscd));
    let _ = writeln!(out, "- Average top VSSCD: {}", fmt4(sim.average_top));
    let _ = writeln!(
        out,
        "- Flagged (>= {}): {} of {}",
        sim.threshold,
        sim.replicated_ids.len(),
        sim.gen_count()
    );
    out.push_str("\n| Generated | Best real match | Top score | Replicated |\n|---|---|---|---|\n");
    for m in &sim.per_gen {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            m.gen_id,
            m.best_real_id,
            fmt4(m.top_score),
            if m.top_score >= sim.threshold {
                "yes"
            } else {
                "no"
            }
        );
    }
    out
}
