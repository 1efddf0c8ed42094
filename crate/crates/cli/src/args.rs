use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Rewrites bare `key=value` tokens into `--key=value` so both flag styles
/// are accepted. Tokens that already start with `-` are left alone.
pub fn normalize_args<I: IntoIterator<Item = String>>(args: I) -> Vec<String> {
    let mut out = Vec::new();
    for (i, a) in args.into_iter().enumerate() {
        if i > 0 && is_key_value(&a) {
            let (k, v) = a.split_once('=').unwrap();
            out.push(format!("--{}={v}", k.replace('_', "-")));
        } else {
            out.push(a);
        }
    }
    out
}

fn is_key_value(a: &str) -> bool {
    match a.split_once('=') {
        Some((k, _)) => {
            let mut chars = k.chars();
            matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
                && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_')
        }
        None => false,
    }
}

/// Parses `min:max`.
pub fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected min:max, got '{s}'"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number '{a}'"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number '{b}'"))?;
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(format!("range '{s}' is not finite"));
    }
    if lo >= hi {
        return Err(format!("range '{s}' needs min < max"));
    }
    Ok((lo, hi))
}

/// Like [`parse_range`] but allows `min == max`.
pub fn parse_closed_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected min:max, got '{s}'"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number '{a}'"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number '{b}'"))?;
    if lo > hi {
        return Err(format!("range '{s}' needs min <= max"));
    }
    Ok((lo, hi))
}

#[derive(Debug, Parser)]
#[command(name = "volmatte", version, about = "Volumetric alpha matting for CT lesion labelling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse annotator masks into a trimap.
    Trimap(TrimapArgs),
    /// Solve for an alpha matte.
    Mat(MatArgs),
    /// Score predicted mattes against references.
    Eval(EvalArgs),
    /// Generate a synthetic phantom case.
    Phantom(PhantomArgs),
    /// Resample, crop, build the trimap and run every method variant.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct TrimapArgs {
    /// Mask stems (at least two).
    #[arg(long, num_args = 1.., required = true)]
    pub masks: Vec<PathBuf>,
    #[arg(long, default_value_t = volmatte::trimap::DEFAULT_DILATE_RADIUS)]
    pub dilate_radius: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct MattingArgs {
    /// HU window `min:max`.
    #[arg(long, default_value = "-1350:150", value_parser = parse_range, allow_hyphen_values = true)]
    pub window: (f64, f64),
    #[arg(long, default_value_t = volmatte::trimap::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// CF window edge length.
    #[arg(long, default_value_t = 3)]
    pub cf_window: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 10)]
    pub k_neighbors: usize,
    #[arg(long, default_value_t = 1.0)]
    pub spatial_weight: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iterations: usize,
    /// `jacobi` or `none`.
    #[arg(long, default_value = "jacobi")]
    pub preconditioner: String,
}

#[derive(Debug, Args)]
pub struct MatArgs {
    #[arg(long)]
    pub method: String,
    /// Use HU-calibrated foreground constraints (the `+` variants).
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value = "false")]
    pub calibrated: bool,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub trimap: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `<out>.constraints.json`.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value = "false")]
    pub debug_constraints: bool,
    #[command(flatten)]
    pub matting: MattingArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub pred: Vec<PathBuf>,
    /// One reference per prediction, or a single reference for all.
    #[arg(long, num_args = 1.., required = true)]
    pub gt: Vec<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value = "false")]
    pub aggregate: bool,
    #[arg(long, default_value_t = volmatte::metrics::DEFAULT_GRAD_SIGMA)]
    pub grad_sigma: f64,
    #[arg(long, default_value_t = volmatte::metrics::DEFAULT_CONN_STEP)]
    pub conn_step: f64,
    #[arg(long, default_value_t = volmatte::metrics::DEFAULT_CONN_DELTA)]
    pub conn_delta: f64,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub annotators: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_hu: f64,
    #[arg(long, default_value = "-50:50", value_parser = parse_closed_range, allow_hyphen_values = true)]
    pub fg_hu: (f64, f64),
    #[arg(long, default_value = "-900:-800", value_parser = parse_closed_range, allow_hyphen_values = true)]
    pub bg_hu: (f64, f64),
    #[arg(long, default_value_t = 0.3)]
    pub radius_frac: f64,
    #[arg(long, default_value_t = 0.5)]
    pub softness: f64,
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.5)]
    pub spacing: f64,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub masks: Vec<PathBuf>,
    /// Reference matte in the input geometry.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated subset of `cf,knn`; each runs plain and calibrated.
    #[arg(long, value_delimiter = ',', default_value = "cf,knn")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    pub spacing: f64,
    #[arg(long, default_value_t = 128)]
    pub xy_size: usize,
    #[arg(long, default_value_t = 3)]
    pub z_pad: usize,
    #[arg(long, default_value_t = volmatte::trimap::DEFAULT_DILATE_RADIUS)]
    pub dilate_radius: usize,
    /// Fill value for HU images outside the source grid.
    #[arg(long, default_value_t = -1000.0, allow_hyphen_values = true)]
    pub fill_hu: f64,
    /// Run the variants one after another instead of concurrently.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value = "false")]
    pub serial: bool,
    #[command(flatten)]
    pub matting: MattingArgs,
}
