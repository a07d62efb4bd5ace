//! Command-line front end.
//!
//! Results go to stdout as `key=value` records, one per line; a human summary
//! goes to stderr. Failures print a single `status=error ...` record.
//! Exit codes: 0 success, 1 usage, 2 data or parse error, 3 internal error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::allocator::{allocate, budget_from_bpp, parse_records, AllocationProblem, DEFAULT_GRANULARITY};
use crate::metrics::{ms_ssim, ms_ssim_db, psnr, ImagePlane, MsSsimWeights};
use crate::pipeline::{
    decode_with, encode_detailed, estimate_bits, gen_synthetic_model, load_tensor, load_weights,
    save_weights, tensor_to_bytes, BitstreamContainer, DType, DecodePath, ModelWeights, RateReport, SynthConfig,
};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const WEIGHTS_ENV: &str = "MSCAEC_WEIGHTS";

#[derive(Debug, Parser)]
#[command(name = "mscaec", version, about = "Context-adaptive entropy codec for quantized latents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Code a latent pair into a container file.
    Encode(EncodeArgs),
    /// Reconstruct latents from a container file.
    Decode(DecodeArgs),
    /// Estimate rates without running the coder.
    Estimate(EstimateArgs),
    /// MS-SSIM, MS-SSIM dB and PSNR of an image pair.
    Metrics(MetricsArgs),
    /// Pick one candidate stream per image under a byte budget.
    Allocate(AllocateArgs),
    /// Write a seeded synthetic weights file.
    GenModel(GenModelArgs),
    /// Round-trip and dual-path checks on synthetic data.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
struct WeightsArg {
    /// Weights file.
    #[arg(long, env = WEIGHTS_ENV)]
    weights: PathBuf,
}

#[derive(Debug, Args)]
struct PixelDims {
    /// Source image width, for bpp.
    #[arg(long, requires = "height")]
    width: Option<usize>,
    /// Source image height, for bpp.
    #[arg(long, requires = "width")]
    height: Option<usize>,
}

impl PixelDims {
    fn get(&self) -> Result<Option<(usize, usize)>> {
        match (self.width, self.height) {
            (Some(0), _) | (_, Some(0)) => Err(Error::Argument("pixel dims must be positive".into())),
            (Some(w), Some(h)) => Ok(Some((w, h))),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[command(flatten)]
    weights: WeightsArg,
    /// Latent tensor file.
    #[arg(long)]
    y: PathBuf,
    /// Hyper latent tensor file.
    #[arg(long)]
    z: PathBuf,
    /// Output container file.
    #[arg(long)]
    out: PathBuf,
    /// Use full-tensor context recomputation instead of the cropped window.
    #[arg(long)]
    reference: bool,
    #[command(flatten)]
    pixels: PixelDims,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[command(flatten)]
    weights: WeightsArg,
    /// Container file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output latent tensor file.
    #[arg(long)]
    y_out: PathBuf,
    /// Output hyper latent tensor file.
    #[arg(long)]
    z_out: PathBuf,
    /// Use full-tensor context recomputation instead of the cropped window.
    #[arg(long)]
    reference: bool,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    weights: WeightsArg,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    z: PathBuf,
    #[command(flatten)]
    pixels: PixelDims,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WeightSet {
    Default,
    Average,
    Both,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Original image (PGM/PPM).
    #[arg(long)]
    original: PathBuf,
    /// Reconstructed image (PGM/PPM).
    #[arg(long)]
    reconstructed: PathBuf,
    /// MS-SSIM per-scale weights.
    #[arg(long, value_enum, default_value_t = WeightSet::Default)]
    ms_ssim_weights: WeightSet,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("budget").required(true).args(["budget_bytes", "bpp"])))]
struct AllocateArgs {
    /// Records file: `image_id candidate_id bytes quality [pixels]` per line.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    budget_bytes: Option<u64>,
    /// Budget in bits per pixel; needs pixel counts for every image.
    #[arg(long)]
    bpp: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_GRANULARITY)]
    granularity: u64,
}

#[derive(Debug, Args)]
struct GenModelArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    c_y: usize,
    #[arg(long, default_value_t = 192)]
    c_z: usize,
    /// Width of each context branch; defaults to 2 * c_y.
    #[arg(long)]
    ctx_each: Option<usize>,
    /// Number of stride-2 upsampling layers in the hyper decoder.
    #[arg(long, default_value_t = 2)]
    hyper_upsample: usize,
    #[arg(long, default_value_t = 8)]
    z_range: i32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    instances: usize,
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Io<'_> {
    fn record(&mut self, fields: &[(&str, String)]) -> Result<()> {
        let line: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(self.out, "{}", line.join(" "))?;
        Ok(())
    }

    fn note(&mut self, msg: &str) {
        let _ = writeln!(self.err, "{msg}");
    }
}

fn fmt_f(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

fn require_file(p: &Path) -> Result<()> {
    if !p.is_file() {
        return Err(Error::Argument(format!("input file {} does not exist", p.display())));
    }
    Ok(())
}

/// Writes via a sibling temporary file so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".part");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn path_flag(reference: bool) -> DecodePath {
    if reference {
        DecodePath::Reference
    } else {
        DecodePath::Cropped
    }
}

fn report_fields(r: &RateReport) -> Vec<(&'static str, String)> {
    let mut f = vec![
        ("bits_y_estimate", fmt_f(r.bits_y_estimate)),
        ("bits_z_estimate", fmt_f(r.bits_z_estimate)),
        ("bits_y_quantized", fmt_f(r.bits_y_quantized)),
        ("bits_z_quantized", fmt_f(r.bits_z_quantized)),
        ("bytes_actual_total", r.bytes_actual_total.to_string()),
        ("bytes_header", r.bytes_header.to_string()),
        ("bytes_flags", r.bytes_flags.to_string()),
        ("bytes_z", r.bytes_z.to_string()),
        ("bytes_y", r.bytes_y.to_string()),
    ];
    if let Some(bpp) = r.bpp {
        f.push(("bpp", fmt_f(bpp)));
    }
    f
}

fn cmd_encode(a: &EncodeArgs, io: &mut Io) -> Result<()> {
    for p in [&a.weights.weights, &a.y, &a.z] {
        require_file(p)?;
    }
    let pixels = a.pixels.get()?;
    let w = load_weights(&a.weights.weights)?;
    let (y, z) = (load_tensor(&a.y)?, load_tensor(&a.z)?);
    let estimate = estimate_bits(&y, &z, &w)?;
    let enc = encode_detailed(&y, &z, &w, path_flag(a.reference))?;
    write_atomic(&a.out, &enc.container.to_bytes()?)?;
    let report = RateReport::from_encoded(&enc, estimate, pixels);
    let mut fields = vec![("status", "ok".to_string()), ("command", "encode".into())];
    fields.extend(report_fields(&report));
    fields.push(("channels_coded", enc.container.flags.count_set().to_string()));
    io.record(&fields)?;
    io.note(&format!(
        "encoded {}x{}x{} latents into {} bytes ({} of {} channels coded)",
        y.height(),
        y.width(),
        y.channels(),
        report.bytes_actual_total,
        enc.container.flags.count_set(),
        y.channels()
    ));
    Ok(())
}

fn cmd_decode(a: &DecodeArgs, io: &mut Io) -> Result<()> {
    for p in [&a.weights.weights, &a.input] {
        require_file(p)?;
    }
    let w = load_weights(&a.weights.weights)?;
    let container = BitstreamContainer::from_bytes(&fs::read(&a.input)?)?;
    let (y, z) = decode_with(&container, &w, path_flag(a.reference))?;
    write_atomic(&a.y_out, &tensor_to_bytes(&y, DType::I32)?)?;
    write_atomic(&a.z_out, &tensor_to_bytes(&z, DType::I32)?)?;
    let (h, wd, c) = y.dims();
    let (hz, wz, cz) = z.dims();
    io.record(&[
        ("status", "ok".into()),
        ("command", "decode".into()),
        ("y_dims", format!("{h}x{wd}x{c}")),
        ("z_dims", format!("{hz}x{wz}x{cz}")),
    ])?;
    io.note(&format!("decoded {h}x{wd}x{c} latents and {hz}x{wz}x{cz} hyper latents"));
    Ok(())
}

fn cmd_estimate(a: &EstimateArgs, io: &mut Io) -> Result<()> {
    for p in [&a.weights.weights, &a.y, &a.z] {
        require_file(p)?;
    }
    let pixels = a.pixels.get()?;
    let w = load_weights(&a.weights.weights)?;
    let (y, z) = (load_tensor(&a.y)?, load_tensor(&a.z)?);
    let e = estimate_bits(&y, &z, &w)?;
    let mut fields = vec![
        ("status", "ok".to_string()),
        ("command", "estimate".into()),
        ("bits_y_estimate", fmt_f(e.bits_y)),
        ("bits_z_estimate", fmt_f(e.bits_z)),
    ];
    if let Some((pw, ph)) = pixels {
        fields.push(("bpp_estimate", fmt_f((e.bits_y + e.bits_z) / (pw * ph) as f64)));
    }
    io.record(&fields)?;
    io.note(&format!("estimated {:.1} bits total", e.bits_y + e.bits_z));
    Ok(())
}

fn cmd_metrics(a: &MetricsArgs, io: &mut Io) -> Result<()> {
    require_file(&a.original)?;
    require_file(&a.reconstructed)?;
    let x = ImagePlane::read_pnm(&a.original)?;
    let y = ImagePlane::read_pnm(&a.reconstructed)?;
    let p = psnr(&x, &y)?;
    let sets: &[(&str, MsSsimWeights)] = match a.ms_ssim_weights {
        WeightSet::Default => &[("default", MsSsimWeights::DEFAULT)],
        WeightSet::Average => &[("average", MsSsimWeights::AVERAGE)],
        WeightSet::Both => &[("default", MsSsimWeights::DEFAULT), ("average", MsSsimWeights::AVERAGE)],
    };
    for (name, w) in sets {
        let v = ms_ssim(&x, &y, w)?;
        let db = if v < 1.0 { fmt_f(ms_ssim_db(v)?) } else { "inf".into() };
        io.record(&[
            ("status", "ok".into()),
            ("command", "metrics".into()),
            ("weights", name.to_string()),
            ("ms_ssim", format!("{v:.8}")),
            ("ms_ssim_db", db),
            ("psnr", fmt_f(p)),
        ])?;
        io.note(&format!("{name} weights: MS-SSIM {v:.4}, PSNR {}", fmt_f(p)));
    }
    Ok(())
}

fn cmd_allocate(a: &AllocateArgs, io: &mut Io) -> Result<()> {
    require_file(&a.records)?;
    let menus = parse_records(&fs::read_to_string(&a.records)?)?;
    let pixels: Option<Vec<u64>> = menus.iter().map(|m| m.pixels).collect();
    let budget = match (a.budget_bytes, a.bpp) {
        (Some(b), _) => b,
        (None, Some(bpp)) => {
            let px = pixels
                .as_ref()
                .ok_or_else(|| Error::Argument("--bpp needs a pixel count for every image".into()))?;
            budget_from_bpp(bpp, px)?
        }
        (None, None) => unreachable!("clap enforces the budget group"),
    };
    let problem = AllocationProblem {
        menus: menus.iter().map(|m| m.candidates.clone()).collect(),
        budget_bytes: budget,
    };
    let r = allocate(&problem, a.granularity)?;
    for (m, &j) in menus.iter().zip(&r.choices) {
        io.record(&[
            ("image", m.image_id.clone()),
            ("candidate", m.candidate_ids[j].clone()),
            ("bytes", m.candidates[j].bytes.to_string()),
            ("quality", format!("{:.6}", m.candidates[j].quality)),
        ])?;
    }
    let mean = r.total_quality / menus.len() as f64;
    let mut fields = vec![
        ("status", "ok".to_string()),
        ("command", "allocate".into()),
        ("feasible", r.feasible.to_string()),
        ("budget_bytes", budget.to_string()),
        ("total_bytes", r.total_bytes.to_string()),
        ("mean_quality", format!("{mean:.6}")),
    ];
    if let Some(px) = &pixels {
        let total: u64 = px.iter().sum();
        if total > 0 {
            fields.push(("bpp", fmt_f(8.0 * r.total_bytes as f64 / total as f64)));
        }
    }
    io.record(&fields)?;
    io.note(&format!(
        "{} images, {} of {budget} bytes, mean quality {mean:.4}{}",
        menus.len(),
        r.total_bytes,
        if r.feasible { "" } else { " (budget infeasible)" }
    ));
    Ok(())
}

fn cmd_gen_model(a: &GenModelArgs, io: &mut Io) -> Result<()> {
    let cfg = SynthConfig {
        c_y: a.c_y,
        c_z: a.c_z,
        ctx_each: a.ctx_each,
        hyper_upsample: a.hyper_upsample,
        hidden: None,
        z_half_range: a.z_range,
    };
    let w = gen_synthetic_model(a.seed, &cfg)?;
    let mut tmp = a.out.as_os_str().to_owned();
    tmp.push(".part");
    save_weights(&w, Path::new(&tmp))?;
    fs::rename(&tmp, &a.out)?;
    io.record(&[
        ("status", "ok".into()),
        ("command", "gen-model".into()),
        ("seed", a.seed.to_string()),
        ("c_y", a.c_y.to_string()),
        ("c_z", a.c_z.to_string()),
        ("bytes", fs::metadata(&a.out)?.len().to_string()),
    ])?;
    io.note(&format!("wrote synthetic model to {}", a.out.display()));
    Ok(())
}

fn selftest_instance(rng: &mut ChaCha8Rng, w: &ModelWeights, up: usize) -> Result<Vec<(&'static str, bool)>> {
    let d = w.dims();
    let (hz, wz) = (rng.random_range(1..=4usize), rng.random_range(1..=4usize));
    let (h, wd) = (hz << up, wz << up);
    let zero_p = rng.random_range(0.0..0.9);
    let mut y = Tensor::zeros(h, wd, d.c_y)?;
    for ch in 0..d.c_y {
        if rng.random_bool(0.3) {
            continue;
        }
        for r in 0..h {
            for c in 0..wd {
                if !rng.random_bool(zero_p) {
                    y.set(r, c, ch, rng.random_range(-4i32..=4) as f32);
                }
            }
        }
    }
    let zr = w.z_pmf().z_max().min(3);
    let zdata = (0..hz * wz * d.c_z).map(|_| rng.random_range(-zr..=zr) as f32).collect();
    let z = Tensor::from_vec(hz, wz, d.c_z, zdata)?;
    let crop = encode_detailed(&y, &z, w, DecodePath::Cropped)?;
    let full = encode_detailed(&y, &z, w, DecodePath::Reference)?;
    let bytes = crop.container.to_bytes()?;
    let parsed = BitstreamContainer::from_bytes(&bytes)?;
    let dec_crop = decode_with(&parsed, w, DecodePath::Cropped)?;
    let dec_full = decode_with(&parsed, w, DecodePath::Reference)?;
    let lower = (crop.y_quantized_bits / 8.0).ceil() as usize;
    let n = crop.container.y_bytes.len();
    Ok(vec![
        ("roundtrip", dec_crop == (y.clone(), z.clone())),
        ("dual_path_decode", dec_full == dec_crop),
        ("dual_path_encode", crop.container == full.container),
        ("rate_bound", n >= lower && n <= lower + 8),
        ("container_reserialize", parsed.to_bytes()? == bytes),
    ])
}

fn cmd_selftest(a: &SelftestArgs, io: &mut Io) -> Result<()> {
    let up = 1;
    let cfg = SynthConfig {
        c_y: 8,
        c_z: 4,
        ctx_each: Some(4),
        hyper_upsample: up,
        hidden: Some(vec![16]),
        z_half_range: 6,
    };
    let w = gen_synthetic_model(a.seed, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (mut passed, mut failed) = (0usize, Vec::new());
    for i in 0..a.instances {
        for (name, ok) in selftest_instance(&mut rng, &w, up)? {
            if ok {
                passed += 1;
            } else {
                failed.push(format!("{name}#{i}"));
            }
        }
    }
    io.note(&format!("selftest: {passed} checks passed, {} failed", failed.len()));
    if !failed.is_empty() {
        return Err(Error::Internal(format!("selftest failures: {}", failed.join(","))));
    }
    io.record(&[
        ("status", "ok".into()),
        ("command", "selftest".into()),
        ("seed", a.seed.to_string()),
        ("instances", a.instances.to_string()),
        ("passed", passed.to_string()),
        ("failed", "0".into()),
    ])
}

fn error_record(code: i32, kind: &str, message: &str) -> String {
    let msg: String = message
        .chars()
        .map(|c| match c {
            '"' => '\'',
            '\n' | '\r' => ' ',
            c => c,
        })
        .collect();
    format!("status=error code={code} kind={kind} message=\"{}\"", msg.trim())
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let _ = write!(err, "{e}");
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            let _ = writeln!(out, "{}", error_record(EXIT_USAGE, "usage", &first));
            return EXIT_USAGE;
        }
    };
    let mut io = Io { out, err };
    let result = match &cli.command {
        Command::Encode(a) => cmd_encode(a, &mut io),
        Command::Decode(a) => cmd_decode(a, &mut io),
        Command::Estimate(a) => cmd_estimate(a, &mut io),
        Command::Metrics(a) => cmd_metrics(a, &mut io),
        Command::Allocate(a) => cmd_allocate(a, &mut io),
        Command::GenModel(a) => cmd_gen_model(a, &mut io),
        Command::Selftest(a) => cmd_selftest(a, &mut io),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = e.exit_code();
            let _ = writeln!(io.out, "{}", error_record(code, e.kind(), &e.to_string()));
            code
        }
    }
}
