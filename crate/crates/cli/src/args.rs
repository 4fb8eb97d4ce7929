use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "headfit",
    version,
    about = "Head model fitting, shape augmentation, UV texturing and evaluation"
)]
pub struct Cli {
    /// Master seed for every random draw (overrides [run].seed)
    #[arg(long, global = true, env = "HEADFIT_SEED")]
    pub seed: Option<u64>,

    /// TOML configuration file
    #[arg(long, global = true, env = "HEADFIT_CONFIG")]
    pub config: Option<PathBuf>,

    /// Worker threads; 1 runs everything on the calling thread
    #[arg(long, global = true, env = "HEADFIT_JOBS")]
    pub jobs: Option<usize>,

    /// Append run events to this JSON Lines file
    #[arg(long, global = true, env = "HEADFIT_LOG")]
    pub log: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Encode a deformed mesh as a DR feature of a reference mesh
    EncodeDr(EncodeArgs),
    /// Reconstruct a mesh from a DR feature
    DecodeDr(DecodeArgs),
    /// Generate new shapes by interpolating DR features within a group
    Sample(SampleArgs),
    /// Fit pose, expression and corrective field to 2D landmarks
    Fit(FitArgs),
    /// Project a photograph into UV space and blend it onto a background texture
    Texture(TextureArgs),
    /// Align prediction to ground truth and report ARMSE per crop radius
    Eval(EvalArgs),
    /// Write a per-vertex error heatmap as a colored PLY
    Heatmap(HeatmapArgs),
    /// Write a procedural head, anchors, basis, landmarks, images and a small dataset
    Synth(SynthArgs),
    /// Print the effective configuration as TOML
    Config,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Reference (undeformed) mesh
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Deformed mesh with the reference topology
    #[arg(long)]
    pub mesh: PathBuf,
    /// Output feature file; a `.json` meta sidecar is written next to it
    #[arg(long, short)]
    pub out: PathBuf,
    /// Reference name stored in the meta sidecar
    #[arg(long)]
    pub name: Option<String>,
    /// Decode again and report the round-trip error
    #[arg(long)]
    pub verify: bool,
    /// Vertex pinned during the verification decode
    #[arg(long, default_value_t = 0)]
    pub anchor: usize,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub feature: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Pinned vertex
    #[arg(long, default_value_t = 0)]
    pub anchor: usize,
    /// Position of the pinned vertex (default: its reference position)
    #[arg(long, value_parser = parse_list::<f64, 3>)]
    pub anchor_position: Option<[f64; 3]>,
    /// Mesh to compare the reconstruction against
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Dataset manifest (overrides [paths].manifest)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Draw every sample from this group, e.g. asian_male
    #[arg(long, conflicts_with_all = ["ratios", "gender_ratios"])]
    pub group: Option<String>,
    /// Ethnicity proportions asian,caucasian,black (default from config)
    #[arg(long, value_parser = parse_list::<f64, 3>)]
    pub ratios: Option<[f64; 3]>,
    /// Gender proportions male,female
    #[arg(long, value_parser = parse_list::<f64, 2>)]
    pub gender_ratios: Option<[f64; 2]>,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Members interpolated per sample (overrides [sampler].m)
    #[arg(long)]
    pub m: Option<usize>,
    /// Output directory (overrides [run].output_dir)
    #[arg(long, short)]
    pub out_dir: Option<PathBuf>,
    /// Also write each sampled DR feature
    #[arg(long)]
    pub features: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Landmark file (JSON: markup, points, optional indices)
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Image size WIDTHxHEIGHT
    #[arg(long, value_parser = parse_size, required_unless_present = "image")]
    pub image_size: Option<(u32, u32)>,
    /// Take the image size from this PPM instead
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    /// Expression blendshapes (omit for none)
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long, short)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TextureArgs {
    /// Fit result written by `fit`
    #[arg(long)]
    pub fit: PathBuf,
    /// Source photograph (binary PPM)
    #[arg(long)]
    pub image: PathBuf,
    /// Background UV texture (binary PPM); its size sets the output size
    #[arg(long)]
    pub background: PathBuf,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Required output size WIDTHxHEIGHT; must match the background
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(u32, u32)>,
    /// JSON list of UV polygons never taken from the photograph
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    /// Output texture (PPM); the mask goes next to it as `<stem>_mask.pgm`
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write the unblended projection
    #[arg(long)]
    pub projected: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "pairs")]
    pub gt: Option<PathBuf>,
    #[arg(long, required_unless_present = "pairs")]
    pub pred: Option<PathBuf>,
    /// JSON list of {"model", "gt", "pred"} entries evaluated independently
    #[arg(long, conflicts_with_all = ["gt", "pred"])]
    pub pairs: Option<PathBuf>,
    #[arg(long, default_value = "model")]
    pub model: String,
    /// Seven ground-truth alignment vertex indices (default: the `alignment` label)
    #[arg(long, value_parser = parse_list::<usize, 7>)]
    pub gt_landmarks: Option<[usize; 7]>,
    #[arg(long, value_parser = parse_list::<usize, 7>)]
    pub pred_landmarks: Option<[usize; 7]>,
    /// Crop radii in mm (overrides [eval].radii)
    #[arg(long = "d", value_delimiter = ',')]
    pub radii: Option<Vec<f64>>,
    /// Write the report here instead of stdout
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Also write a heatmap of the aligned prediction (single pair only)
    #[arg(long, conflicts_with = "pairs")]
    pub heatmap: Option<PathBuf>,
    /// Heatmap saturation distance in mm (overrides [heatmap].tolerance)
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Align first (seven alignment vertices, then ICP)
    #[arg(long)]
    pub align: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, short)]
    pub out_dir: PathBuf,
    /// Dataset members per group
    #[arg(long, default_value_t = 6)]
    pub per_group: usize,
    /// Ring count of the procedural head
    #[arg(long, default_value_t = 20)]
    pub rings: usize,
    #[arg(long, default_value_t = 24)]
    pub segments: usize,
    /// Photograph size WIDTHxHEIGHT
    #[arg(long, value_parser = parse_size, default_value = "640x480")]
    pub image_size: (u32, u32),
    /// UV texture size WIDTHxHEIGHT
    #[arg(long, value_parser = parse_size, default_value = "256x256")]
    pub texture_size: (u32, u32),
    /// Landmark noise in pixels
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

pub fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let w: u32 = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h: u32 = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err(format!("size {s} must be positive"));
    }
    Ok((w, h))
}

/// Exactly `N` comma-separated values.
pub fn parse_list<T, const N: usize>(s: &str) -> Result<[T; N], String>
where
    T: std::str::FromStr + Copy + Default,
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated values, got {}", parts.len()));
    }
    let mut out = [T::default(); N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn parser_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn sizes() {
        assert_eq!(parse_size("640x480"), Ok((640, 480)));
        assert!(parse_size("640").is_err());
        assert!(parse_size("0x4").is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<f64, 3>("1, 2,3.5"), Ok([1.0, 2.0, 3.5]));
        assert!(parse_list::<f64, 3>("1,2").is_err());
        assert!(parse_list::<usize, 2>("1,-2").is_err());
        let cli = Cli::try_parse_from([
            "headfit",
            "decode-dr",
            "--feature",
            "f.dr",
            "-o",
            "x.obj",
            "--anchor-position",
            "0,1,2",
        ])
        .unwrap();
        let Command::DecodeDr(d) = cli.command else { panic!() };
        assert_eq!(d.anchor_position, Some([0.0, 1.0, 2.0]));
    }

    #[test]
    fn global_flags_anywhere() {
        let cli = Cli::try_parse_from(["headfit", "sample", "--count", "3", "--seed", "42", "--jobs", "2"]).unwrap();
        assert_eq!((cli.seed, cli.jobs), (Some(42), Some(2)));
        let Command::Sample(s) = cli.command else { panic!() };
        assert_eq!(s.count, 3);
    }
}
