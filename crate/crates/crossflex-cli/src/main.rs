//! Command line front end for the crossflex library: construct flexible
//! cross-polytopes from spec files, sample and export flexes, verify them
//! numerically, classify shape pairs, dump curve coefficients, fit elliptic
//! parameters, and emit ready-made witness specs.
//!
//! Exit codes: 0 success, 1 verification failure, 2 invalid input (parse or
//! domain errors), 3 not realisable in the requested geometry, 4 mesh export
//! requested for a shape it cannot represent.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crossflex::butterfly::{classify_with_diagnostics, Classification, ClassifyDiagnostics, GHPair};
use crossflex::epbq::{coeffs, fit_elliptic, CurveCoeffs, EpbqCurve};
use crossflex::flexbuild::{
    build, frame_at, u_grid, verify, witness, BiquadCoeffs, Family, FlexSpec, FlexiblePolytope,
    Frame, VerifyOptions,
};
use crossflex::geometry::{AmbientVector, SpaceKind};

#[derive(Parser)]
#[command(
    name = "crossflex",
    version,
    about = "Construct, flex, and verify flexible cross-polytopes in spaces of constant curvature"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a polytope from a spec file and write its full description.
    Construct {
        /// Spec JSON file.
        spec: PathBuf,
        /// Output file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample frames along the flex.
    Flex {
        /// Spec JSON file.
        spec: PathBuf,
        /// Number of flex parameter samples.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Jitter the sample grid deterministically.
        #[arg(long)]
        seed: Option<u64>,
        /// Output file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one OBJ mesh per frame (euclidean, n = 3 only).
        #[arg(long)]
        obj_dir: Option<PathBuf>,
    },
    /// Run the verification suite; exit 0 only if every check passes.
    Verify {
        /// Spec JSON file.
        spec: PathBuf,
        /// Number of flex parameter samples.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Jitter the sample grid deterministically.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace every check tolerance with this value.
        #[arg(long)]
        tol: Option<f64>,
        /// Report file (stdout if omitted); written for failing runs too.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decide which geometry, if any, realises a shape pair file.
    Classify {
        /// Shape pair JSON file ({"n": .., "G": [..], "H": [..]}).
        gh: PathBuf,
        /// Output file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the pairwise coefficient matrices of a curve file.
    Coeffs {
        /// Curve JSON file ({"family": .., ..}).
        curve: PathBuf,
        /// Output file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recover elliptic curve parameters from a coefficient file.
    Fit {
        /// Coefficient JSON file (as written by coeffs).
        coeffs: PathBuf,
        /// Output file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a ready-to-build spec for a family and space.
    Witness {
        /// simplest | rational | elliptic1 | elliptic2 | exotic
        family: String,
        /// euclidean | spherical | hyperbolic
        space: String,
        /// Comma separated block sizes, e.g. "2,1".
        sizes: String,
        /// Scaffold scale for simplest/rational/elliptic, complementary
        /// modulus for exotic.
        param: f64,
        /// Count of non-quotient coordinates for elliptic families
        /// (default: every coordinate).
        #[arg(long)]
        m_prime: Option<usize>,
        /// Exotic variant, 1 to 3.
        #[arg(long, default_value_t = 1)]
        alpha: u8,
        /// Output file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Display) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

impl From<crossflex::Error> for Failure {
    fn from(e: crossflex::Error) -> Self {
        let code = match &e {
            crossflex::Error::NotRealisable { .. } | crossflex::Error::OutsideAllGeometries(_) => 3,
            _ => 2,
        };
        Failure::new(code, e)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Construct { spec, out } => cmd_construct(&spec, out.as_deref()),
        Command::Flex {
            spec,
            samples,
            seed,
            out,
            obj_dir,
        } => cmd_flex(&spec, samples, seed, out.as_deref(), obj_dir.as_deref()),
        Command::Verify {
            spec,
            samples,
            seed,
            tol,
            out,
        } => cmd_verify(&spec, samples, seed, tol, out.as_deref()),
        Command::Classify { gh, out } => cmd_classify(&gh, out.as_deref()),
        Command::Coeffs { curve, out } => cmd_coeffs(&curve, out.as_deref()),
        Command::Fit { coeffs, out } => cmd_fit(&coeffs, out.as_deref()),
        Command::Witness {
            family,
            space,
            sizes,
            param,
            m_prime,
            alpha,
            out,
        } => cmd_witness(&family, &space, &sizes, param, m_prime, alpha, out.as_deref()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::new(2, format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Failure> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Failure::new(2, e.to_string()))?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Failure::new(2, format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn coord_list(v: &AmbientVector) -> Vec<f64> {
    v.coords.iter().copied().collect()
}

#[derive(Serialize)]
struct ButterflyWire {
    normals: Vec<Vec<f64>>,
    m_normal: Vec<f64>,
    alt_a: Vec<f64>,
    alt_b: Vec<f64>,
    anchors_a: Vec<Vec<f64>>,
    anchors_b0: Vec<Vec<f64>>,
    duals: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct PolytopeWire<'a> {
    space: SpaceKind,
    spec: &'a FlexSpec,
    classification: Classification,
    gh: &'a GHPair,
    biquad: &'a BiquadCoeffs,
    butterfly: ButterflyWire,
}

fn polytope_wire(poly: &FlexiblePolytope) -> PolytopeWire<'_> {
    let fly = &poly.butterfly;
    PolytopeWire {
        space: poly.space(),
        spec: &poly.spec,
        classification: crossflex::butterfly::classify(&poly.gh),
        gh: &poly.gh,
        biquad: &poly.biquad,
        butterfly: ButterflyWire {
            normals: fly.normals.iter().map(coord_list).collect(),
            m_normal: coord_list(&fly.m_normal),
            alt_a: fly.alt_a.clone(),
            alt_b: fly.alt_b.clone(),
            anchors_a: fly.anchors_a.iter().map(coord_list).collect(),
            anchors_b0: fly.anchors_b0.iter().map(coord_list).collect(),
            duals: fly.duals.iter().map(coord_list).collect(),
        },
    }
}

fn cmd_construct(spec_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let spec: FlexSpec = read_json(spec_path)?;
    let poly = build(&spec, None)?;
    write_json(&polytope_wire(&poly), out)
}

#[derive(Serialize)]
struct FrameWire {
    u: f64,
    vertices_a: Vec<Vec<f64>>,
    vertices_b: Vec<Vec<f64>>,
    phi: Vec<f64>,
}

fn frame_wire(frame: &Frame) -> FrameWire {
    FrameWire {
        u: frame.u,
        vertices_a: frame.vertices_a.iter().map(coord_list).collect(),
        vertices_b: frame.vertices_b.iter().map(coord_list).collect(),
        phi: frame.dihedral.phi.clone(),
    }
}

/// The eight triangular facets of the n = 3 cross-polytope: one vertex of
/// each opposite pair, so face bits select wing (b) over facet (a) vertices.
/// OBJ indices are 1-based with a_1..a_3 = 1..3, b_1..b_3 = 4..6.
fn write_obj(dir: &Path, idx: usize, frame: &Frame) -> Result<(), Failure> {
    let mut text = String::new();
    for v in frame.vertices_a.iter().chain(frame.vertices_b.iter()) {
        text.push_str(&format!(
            "v {} {} {}\n",
            v.coords[0], v.coords[1], v.coords[2]
        ));
    }
    for mask in 0..8u32 {
        let pick = |i: usize| {
            if mask & (1 << i) != 0 {
                i + 4
            } else {
                i + 1
            }
        };
        text.push_str(&format!("f {} {} {}\n", pick(0), pick(1), pick(2)));
    }
    let path = dir.join(format!("frame_{idx:04}.obj"));
    fs::write(&path, text)
        .map_err(|e| Failure::new(2, format!("cannot write {}: {e}", path.display())))
}

fn cmd_flex(
    spec_path: &Path,
    samples: usize,
    seed: Option<u64>,
    out: Option<&Path>,
    obj_dir: Option<&Path>,
) -> Result<(), Failure> {
    let spec: FlexSpec = read_json(spec_path)?;
    let poly = build(&spec, None)?;
    if let Some(dir) = obj_dir {
        if poly.space() != SpaceKind::Euclidean || poly.n() != 3 {
            return Err(Failure::new(
                4,
                format!(
                    "OBJ export covers euclidean polytopes with n = 3 only; \
                     this one is {} with n = {}",
                    poly.space(),
                    poly.n()
                ),
            ));
        }
        fs::create_dir_all(dir)
            .map_err(|e| Failure::new(2, format!("cannot create {}: {e}", dir.display())))?;
    }
    let (us, _) = u_grid(&poly.spec.curve, samples, seed)?;
    let frames: Vec<Frame> = us.iter().map(|&u| frame_at(&poly, u)).collect();
    if let Some(dir) = obj_dir {
        for (idx, frame) in frames.iter().enumerate() {
            write_obj(dir, idx, frame)?;
        }
    }
    let wires: Vec<FrameWire> = frames.iter().map(frame_wire).collect();
    write_json(&wires, out)
}

fn cmd_verify(
    spec_path: &Path,
    samples: usize,
    seed: Option<u64>,
    tol: Option<f64>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let spec: FlexSpec = read_json(spec_path)?;
    let poly = build(&spec, None)?;
    let report = verify(
        &poly,
        &VerifyOptions {
            samples,
            seed,
            tolerance_override: tol,
        },
    )?;
    write_json(&report, out)?;
    if report.pass() {
        Ok(())
    } else {
        let failing: Vec<&str> = report
            .checks()
            .iter()
            .filter(|(_, c)| !c.pass)
            .map(|(name, _)| *name)
            .collect();
        Err(Failure::new(
            1,
            format!("verification failed: {}", failing.join(", ")),
        ))
    }
}

#[derive(Serialize)]
struct ClassifyWire {
    classification: Classification,
    diagnostics: ClassifyDiagnostics,
}

fn cmd_classify(gh_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let pair: GHPair = read_json(gh_path)?;
    let (classification, diagnostics) = classify_with_diagnostics(&pair);
    write_json(
        &ClassifyWire {
            classification,
            diagnostics,
        },
        out,
    )
}

fn cmd_coeffs(curve_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let curve: EpbqCurve = read_json(curve_path)?;
    let c = coeffs(&curve)?;
    write_json(&c, out)
}

fn cmd_fit(coeffs_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let c: CurveCoeffs = read_json(coeffs_path)?;
    let fit = fit_elliptic(&c)?;
    write_json(&fit, out)
}

fn cmd_witness(
    family: &str,
    space: &str,
    sizes: &str,
    param: f64,
    m_prime: Option<usize>,
    alpha: u8,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let sizes: Vec<usize> = sizes
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Failure::new(2, format!("block sizes must be integers, got \"{s}\"")))
        })
        .collect::<Result<_, _>>()?;
    let space = match space {
        "euclidean" => SpaceKind::Euclidean,
        "spherical" => SpaceKind::Spherical,
        "hyperbolic" => SpaceKind::Hyperbolic,
        other => {
            return Err(Failure::new(
                2,
                format!("unknown space \"{other}\" (euclidean | spherical | hyperbolic)"),
            ))
        }
    };
    let family = match family {
        "simplest" => Family::Simplest,
        "rational" => Family::Rational,
        "elliptic1" => Family::Elliptic {
            kind: 1,
            m_prime: m_prime.unwrap_or(sizes.len()),
        },
        "elliptic2" => Family::Elliptic {
            kind: 2,
            m_prime: m_prime.unwrap_or(sizes.len()),
        },
        "exotic" => Family::Exotic { alpha },
        other => {
            return Err(Failure::new(
                2,
                format!(
                    "unknown family \"{other}\" \
                     (simplest | rational | elliptic1 | elliptic2 | exotic)"
                ),
            ))
        }
    };
    let spec = witness(family, space, &sizes, param)?;
    write_json(&spec, out)
}
