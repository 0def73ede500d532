//! Command-line driver: reads a TOML configuration, runs one subcommand, and
//! writes plain-text reports plus binary volumes/sinograms under the output
//! directory. Exit codes: 0 success, 2 configuration or input error, 3 a
//! numerical gate failed.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::Result;
use crate::fields::{decompose, sol_projector};
use crate::geometry::{classify_covector, kt_check, Ball, CovectorClass, POLE_BAND};
use crate::grid::Tensor2Field;
use crate::io;
use crate::reconstruct::{apply_parametrix, error_report};
use crate::symbol::{ellipticity_check_angles, parametrix_symbol, principal_symbol};
use crate::transform::{adjoint_defect, mirt_adjoint, mirt_forward, normal_op, Sinogram};
use crate::vec3::{self, Vec3};

#[derive(Parser)]
#[command(
    name = "mirt",
    version,
    about = "Restricted mixed ray transform on 3D 2-tensor fields"
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// override the configured random seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// override the configured worker thread count (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// override the configured output directory
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the configured phantom and write it as an MRT1 volume
    Phantom,
    /// Sample the Kirillov-Tuy statistics of the configured curve
    KtCheck {
        /// number of (point, direction) draws
        #[arg(long, default_value_t = 1024)]
        samples: usize,
    },
    /// Apply the forward transform to the phantom (or an input volume)
    Forward {
        /// MRT1 tensor volume to project instead of the phantom
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Check the adjoint pairing identity on seeded random pairs
    AdjointTest {
        /// number of random (field, sinogram) pairs
        #[arg(long, default_value_t = 20)]
        pairs: usize,
    },
    /// Apply the normal operator to the phantom (or an input volume)
    Normal {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Split the phantom (or an input volume) into solenoidal, potential and
    /// trace parts
    Decompose {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Tabulate the principal symbol and parametrix identity at sampled
    /// covectors
    Symbol {
        /// number of sampled covectors in the recoverable class
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Certify the chord constraint system on seeded random angle tuples
    Ellipticity {
        #[arg(long, default_value_t = 1000)]
        tuples: usize,
    },
    /// Full pipeline: forward, backproject, apply the parametrix, report
    Reconstruct {
        /// MSN1 sinogram to invert instead of simulating the phantom
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

/// Parse arguments and execute; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let mut cfg = match cli.config.as_deref().map(Config::load).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.run.threads = t;
    }
    if let Some(d) = cli.output_dir {
        cfg.run.output_dir = d;
    }
    if cfg.run.threads > 0 {
        // ignore the error if a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.threads)
            .build_global();
    }
    match dispatch(&cli.cmd, &cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: &Cmd, cfg: &Config) -> Result<i32> {
    std::fs::create_dir_all(&cfg.run.output_dir)?;
    match cmd {
        Cmd::Phantom => cmd_phantom(cfg),
        Cmd::KtCheck { samples } => cmd_kt_check(cfg, *samples),
        Cmd::Forward { input } => cmd_forward(cfg, input.as_deref()),
        Cmd::AdjointTest { pairs } => cmd_adjoint_test(cfg, *pairs),
        Cmd::Normal { input } => cmd_normal(cfg, input.as_deref()),
        Cmd::Decompose { input } => cmd_decompose(cfg, input.as_deref()),
        Cmd::Symbol { samples } => cmd_symbol(cfg, *samples),
        Cmd::Ellipticity { tuples } => cmd_ellipticity(cfg, *tuples),
        Cmd::Reconstruct { input } => cmd_reconstruct(cfg, input.as_deref()),
    }
}

fn input_field(cfg: &Config, input: Option<&std::path::Path>) -> Result<Tensor2Field> {
    match input {
        Some(p) => io::read_tensor(p),
        None => cfg.phantom.build(&cfg.grid.to_grid()?),
    }
}

fn cmd_phantom(cfg: &Config) -> Result<i32> {
    let grid = cfg.grid.to_grid()?;
    let f = cfg.phantom.build(&grid)?;
    let path = cfg.run.output_dir.join("phantom.mrt");
    io::write_tensor(&path, &f)?;
    println!("wrote {}", path.display());
    println!("phantom_l2_norm = {:.6e}", f.norm_l2());
    Ok(0)
}

fn cmd_kt_check(cfg: &Config, samples: usize) -> Result<i32> {
    let curve = cfg.curve.to_curve()?;
    let ball = Ball {
        center: [0.0; 3],
        radius: 1.0,
    };
    let report = kt_check(&curve, ball, samples, cfg.run.seed)?;
    let path = cfg.run.output_dir.join("kt_report.txt");
    std::fs::write(&path, report.to_kv())?;
    println!("{report}");
    println!("wrote {}", path.display());
    Ok(0)
}

/// Additive Gaussian noise via the Box-Muller transform.
fn add_noise(sino: &mut Sinogram, sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    for v in &mut sino.values {
        v[0] += sigma * gauss();
        v[1] += sigma * gauss();
    }
}

fn cmd_forward(cfg: &Config, input: Option<&std::path::Path>) -> Result<i32> {
    let grid = cfg.grid.to_grid()?;
    let f = input_field(cfg, input)?;
    let ls = cfg.lines.to_line_set(cfg.curve.to_curve()?, &grid)?;
    let mut sino = mirt_forward(&ls, &f)?;
    add_noise(&mut sino, cfg.run.noise_sigma, cfg.run.seed);
    let file = io::SinogramFile::from_sinogram(&ls, &sino)?;
    let path = cfg.run.output_dir.join("sinogram.msn");
    io::write_sinogram(&path, &file)?;
    println!("wrote {}", path.display());
    println!("n_lines = {}", ls.n_lines());
    Ok(0)
}

fn cmd_adjoint_test(cfg: &Config, pairs: usize) -> Result<i32> {
    let grid = cfg.grid.to_grid()?;
    let ls = cfg.lines.to_line_set(cfg.curve.to_curve()?, &grid)?;
    let mut max_defect = 0.0f64;
    for i in 0..pairs {
        let d = adjoint_defect(&ls, &grid, cfg.run.seed.wrapping_add(i as u64))?;
        max_defect = max_defect.max(d);
    }
    let tol = cfg.tolerances.adjoint_defect;
    let text = format!(
        "pairs = {pairs}\nmax_adjoint_defect = {max_defect:.6e}\ntolerance = {tol:.6e}\n"
    );
    std::fs::write(cfg.run.output_dir.join("adjoint_report.txt"), &text)?;
    print!("{text}");
    if max_defect > tol {
        eprintln!("adjoint defect {max_defect:.3e} exceeds tolerance {tol:.3e}");
        return Ok(3);
    }
    Ok(0)
}

fn cmd_normal(cfg: &Config, input: Option<&std::path::Path>) -> Result<i32> {
    let grid = cfg.grid.to_grid()?;
    let f = input_field(cfg, input)?;
    let ls = cfg.lines.to_line_set(cfg.curve.to_curve()?, &grid)?;
    let nf = normal_op(&ls, &f)?;
    let path = cfg.run.output_dir.join("nf.mrt");
    io::write_tensor(&path, &nf)?;
    println!("wrote {}", path.display());
    println!("nf_l2_norm = {:.6e}", nf.norm_l2());
    Ok(0)
}

fn cmd_decompose(cfg: &Config, input: Option<&std::path::Path>) -> Result<i32> {
    let f = input_field(cfg, input)?;
    let d = decompose(&f)?;
    let out = &cfg.run.output_dir;
    io::write_tensor(out.join("f_s.mrt"), &d.f_s)?;
    io::write_vector(out.join("u.mrv"), &d.u)?;
    io::write_scalar(out.join("w.mrs"), &d.w)?;
    let div = crate::fields::delta_prime(&d.f_s);
    let tr = crate::fields::mu_trace(&d.f_s);
    let fs_norm = d.f_s.norm_l2().max(1e-30);
    let text = format!(
        "f_s_l2_norm = {:.6e}\nu_l2_norm = {:.6e}\nw_l2_norm = {:.6e}\nrel_divergence_residual = {:.6e}\nrel_trace_residual = {:.6e}\n",
        d.f_s.norm_l2(),
        d.u.norm_l2(),
        d.w.norm_l2(),
        div.norm_l2() / fs_norm,
        tr.norm_l2() / fs_norm
    );
    std::fs::write(out.join("decompose_report.txt"), &text)?;
    print!("{text}");
    Ok(0)
}

/// Seeded covector draws: x uniform in the ball of radius 0.8, direction
/// uniform on the sphere outside the pole band.
fn draw_covector(rng: &mut ChaCha8Rng) -> (Vec3, Vec3) {
    let x = loop {
        let p: Vec3 = std::array::from_fn(|_| rng.gen_range(-0.8..0.8));
        if vec3::dot(p, p) <= 0.64 {
            break p;
        }
    };
    let xi = loop {
        let v: Vec3 = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = vec3::norm(v);
        if n > 1e-3 && n <= 1.0 {
            let u = [v[0] / n, v[1] / n, v[2] / n];
            if u[2].abs() <= (POLE_BAND).cos() {
                break u;
            }
        }
    };
    (x, xi)
}

fn cmd_symbol(cfg: &Config, samples: usize) -> Result<i32> {
    let curve = cfg.curve.to_curve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut table = String::from(
        "# x1 x2 x3 xi1 xi2 xi3 rank sigma1..sigma9 parametrix_residual\n",
    );
    let mut n_done = 0usize;
    let mut max_residual = 0.0f64;
    let mut attempts = 0usize;
    while n_done < samples {
        attempts += 1;
        if attempts > 200 * samples.max(1) {
            break;
        }
        let (x, xi) = draw_covector(&mut rng);
        match classify_covector(&curve, x, xi) {
            Ok(CovectorClass::XiPrime) => {}
            _ => continue,
        }
        let a0 = match principal_symbol(&curve, x, xi) {
            Ok(a) => a,
            Err(_) => continue,
        };
        let mut sv: Vec<f64> = a0.symmetric_eigen().eigenvalues.iter().map(|v| v.abs()).collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let rank = sv.iter().filter(|s| **s > cfg.tolerances.tau_rank * sv[0]).count();
        let b0 = parametrix_symbol(&curve, x, xi)?;
        let pi = sol_projector(xi)?;
        let residual = (b0 * a0 - pi).norm();
        max_residual = max_residual.max(residual);
        table.push_str(&format!(
            "{:+.6} {:+.6} {:+.6} {:+.6} {:+.6} {:+.6} {} ",
            x[0], x[1], x[2], xi[0], xi[1], xi[2], rank
        ));
        for s in &sv {
            table.push_str(&format!("{s:.6e} "));
        }
        table.push_str(&format!("{residual:.6e}\n"));
        n_done += 1;
    }
    let path = cfg.run.output_dir.join("symbol_table.txt");
    std::fs::write(&path, &table)?;
    println!("sampled = {n_done}");
    println!("max_parametrix_residual = {max_residual:.6e}");
    println!("wrote {}", path.display());
    if n_done < samples {
        eprintln!("only {n_done} of {samples} requested covectors found");
        return Ok(3);
    }
    if max_residual > cfg.tolerances.parametrix_identity {
        eprintln!(
            "parametrix residual {max_residual:.3e} exceeds {:.3e}",
            cfg.tolerances.parametrix_identity
        );
        return Ok(3);
    }
    Ok(0)
}

fn cmd_ellipticity(cfg: &Config, tuples: usize) -> Result<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut min_sv = f64::INFINITY;
    let mut max_pair_err = 0.0f64;
    let mut max_rot_err = 0.0f64;
    for _ in 0..tuples {
        // admissible tuple: pairwise angle gaps away from multiples of pi
        let alphas: [f64; 3] = loop {
            let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::PI));
            let ok = (0..3).all(|i| {
                ((i + 1)..3).all(|j| (a[i] - a[j]).sin().abs() > 1e-3)
            });
            if ok {
                break a;
            }
        };
        let beta1 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let rep = ellipticity_check_angles(alphas, beta1)?;
        min_sv = min_sv.min(rep.min_singular_value);
        max_pair_err = max_pair_err.max((rep.pair_det - (alphas[0] - alphas[1]).sin()).abs());
        max_rot_err = max_rot_err.max((rep.rotation_det - 1.0).abs());
    }
    let text = format!(
        "tuples = {tuples}\nmin_singular_value = {min_sv:.6e}\nmax_pair_det_error = {max_pair_err:.6e}\nmax_rotation_det_error = {max_rot_err:.6e}\n"
    );
    std::fs::write(cfg.run.output_dir.join("ellipticity_report.txt"), &text)?;
    print!("{text}");
    if min_sv <= cfg.tolerances.elliptic_min_sv || max_pair_err > 1e-12 || max_rot_err > 1e-12 {
        eprintln!("ellipticity gate failed");
        return Ok(3);
    }
    Ok(0)
}

fn cmd_reconstruct(cfg: &Config, input: Option<&std::path::Path>) -> Result<i32> {
    let start = Instant::now();
    let grid = cfg.grid.to_grid()?;
    let curve = cfg.curve.to_curve()?;
    let ls = cfg.lines.to_line_set(curve.clone(), &grid)?;
    let out = &cfg.run.output_dir;

    let (sino, reference) = match input {
        Some(p) => (io::read_sinogram(p)?.to_sinogram(), None),
        None => {
            let f = cfg.phantom.build(&grid)?;
            let f_s = decompose(&f)?.f_s;
            io::write_tensor(out.join("f_s.mrt"), &f_s)?;
            let mut sino = mirt_forward(&ls, &f)?;
            add_noise(&mut sino, cfg.run.noise_sigma, cfg.run.seed);
            (sino, Some(f_s))
        }
    };
    let nf = mirt_adjoint(&ls, &grid, &sino)?;
    io::write_tensor(out.join("nf.mrt"), &nf)?;
    let f_rec = apply_parametrix(&curve, &nf, &cfg.reconstruct)?;
    io::write_tensor(out.join("f_rec.mrt"), &f_rec)?;

    let mut text = String::new();
    if let Some(f_s) = &reference {
        let rep = error_report(&f_rec, f_s)?;
        text.push_str(&rep.to_kv());
    }
    text.push_str(&format!("runtime_s = {:.3}\n", start.elapsed().as_secs_f64()));
    std::fs::write(out.join("recon_report.txt"), &text)?;
    print!("{text}");
    println!("wrote {}", out.join("f_rec.mrt").display());
    Ok(0)
}
