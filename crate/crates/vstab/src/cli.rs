//! Command-line front end: load-model fitting, P-V curve tracing, modal
//! classification, and time-domain simulation, emitting CSV and optional SVG.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::continuation::{grid, trace_manifold, write_family_csv, Manifold};
use crate::fmt::sig9;
use crate::loadmodel::{
    fit_quadratic, preset, read_measurement_file, read_model_file, write_model_file, LoadModel,
    ModelFile,
};
use crate::modal::{classify_curve, OltcParams, Stability};
use crate::network::{NetworkParams, SystemState};
use crate::perunit::{make_base, to_pu, Quantity};
use crate::tdsim::{simulate, write_trajectory_csv, SimConfig, Trajectory};

#[derive(Parser)]
#[command(
    name = "vstab",
    version,
    about = "Voltage-stability analysis of a radial source-transformer-load circuit"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Identify a quadratic load model from a measurement CSV
    Fit(FitArgs),
    /// Trace steady-state P-V curves for a family of tap ratios
    Pv(CurveArgs),
    /// Trace P-V curves and classify every point via tap-changer modal analysis
    Modal(ModalArgs),
    /// Integrate the tap-changer dynamics in time at fixed loading
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct NetArgs {
    /// Load model: a preset (aircon, resistive, inductive-095) or a model JSON path
    #[arg(long, default_value = "aircon")]
    model: String,
    /// Line reactance in ohms
    #[arg(long, default_value_t = 40.0)]
    x_ohm: f64,
    /// Voltage base in volts
    #[arg(long, default_value_t = 100e3)]
    v_base: f64,
    /// Power base in watts
    #[arg(long, default_value_t = 100e6)]
    s_base: f64,
    /// Source magnitude in per unit
    #[arg(long, default_value_t = 1.0)]
    v1: f64,
}

#[derive(Args)]
struct GridArgs {
    /// Tap ratios to trace
    #[arg(long, value_delimiter = ',', default_values_t = [0.85, 0.90, 0.95, 1.00, 1.05, 1.10])]
    taps: Vec<f64>,
    /// Lower end of the load-voltage sweep (pu)
    #[arg(long, default_value_t = 0.05)]
    v_min: f64,
    /// Upper end of the sweep (pu); default 0.999 * v1 / n, per tap
    #[arg(long)]
    v_max: Option<f64>,
    /// Sweep step (pu)
    #[arg(long, default_value_t = 1e-3)]
    v_step: f64,
}

#[derive(Args)]
struct OutArgs {
    /// Output CSV path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional SVG plot path
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Measurement CSV with header voltage_V,active_power_W,reactive_power_var
    input: PathBuf,
    /// Nominal voltage in volts used for normalization
    #[arg(long)]
    v_nominal: f64,
    /// Output model JSON path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ModalArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Tap-changer integrator time constant in seconds
    #[arg(long, default_value_t = 10.0)]
    tau: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    net: NetArgs,
    /// Loading factor, fixed for the whole run
    #[arg(long)]
    alpha: f64,
    /// Initial tap ratio
    #[arg(long, default_value_t = 1.0)]
    n0: f64,
    /// Regulation target in per unit
    #[arg(long, default_value_t = 1.0)]
    v_ref: f64,
    /// Tap-changer integrator time constant in seconds
    #[arg(long, default_value_t = 10.0)]
    tau: f64,
    /// End time in seconds (default 50 * tau)
    #[arg(long)]
    t_end: Option<f64>,
    /// Step size in seconds (default tau / 100)
    #[arg(long)]
    dt: Option<f64>,
    #[command(flatten)]
    out: OutArgs,
}

pub fn run() -> Result<()> {
    dispatch(Cli::parse())
}

/// Entry point for in-process tests; parses the full argv including the
/// program name.
pub fn run_from<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    dispatch(Cli::try_parse_from(args)?)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Pv(a) => cmd_pv(&a),
        Command::Modal(a) => cmd_modal(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

fn network_from(args: &NetArgs) -> Result<NetworkParams> {
    let base = make_base(args.v_base, args.s_base)?;
    let x_pu = to_pu(args.x_ohm, Quantity::Ohms, &base);
    Ok(NetworkParams::new(args.v1, x_pu, base)?)
}

fn resolve_model(selector: &str) -> Result<LoadModel> {
    match selector {
        "aircon" | "resistive" => Ok(preset(selector)?),
        "inductive-095" => Ok(preset("inductive_095")?),
        path_like => {
            let path = Path::new(path_like);
            if !path.exists() {
                bail!(
                    "`{path_like}` is neither a preset (aircon, resistive, inductive-095) nor a readable model file"
                );
            }
            let file = read_model_file(path)
                .with_context(|| format!("reading model file {}", path.display()))?;
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("model");
            Ok(file.to_load_model(id)?)
        }
    }
}

fn tap_grids(net: &NetworkParams, g: &GridArgs) -> Result<Vec<(f64, Vec<f64>)>> {
    if g.taps.is_empty() {
        bail!("tap list is empty");
    }
    if let Some(bad) = g.taps.iter().find(|t| !(**t > 0.0)) {
        bail!("tap ratios must be positive (got {bad})");
    }
    if !(g.v_step > 0.0) {
        bail!("--v-step must be positive (got {})", g.v_step);
    }
    if !(g.v_min > 0.0) {
        bail!("--v-min must be positive (got {})", g.v_min);
    }
    if let Some(v_max) = g.v_max {
        if v_max <= g.v_min {
            bail!("--v-max ({v_max}) must exceed --v-min ({})", g.v_min);
        }
    }
    Ok(g.taps
        .iter()
        .map(|&n| {
            let start = g.v_max.unwrap_or(0.999 * net.v1_mag / n);
            (n, grid(start, g.v_min, g.v_step))
        })
        .collect())
}

fn write_output<F>(path: Option<&PathBuf>, emit: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match path {
        Some(p) => {
            let file = File::create(p)
                .with_context(|| format!("creating output file {}", p.display()))?;
            let mut w = BufWriter::new(file);
            emit(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            emit(&mut lock)?;
        }
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let samples = read_measurement_file(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let (model, report) = fit_quadratic(&samples, a.v_nominal)?;
    println!("samples: {}", report.n_samples);
    println!(
        "p_coeffs: {} {} {}",
        sig9(model.p_z),
        sig9(model.p_i),
        sig9(model.p_p)
    );
    println!(
        "q_coeffs: {} {} {}",
        sig9(model.q_z),
        sig9(model.q_i),
        sig9(model.q_p)
    );
    println!("p_scale_W: {}", sig9(report.p_n_watts));
    println!("q_scale_var: {}", sig9(report.q_n_vars));
    println!("v_nominal_V: {}", sig9(report.v_nominal));
    println!("anchor_voltage_V: {}", sig9(report.anchor_voltage));
    println!("rms_p: {}", sig9(report.rms_p));
    println!("rms_q: {}", sig9(report.rms_q));
    println!(
        "validity_pu: {} {}",
        sig9(model.validity.0),
        sig9(model.validity.1)
    );
    let crossings = model.reactive_sign_crossings();
    if crossings.is_empty() {
        println!("q_sign_crossings_pu: none");
    } else {
        let list: Vec<String> = crossings.iter().map(|c| sig9(*c)).collect();
        println!("q_sign_crossings_pu: {}", list.join(" "));
    }
    if let Some(out) = &a.out {
        write_model_file(out, &ModelFile::from_fit(&model, &report))
            .with_context(|| format!("writing model file {}", out.display()))?;
        println!("model written to {}", out.display());
    }
    Ok(())
}

fn trace_all(net: &NetworkParams, load: &LoadModel, g: &GridArgs) -> Result<Vec<Manifold>> {
    let mut manifolds = Vec::new();
    for (n_tap, v_grid) in tap_grids(net, g)? {
        let m = trace_manifold(net, load, n_tap, &v_grid)
            .with_context(|| format!("tracing tap {n_tap}"))?;
        manifolds.push(m);
    }
    Ok(manifolds)
}

fn cmd_pv(a: &CurveArgs) -> Result<()> {
    let net = network_from(&a.net)?;
    let load = resolve_model(&a.net.model)?;
    let manifolds = trace_all(&net, &load, &a.grid)?;
    write_output(a.out.out.as_ref(), |w| {
        write_family_csv(&manifolds, false, w).map_err(Into::into)
    })?;
    if let Some(svg) = &a.out.svg {
        std::fs::write(svg, svg_curves(&manifolds, false))
            .with_context(|| format!("writing {}", svg.display()))?;
    }
    Ok(())
}

fn cmd_modal(a: &ModalArgs) -> Result<()> {
    let oltc = OltcParams::new(a.tau, 1.0)?;
    let net = network_from(&a.net)?;
    let load = resolve_model(&a.net.model)?;
    let manifolds: Vec<Manifold> = trace_all(&net, &load, &a.grid)?
        .iter()
        .map(|m| classify_curve(m, &net, &load, &oltc))
        .collect();
    write_output(a.out.out.as_ref(), |w| {
        write_family_csv(&manifolds, true, w).map_err(Into::into)
    })?;
    if let Some(svg) = &a.out.svg {
        std::fs::write(svg, svg_curves(&manifolds, true))
            .with_context(|| format!("writing {}", svg.display()))?;
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let oltc = OltcParams::new(a.tau, a.v_ref)?;
    let net = network_from(&a.net)?;
    let load = resolve_model(&a.net.model)?;
    let cfg = SimConfig {
        alpha: a.alpha,
        n_initial: a.n0,
        oltc,
        t_end: a.t_end.unwrap_or(50.0 * a.tau),
        dt: a.dt.unwrap_or(a.tau / 100.0),
        guess: SystemState::flat(net.v1_mag),
    };
    let traj = simulate(&cfg, &net, &load)?;
    write_output(a.out.out.as_ref(), |w| {
        write_trajectory_csv(&traj, w).map_err(Into::into)
    })?;
    if let Some(svg) = &a.out.svg {
        std::fs::write(svg, svg_trajectory(&traj))
            .with_context(|| format!("writing {}", svg.display()))?;
    }
    Ok(())
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 600.0;
const SVG_MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Frame {
        let mut x0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        for x in xs {
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
        let mut y0 = f64::INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for y in ys {
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() || x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 = x0 + 1.0;
        }
        if !y0.is_finite() || y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 = y0 + 1.0;
        }
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        SVG_MARGIN + (x - self.x0) / (self.x1 - self.x0) * (SVG_W - 2.0 * SVG_MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        SVG_H - SVG_MARGIN - (y - self.y0) / (self.y1 - self.y0) * (SVG_H - 2.0 * SVG_MARGIN)
    }
}

fn svg_open(frame: &Frame, x_label: &str, y_label: &str, out: &mut String) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SVG_W} {SVG_H}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let (l, r) = (SVG_MARGIN, SVG_W - SVG_MARGIN);
    let (t, b) = (SVG_MARGIN, SVG_H - SVG_MARGIN);
    out.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{l}\" y=\"{:.2}\" text-anchor=\"middle\">{:.3}</text>\n",
        b + 20.0,
        frame.x0
    ));
    out.push_str(&format!(
        "<text x=\"{r}\" y=\"{:.2}\" text-anchor=\"middle\">{:.3}</text>\n",
        b + 20.0,
        frame.x1
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{b}\" text-anchor=\"end\">{:.3}</text>\n",
        l - 8.0,
        frame.y0
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{t}\" text-anchor=\"end\">{:.3}</text>\n",
        l - 8.0,
        frame.y1
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{x_label}</text>\n",
        0.5 * SVG_W,
        SVG_H - 15.0
    ));
    out.push_str(&format!(
        "<text x=\"15\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {:.2})\">{y_label}</text>\n",
        0.5 * SVG_H,
        0.5 * SVG_H
    ));
}

/// Minimal self-contained plot: one polyline per tap in (P, V) axes, with
/// stability glyphs on every fifth point when classification is present.
fn svg_curves(manifolds: &[Manifold], with_stability: bool) -> String {
    let frame = Frame::new(
        manifolds.iter().flat_map(|m| m.points.iter().map(|p| p.p_load)),
        manifolds.iter().flat_map(|m| m.points.iter().map(|p| p.v_l)),
    );
    let mut out = String::new();
    svg_open(&frame, "P (pu)", "V_l (pu)", &mut out);
    for (i, m) in manifolds.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = m
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", frame.px(p.p_load), frame.py(p.v_l)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{color}\">N={:.2}</text>\n",
            SVG_W - SVG_MARGIN - 80.0,
            SVG_MARGIN + 16.0 * (i + 1) as f64,
            m.n_tap
        ));
        if with_stability {
            for p in m.points.iter().step_by(5) {
                let (x, y) = (frame.px(p.p_load), frame.py(p.v_l));
                match p.stable {
                    Some(Stability::Stable) => out.push_str(&format!(
                        "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"green\"/>\n"
                    )),
                    Some(Stability::Unstable) => out.push_str(&format!(
                        "<path d=\"M{:.2} {:.2} L{:.2} {:.2} M{:.2} {:.2} L{:.2} {:.2}\" stroke=\"red\" stroke-width=\"1.5\"/>\n",
                        x - 3.0, y - 3.0, x + 3.0, y + 3.0,
                        x - 3.0, y + 3.0, x + 3.0, y - 3.0
                    )),
                    Some(Stability::Indeterminate) | None => out.push_str(&format!(
                        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"4\" height=\"4\" fill=\"gray\"/>\n",
                        x - 2.0,
                        y - 2.0
                    )),
                }
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

fn svg_trajectory(traj: &Trajectory) -> String {
    let frame = Frame::new(
        traj.points.iter().map(|p| p.t),
        traj.points.iter().map(|p| p.v_l),
    );
    let mut out = String::new();
    svg_open(&frame, "t (s)", "V_l (pu)", &mut out);
    let pts: Vec<String> = traj
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2}", frame.px(p.t), frame.py(p.v_l)))
        .collect();
    out.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        PALETTE[0],
        pts.join(" ")
    ));
    if let Some(t) = traj.collapsed_at {
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"red\">collapsed at t={t:.1} s</text>\n",
            0.5 * SVG_W,
            SVG_MARGIN + 16.0
        ));
    }
    out.push_str("</svg>\n");
    out
}
