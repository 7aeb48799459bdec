use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use num_complex::{Complex32, Complex64};

use csilab_core::capture::{read_capture, write_capture, CaptureRecord};
use csilab_core::clocking::{derived_clocks, quad_for_bandwidth, quantize_carrier, synth_setting_for_carrier, Band, PllQuadruple};
use csilab_core::csikit::{
    build_distortion_template, classify_distortion, estimate_cfo_sfo, remove_distortion, shape_metrics, stitch,
    CsiFrame, DistortionTemplate,
};
use csilab_core::echoprobe::{expand_range, run_scan, ScanPlan};
use csilab_core::impairments::{apply_channel, rx_chain, tx_chain, ImpairmentProfile};
use csilab_core::phy::{assemble_frame, receive, FrameConfig, GuardInterval, PhyMode, RxOptions};
use csilab_core::simnet::{SimNet, TxParams, VirtualLink, VirtualNic};

mod export;

/// Raised for bad arguments and unreadable inputs; mapped to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

#[derive(Parser)]
#[command(name = "csilab", version, about = "Simulated Wi-Fi CSI measurement workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an EchoProbe spectrum scan between two simulated nodes.
    Scan(ScanArgs),
    /// Send one frame through a Tx chain, channel and Rx chain.
    Loopback(LoopbackArgs),
    /// Build a distortion template from a capture.
    Calibrate(CalibrateArgs),
    /// Remove a distortion template from every matching record.
    Clean(CleanArgs),
    /// Stitch the CSI of adjacent carriers into one wideband response.
    Stitch(StitchArgs),
    /// Per-record CFO and SFO from the data-symbol CSI trains.
    Cfosfo(CfoSfoArgs),
    /// Clock and synthesizer arithmetic.
    Clock(ClockArgs),
    /// Summarise a capture file.
    Info(InfoArgs),
    /// Write plot data as CSV.
    Export(ExportArgs),
}

#[derive(clap::Args)]
struct ChannelOpts {
    /// Built-in profile name (clean, frontend, frontend-tracked) or a TOML file.
    #[arg(long)]
    profile: Option<String>,
    /// SNR in dB; overrides the profile.
    #[arg(long)]
    snr: Option<f64>,
    /// Extra carrier frequency offset, Hz.
    #[arg(long, allow_hyphen_values = true)]
    cfo: Option<f64>,
    /// Sampling frequency offset, ppm.
    #[arg(long, allow_hyphen_values = true)]
    sfo: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum NodeRole {
    Initiator,
    Responder,
}

#[derive(clap::Args)]
struct ScanArgs {
    /// Carrier range, start:step:stop in Hz.
    #[arg(long)]
    cf: String,
    /// Baseband sample-rate range, start:step:stop in Hz.
    #[arg(long)]
    sf: String,
    #[arg(long, default_value_t = 1)]
    repeat: u32,
    /// Spacing between exchanges at one grid point, microseconds.
    #[arg(long, default_value_t = 0.0)]
    delay: f64,
    #[arg(long, default_value_t = 0)]
    mcs: u8,
    #[arg(long, default_value_t = 0)]
    ness: u8,
    #[arg(long, default_value_t = 1)]
    txcm: u8,
    #[arg(long, default_value_t = 1)]
    rxcm: u8,
    /// Accepted for command-line compatibility; both nodes run in this process.
    #[arg(long, value_enum)]
    mode: Option<NodeRole>,
    /// PHY format of the probe frames.
    #[arg(long, default_value = "ht20")]
    format: String,
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    #[arg(long, default_value_t = 5)]
    retries: u32,
    /// Data-symbol CSI vectors kept in each initiator record.
    #[arg(long, default_value_t = 16)]
    keep_symbols: usize,
    /// Data-symbol CSI vectors the responder returns in its reply.
    #[arg(long, default_value_t = 0)]
    reply_symbols: usize,
    #[command(flatten)]
    channel: ChannelOpts,
    /// Capture file; the JSON report is written next to it.
    #[arg(long, default_value = "scan.csi")]
    out: PathBuf,
    /// Write the simulator event trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(clap::Args)]
struct LoopbackArgs {
    #[arg(long, default_value = "ht20")]
    format: String,
    #[arg(long, default_value_t = 0)]
    mcs: u8,
    /// Payload length in bytes.
    #[arg(long, default_value_t = 200)]
    payload: usize,
    #[arg(long)]
    short_gi: bool,
    /// Sample rate, Hz; defaults to the mode's nominal rate.
    #[arg(long)]
    sf: Option<f64>,
    #[arg(long, default_value_t = 2.412e9)]
    cf: f64,
    #[command(flatten)]
    channel: ChannelOpts,
    /// Write the received CSI as a one-record capture.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CalibrateArgs {
    capture: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Use records with this sample rate; defaults to the first record's.
    #[arg(long)]
    sf: Option<f64>,
    #[arg(long, default_value_t = 100)]
    frames: usize,
}

#[derive(clap::Args)]
struct CleanArgs {
    capture: PathBuf,
    #[arg(long)]
    template: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct StitchArgs {
    capture: PathBuf,
    /// Remove this template before stitching.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Use records with this sample rate; defaults to the lowest present.
    #[arg(long)]
    sf: Option<f64>,
    /// Round record carriers to this grid, Hz, so quantized tunes line up; 0 keeps them as stored.
    #[arg(long, default_value_t = 1000.0)]
    carrier_snap: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct CfoSfoArgs {
    capture: PathBuf,
    /// Per-record CSV; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ClockArgs {
    /// Find the quadruple for a bandwidth, Hz.
    #[arg(long)]
    bw: Option<f64>,
    /// Evaluate a quadruple given as DIV_INT,REF_DIV,CLK_SEL,HT20_40.
    #[arg(long)]
    quad: Option<String>,
    /// Quantize a carrier, Hz.
    #[arg(long)]
    cf: Option<f64>,
    /// Band for --cf (2g4 or 5g); inferred from the carrier when absent.
    #[arg(long)]
    band: Option<String>,
}

#[derive(clap::Args)]
struct InfoArgs {
    capture: PathBuf,
    /// Records listed individually.
    #[arg(long, default_value_t = 10)]
    limit: usize,
}

#[derive(clap::Args)]
struct ExportArgs {
    capture: PathBuf,
    #[arg(long, value_enum)]
    kind: export::Kind,
    /// Carrier grid for the stitched kind, Hz; 0 keeps carriers as stored.
    #[arg(long, default_value_t = 1000.0)]
    carrier_snap: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Scan(a) => scan(a),
        Command::Loopback(a) => loopback(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Clean(a) => clean(a),
        Command::Stitch(a) => stitch_cmd(a),
        Command::Cfosfo(a) => cfosfo(a),
        Command::Clock(a) => clock(a),
        Command::Info(a) => info(a),
        Command::Export(a) => {
            let recs = load_capture(&a.capture)?;
            let (csv, skipped) = export::plotdata(&recs, a.kind, a.carrier_snap)?;
            for s in skipped {
                eprintln!("warning: skipped {s}");
            }
            write_file(&a.out, csv.as_bytes())
        }
    }
}

fn parse_mode(s: &str) -> anyhow::Result<PhyMode> {
    s.parse().map_err(|e: csilab_core::Error| usage(e.to_string()))
}

fn load_profile(opts: &ChannelOpts, default: &str) -> anyhow::Result<ImpairmentProfile> {
    let name = opts.profile.as_deref().unwrap_or(default);
    let mut p = match ImpairmentProfile::builtin(name) {
        Some(p) => p,
        None => {
            let text = fs::read_to_string(name).map_err(|e| usage(format!("profile '{name}': {e}")))?;
            ImpairmentProfile::from_toml(&text).map_err(|e| usage(format!("profile '{name}': {e}")))?
        }
    };
    if let Some(s) = opts.snr {
        p.snr_db = Some(s);
    }
    if let Some(c) = opts.cfo {
        p.cfo_hz = c;
    }
    if let Some(s) = opts.sfo {
        p.sfo_ppm = s;
    }
    p.validate().map_err(|e| usage(e.to_string()))?;
    Ok(p)
}

fn load_capture(path: &Path) -> anyhow::Result<Vec<CaptureRecord>> {
    let bytes = fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    read_capture(&bytes).with_context(|| format!("{}", path.display()))
}

fn load_template(path: &Path) -> anyhow::Result<DistortionTemplate> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    DistortionTemplate::from_text(&text).with_context(|| format!("{}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn range(s: &str, what: &str) -> anyhow::Result<Vec<f64>> {
    expand_range(s).map_err(|e| usage(format!("--{what}: {e}")))
}

fn scan(a: ScanArgs) -> anyhow::Result<()> {
    let mut plan = ScanPlan::new(range(&a.cf, "cf")?, range(&a.sf, "sf")?, a.repeat);
    if !(a.delay >= 0.0) {
        return Err(usage("--delay must be non-negative"));
    }
    plan.delay_us = a.delay.round() as u64;
    plan.tx = TxParams { mode: parse_mode(&a.format)?, mcs: a.mcs, n_ess: a.ness, guard: GuardInterval::Long };
    plan.txcm = a.txcm;
    plan.rxcm = a.rxcm;
    plan.retries = a.retries;
    plan.keep_data_symbols = a.keep_symbols;
    plan.reply_data_symbols = a.reply_symbols;
    plan.validate().map_err(|e| usage(e.to_string()))?;
    if !(0.0..=1.0).contains(&a.loss) {
        return Err(usage("--loss must lie in [0, 1]"));
    }
    let mut profile = load_profile(&a.channel, "clean")?;
    if profile.snr_db.is_none() && a.channel.snr.is_none() {
        profile.snr_db = Some(30.0);
    }
    let nics = [
        VirtualNic::new(1, profile.clone(), plan.tx.clone()),
        VirtualNic::new(2, profile.clone(), plan.tx.clone()),
    ];
    let link = VirtualLink::new(profile, a.channel.seed).with_loss(a.loss);
    let mut net = SimNet::new(nics, link)?;
    let s = run_scan(&plan, &mut net)?;
    write_file(&a.out, &write_capture(&s.capture)?)?;
    if let Some(t) = &a.trace {
        write_file(t, net.trace_text().as_bytes())?;
    }
    let report_path = a.out.with_extension("json");
    write_file(&report_path, s.report.to_json().as_bytes())?;
    let r = &s.report;
    println!(
        "{} grid points, {} round-trip records ({} capture records), {} failed points",
        r.points.len(),
        r.records,
        s.capture.len(),
        r.failed_points
    );
    println!(
        "{} messages sent, {} delivered, virtual duration {:.3} s, max rtt {} us",
        r.messages_sent,
        r.messages_delivered,
        r.duration_us as f64 * 1e-6,
        r.max_rtt_us
    );
    println!("capture {}, report {}", a.out.display(), report_path.display());
    Ok(())
}

fn loopback(a: LoopbackArgs) -> anyhow::Result<()> {
    let mode = parse_mode(&a.format)?;
    let profile = load_profile(&a.channel, "frontend")?;
    let guard = if a.short_gi { GuardInterval::Short } else { GuardInterval::Long };
    let payload: Vec<u8> = (0..a.payload).map(|i| (i as u64).wrapping_mul(0x9e37_79b9).wrapping_add(a.channel.seed) as u8).collect();
    let cfg = FrameConfig::new(mode, a.mcs, payload).with_guard(guard).with_seed((a.channel.seed % 127) as u8 + 1);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let mut burst = assemble_frame(&cfg)?.delayed(64);
    burst.samples.extend(vec![Complex64::new(0.0, 0.0); 64]);
    burst.sample_rate = a.sf.unwrap_or_else(|| mode.nominal_sample_rate());
    burst.center_freq = a.cf;
    let b = tx_chain(&burst, &profile, mode)?;
    let b = apply_channel(&b, &profile, 0.0, a.channel.seed);
    let b = rx_chain(&b, &profile, mode)?;
    let r = receive(&b, mode, &RxOptions::default())?;
    let mut frame = r.csi.clone();
    frame.center_freq = a.cf;
    let class = classify_distortion(&build_distortion_template(std::slice::from_ref(&frame))?);
    let m = shape_metrics(&frame.mag_db());
    println!("mode {mode}, mcs {}, sample rate {:.3} Hz, profile {}", r.sig.mcs, burst.sample_rate, profile.name);
    println!(
        "fcs {}, payload {} bytes match {}, evm {:.2} dB, preamble cfo {:.3} Hz",
        if r.fcs_ok { "ok" } else { "bad" },
        r.payload.len(),
        r.payload == cfg.payload,
        r.evm_db,
        r.cfo_preamble
    );
    println!(
        "csi shape {class:?}: variation {:.2} dB, centre dip {:.2} dB, edge roll-off {:.2} dB, asymmetry {:.2} dB",
        m.total_variation, m.center_dip, m.edge_rolloff, m.asymmetry
    );
    if let Some(out) = a.out {
        let rec = CaptureRecord::from_frame(&frame, &r.raw_data_symbol_csi(), r.cfo_preamble, r.evm_db);
        write_file(&out, &write_capture(&[rec])?)?;
    }
    if !r.fcs_ok {
        bail!("frame failed its FCS check");
    }
    Ok(())
}

fn frames_of(recs: &[CaptureRecord]) -> anyhow::Result<Vec<CsiFrame>> {
    recs.iter().map(|r| r.to_frame().map_err(Into::into)).collect()
}

fn calibrate(a: CalibrateArgs) -> anyhow::Result<()> {
    let recs = load_capture(&a.capture)?;
    let first = recs.first().ok_or_else(|| anyhow!("capture holds no records"))?;
    let sf = a.sf.unwrap_or(first.sf_hz as f64);
    let chosen: Vec<CaptureRecord> = recs
        .iter()
        .filter(|r| (r.sf_hz as f64 - sf).abs() < 1.0 && r.channel_mode == first.channel_mode)
        .take(a.frames)
        .cloned()
        .collect();
    if chosen.is_empty() {
        bail!("no records at sample rate {sf:.3} Hz");
    }
    let t = build_distortion_template(&frames_of(&chosen)?)?;
    write_file(&a.out, t.to_text().as_bytes())?;
    let m = shape_metrics(&t.mag_db);
    println!("template from {} frames at {:.3} Hz: {:?}", t.n_frames, sf, classify_distortion(&t));
    println!(
        "variation {:.2} dB, centre dip {:.2} dB, edge roll-off {:.2} dB, asymmetry {:.2} dB",
        m.total_variation, m.center_dip, m.edge_rolloff, m.asymmetry
    );
    Ok(())
}

fn with_csi(rec: &CaptureRecord, frame: &CsiFrame) -> CaptureRecord {
    let mut out = rec.clone();
    out.csi = frame.values.iter().map(|v| Complex32::new(v.re as f32, v.im as f32)).collect();
    out
}

fn clean(a: CleanArgs) -> anyhow::Result<()> {
    let recs = load_capture(&a.capture)?;
    let t = load_template(&a.template)?;
    let mut out = Vec::with_capacity(recs.len());
    let mut cleaned = 0;
    for r in &recs {
        let f = r.to_frame()?;
        let matches = f.mode.code() == t.combo_key.mode && (f.bandwidth - t.combo_key.bandwidth).abs() < 1.0;
        if matches {
            out.push(with_csi(r, &remove_distortion(&f, &t)?));
            cleaned += 1;
        } else {
            out.push(r.clone());
        }
    }
    if cleaned == 0 && !recs.is_empty() {
        bail!("no record matches the template's mode and sample rate");
    }
    write_file(&a.out, &write_capture(&out)?)?;
    println!("cleaned {cleaned} of {} records", recs.len());
    Ok(())
}

fn stitch_cmd(a: StitchArgs) -> anyhow::Result<()> {
    let recs = load_capture(&a.capture)?;
    let sf = match a.sf {
        Some(s) => s,
        None => recs.iter().map(|r| r.sf_hz).min().ok_or_else(|| anyhow!("capture holds no records"))? as f64,
    };
    if !(a.carrier_snap >= 0.0) {
        return Err(usage("--carrier-snap must be non-negative"));
    }
    let mut frames = frames_of(&recs.iter().filter(|r| (r.sf_hz as f64 - sf).abs() < 1.0).cloned().collect::<Vec<_>>())?;
    if frames.is_empty() {
        bail!("no records at sample rate {sf:.3} Hz");
    }
    if let Some(p) = &a.template {
        let t = load_template(p)?;
        frames = frames.iter().map(|f| remove_distortion(f, &t)).collect::<csilab_core::Result<_>>()?;
    }
    export::snap_carriers(&mut frames, a.carrier_snap);
    let s = stitch(&frames)?;
    let mut csv = String::from("freq_hz,mag_db,phase_rad\n");
    for (f, v) in &s.wideband {
        writeln!(csv, "{f:.3},{:.6},{:.6}", 20.0 * v.norm().log10(), v.arg())?;
    }
    write_file(&a.out, csv.as_bytes())?;
    let r = s.overlap_residual;
    println!(
        "{} frames, {} wideband tones from {:.3} to {:.3} Hz",
        frames.len(),
        s.wideband.len(),
        s.wideband.first().map_or(0.0, |w| w.0),
        s.wideband.last().map_or(0.0, |w| w.0)
    );
    println!("overlap residual {:.4} dB, {:.4} rad over {} tones", r.mag_db_rms, r.phase_rad_rms, r.n_tones);
    Ok(())
}

fn cfosfo(a: CfoSfoArgs) -> anyhow::Result<()> {
    let recs = load_capture(&a.capture)?;
    let mut csv = String::from("record,cf_hz,sf_hz,n_symbols,cfo_hz,sfo_ppm,residual_rad,model_violated\n");
    let (mut wsum, mut cfo_acc, mut sfo_acc, mut used) = (0.0, 0.0, 0.0, 0usize);
    for (i, r) in recs.iter().enumerate() {
        let train = r.data_train();
        if train.len() < 3 {
            continue;
        }
        let f = r.to_frame()?;
        let mode = f.mode;
        let sym = 80.0 * if mode.channel_mode.is_40() { 2.0 } else { 1.0 } / f.bandwidth;
        let e = estimate_cfo_sfo(&train, &f.grid.indices, sym, f.spacing())?;
        writeln!(
            csv,
            "{i},{},{},{},{:.3},{:.4},{:.4},{}",
            r.cf_hz,
            r.sf_hz,
            e.n_symbols,
            e.cfo_hz,
            e.sfo_ppm,
            e.residual_rms,
            e.model_violated()
        )?;
        // slope variance falls with n^3
        let n = e.n_symbols as f64;
        let w = n * n * n - n;
        wsum += w;
        cfo_acc += w * e.cfo_hz;
        sfo_acc += w * e.sfo_ppm;
        used += 1;
    }
    match &a.out {
        Some(p) => write_file(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    if used == 0 {
        bail!("no record carries at least 3 data-symbol CSI vectors");
    }
    println!(
        "{used} of {} records, weighted mean cfo {:.3} Hz, sfo {:.4} ppm",
        recs.len(),
        cfo_acc / wsum,
        sfo_acc / wsum
    );
    Ok(())
}

fn print_quad(q: PllQuadruple) -> anyhow::Result<()> {
    let c = derived_clocks(q)?;
    println!("quadruple {q} (DIV_INT, REF_DIV, CLK_SEL, HT20_40)");
    println!("bandwidth {:.3} MHz", c.bandwidth / 1e6);
    println!(
        "f_pll {:.3} MHz, f_digi_bb {:.3} MHz, f_rx_adc {:.3} MHz, f_tx_dac {:.3} MHz",
        c.f_pll / 1e6,
        c.f_digi_bb / 1e6,
        c.f_rx_adc / 1e6,
        c.f_tx_dac / 1e6
    );
    Ok(())
}

fn clock(a: ClockArgs) -> anyhow::Result<()> {
    if a.bw.is_none() && a.quad.is_none() && a.cf.is_none() {
        return Err(usage("clock needs --bw, --quad or --cf"));
    }
    if let Some(bw) = a.bw {
        print_quad(quad_for_bandwidth(bw).map_err(|e| usage(e.to_string()))?)?;
    }
    if let Some(q) = &a.quad {
        let v: Vec<u32> = q
            .split(',')
            .map(|t| t.trim().parse::<u32>())
            .collect::<Result<_, _>>()
            .map_err(|_| usage(format!("--quad '{q}' is not four integers")))?;
        let [d, r, c, h] = v[..] else { return Err(usage(format!("--quad '{q}' needs four values"))) };
        let quad = PllQuadruple::new(d, r, c as u8, h as u8).map_err(|e| usage(e.to_string()))?;
        print_quad(quad)?;
    }
    if let Some(cf) = a.cf {
        let band = match &a.band {
            Some(b) => b.parse::<Band>().map_err(|e| usage(e.to_string()))?,
            None => Band::containing(cf).ok_or_else(|| usage(format!("carrier {cf} Hz is in no supported band")))?,
        };
        let q = quantize_carrier(cf, band).map_err(|e| usage(e.to_string()))?;
        let name = match band {
            Band::Band2G4 => "2.4 GHz",
            Band::Band5G => "5 GHz",
        };
        println!("requested {cf:.3} Hz, band {name}, grid step {:.6} Hz", q.step);
        println!("lower {:.9} MHz ({:.3} Hz)", q.lower / 1e6, q.lower);
        println!("upper {:.9} MHz ({:.3} Hz)", q.upper / 1e6, q.upper);
        println!("chosen {:.9} MHz, offset {:.3} Hz", q.chosen / 1e6, q.chosen - cf);
        let s = synth_setting_for_carrier(q.chosen, band)?;
        println!("CHANSEL {}, f_syn {:.3} Hz, VCO in range {}", s.chansel, s.f_syn, s.valid);
    }
    Ok(())
}

fn info(a: InfoArgs) -> anyhow::Result<()> {
    let recs = load_capture(&a.capture)?;
    let bytes = fs::metadata(&a.capture)?.len();
    println!("{}: CSF1 v1, {} records, {} bytes", a.capture.display(), recs.len(), bytes);
    let mut sfs: Vec<u64> = recs.iter().map(|r| r.sf_hz).collect();
    sfs.sort_unstable();
    sfs.dedup();
    let mut cfs: Vec<u64> = recs.iter().map(|r| r.cf_hz).collect();
    cfs.sort_unstable();
    cfs.dedup();
    println!("{} carriers, {} sample rates", cfs.len(), sfs.len());
    for (i, r) in recs.iter().take(a.limit).enumerate() {
        let mode = r.mode().map(|m| m.to_string()).unwrap_or_else(|_| format!("code {}", r.channel_mode));
        println!(
            "#{i} t={} us cf={}.000 Hz sf={}.000 Hz {mode} mcs {} tones {} data symbols {} cfo {:.3} Hz evm {:.2} dB",
            r.timestamp_us,
            r.cf_hz,
            r.sf_hz,
            r.mcs,
            r.tone_indices.len(),
            r.data_csi.len(),
            r.cfo_hz(),
            r.evm_db()
        );
    }
    if recs.len() > a.limit {
        println!("... {} more", recs.len() - a.limit);
    }
    Ok(())
}
