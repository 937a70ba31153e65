//! The work behind each subcommand, kept free of argument parsing.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use persona_core::corpus::{generate_synthetic, load_corpus, save_corpus, tokenize, CorpusBundle, GeneratorConfig, Profile};
use persona_core::eval::{
    build_sessions, detector_accuracy, position_accuracy, session_proxies, write_detector_csv, EvalReport,
    ModelDetector, SessionTraces,
};
use persona_core::inference::{generate, run_session, SystemVariant};
use persona_core::model::{Checkpoint, DecodeMode, Precision};
use persona_core::training::{profile_value_ids, toy_grad_check, train_two_stage_with, TrainConfig, TrainReport};
use serde::Serialize;

use crate::service::{router, AppState};

/// Gradient check tolerance on the toy model.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub fn gen_corpus(config: &Path, seed: u64, out: &Path) -> Result<CorpusBundle> {
    let cfg = GeneratorConfig::load(config)?;
    let bundle = generate_synthetic(&cfg, seed)?;
    save_corpus(&bundle, out).with_context(|| format!("writing corpus to {}", out.display()))?;
    log::info!(
        "corpus: vocab {}, d_c {}, d_pb {}, d_pr {}, md {}",
        bundle.vocab.len(),
        bundle.d_c.len(),
        bundle.d_pb.len(),
        bundle.d_pr.len(),
        bundle.md.len()
    );
    Ok(bundle)
}

pub fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(path) = path else { return Ok(TrainConfig::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config: TrainConfig =
        serde_json::from_str(&text).map_err(|e| persona_core::Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn load_profile_file(path: &Path) -> Result<Profile> {
    Profile::load(path).with_context(|| format!("reading profile {}", path.display()))
}

fn load_profile(path: Option<&Path>, corpus: &CorpusBundle) -> Result<Profile> {
    match path {
        Some(p) => load_profile_file(p),
        None => Ok(corpus.profile.clone()),
    }
}

pub fn train(
    corpus: &Path,
    profile: Option<&Path>,
    config: Option<&Path>,
    variant: Option<SystemVariant>,
    out: &Path,
    precision: Precision,
) -> Result<TrainReport> {
    let bundle = load_corpus(corpus).with_context(|| format!("loading corpus {}", corpus.display()))?;
    let profile = load_profile(profile, &bundle)?;
    let mut config = load_train_config(config)?;
    if let Some(v) = variant {
        if !matches!(v, SystemVariant::Iccm | SystemVariant::IccmPos) {
            bail!(persona_core::Error::Config(format!(
                "train builds iccm or iccm-pos checkpoints; {} runs on the iccm checkpoint",
                v.label()
            )));
        }
        config.anchor_mode = v.anchor_mode();
    }
    let (ckpt, report) = train_two_stage_with(&bundle, &profile, &config, |record, _| {
        log::info!("{}", serde_json::to_string(record)?);
        Ok(())
    })?;
    ckpt.save(out, precision)?;
    log::info!("saved {} ({:.1}s)", out.display(), report.wall_time_secs);
    Ok(report)
}

pub struct EvalOptions<'a> {
    pub ckpt: &'a Path,
    pub corpus: &'a Path,
    pub profile: Option<&'a Path>,
    pub variant: SystemVariant,
    pub sessions_per_key: usize,
    pub session_size: usize,
    pub seed: u64,
    pub csv: Option<&'a Path>,
}

pub fn eval(opts: &EvalOptions<'_>) -> Result<EvalReport> {
    let ckpt = load_checkpoint(opts.ckpt)?;
    let bundle = load_corpus(opts.corpus).with_context(|| format!("loading corpus {}", opts.corpus.display()))?;
    let profile = load_profile(opts.profile, &bundle)?;
    evaluate(&ckpt, &bundle, &profile, opts)
}

pub fn evaluate(ckpt: &Checkpoint, bundle: &CorpusBundle, profile: &Profile, opts: &EvalOptions<'_>) -> Result<EvalReport> {
    if ckpt.anchor_mode != opts.variant.anchor_mode() {
        bail!(persona_core::Error::Contract(format!(
            "variant {} needs a checkpoint trained with {:?} anchors",
            opts.variant.label(),
            opts.variant.anchor_mode()
        )));
    }
    let values = profile_value_ids(profile, &ckpt.keys, &ckpt.vocab)?;
    let detector = ModelDetector { params: &ckpt.params, values: values.clone() };
    let mut report = EvalReport::new(opts.variant);
    if !bundle.pb_test.is_empty() {
        let acc = detector_accuracy(&detector, &bundle.encode(&bundle.pb_test)?)?;
        if let Some(path) = opts.csv {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_detector_csv(std::io::BufWriter::new(file), &acc.decisions)?;
        }
        report.detector_pb_test = Some(acc);
    }
    if !bundle.md.is_empty() {
        report.detector_md = Some(detector_accuracy(&detector, &bundle.encode(&bundle.md)?)?);
    }
    if !bundle.positions.is_empty() {
        report.position = Some(position_accuracy(&ckpt.params, &bundle.encode(&bundle.positions)?, &ckpt.keys, &values)?);
    }
    if opts.sessions_per_key > 0 {
        let sessions = build_sessions(&bundle.md, &ckpt.keys, opts.sessions_per_key, opts.session_size, opts.seed)?;
        let traces = sessions
            .iter()
            .map(|s| {
                Ok(SessionTraces {
                    key: s.key.clone(),
                    traces: run_session(ckpt, profile, &s.posts, opts.variant, DecodeMode::Greedy)?,
                })
            })
            .collect::<persona_core::Result<Vec<_>>>()?;
        report.sessions = Some(session_proxies(&traces, profile, &bundle.meta)?);
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct GradCheckSummary {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub entries_checked: usize,
    pub worst: Option<(String, usize)>,
    pub seconds: f64,
    pub passed: bool,
}

pub fn gradcheck(seed: u64) -> Result<GradCheckSummary> {
    let started = Instant::now();
    let report = toy_grad_check(seed, 1.0)?;
    Ok(GradCheckSummary {
        max_relative_error: report.max_relative_error,
        max_abs_error: report.max_abs_error,
        entries_checked: report.entries_checked,
        worst: report.worst,
        seconds: started.elapsed().as_secs_f64(),
        passed: report.max_relative_error < GRADCHECK_TOLERANCE,
    })
}

/// Line-oriented chat. `/variant NAME` switches variant, `/set KEY VALUE`
/// edits the profile; any other line is a post. Each answer is followed by a
/// one-line JSON trace.
pub fn chat<R: BufRead, W: Write>(
    ckpt: &Checkpoint,
    mut profile: Profile,
    mut variant: SystemVariant,
    input: R,
    mut out: W,
) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        let result = match words.as_slice() {
            ["/variant", name] => name.parse().map(|v| {
                variant = v;
                format!("variant {}", v.label())
            }),
            ["/set", key, value] => profile.set(key, value.to_lowercase()).map(|_| format!("{key} = {value}")),
            ["/profile"] => Ok(serde_json::to_string(&profile)?),
            _ => generate(ckpt, &profile, &tokenize(line), variant, DecodeMode::Greedy).map(|t| {
                let summary = serde_json::json!({
                    "z_prob": t.z_prob,
                    "used_profile": t.used_profile,
                    "key": t.key,
                    "value": t.value,
                    "route": t.route,
                });
                format!("{}\n{}", t.response_text(), summary)
            }),
        };
        match result {
            Ok(text) => writeln!(out, "{text}")?,
            Err(e) => writeln!(out, "{}", crate::error_line(e.kind(), &e.to_string()))?,
        }
        out.flush()?;
    }
    Ok(())
}

pub async fn serve(state: AppState, addr: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// `HOST:PORT` with the port replaced by `$PORT` when set.
pub fn resolve_addr(addr: &str, port_env: Option<&str>) -> Result<String> {
    let Some(port) = port_env else { return Ok(addr.to_string()) };
    let port: u16 = port
        .parse()
        .map_err(|_| persona_core::Error::Config(format!("PORT must be a port number, got {port:?}")))?;
    let host = addr.rsplit_once(':').map_or(addr, |(h, _)| h);
    Ok(format!("{host}:{port}"))
}
