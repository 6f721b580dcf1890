use std::net::SocketAddr;

use gotcha_client::Client;
use gotcha_core::api::{self, CalibrateRequest, MonteCarloRequest, QualifyRequest, SimulateRequest};
use gotcha_core::metrics::GapConfig;
use gotcha_core::session::Verdict;
use gotcha_core::simulation::{Calibration, Populations, ProfileKind};

use crate::args::{CalibrateArgs, Cli, Command, MonteCarloArgs, QualifyArgs, SessionArgs};
use crate::inputs::{read_json, Settings};
use crate::CliError;

const DEFAULT_FP_RATE: f64 = 0.05;
const DEFAULT_CALIBRATION_SIZE: usize = 100;

pub async fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Version = cli.command {
        return version(cli.global.server.as_deref()).await;
    }
    let settings = Settings::resolve(&cli.global)?;
    let client = connect(cli.global.server.as_deref()).await?;
    match cli.command {
        Command::Session(a) => session(&client, &settings, a).await,
        Command::Montecarlo(a) => monte_carlo(&client, &settings, a).await,
        Command::Qualify(a) => qualify(&client, &settings, a).await,
        Command::Calibrate(a) => calibrate(&client, &settings, a).await,
        Command::Version => unreachable!(),
    }
}

async fn connect(server: Option<&str>) -> Result<Client, CliError> {
    match server {
        Some(url) => Ok(Client::new(url)),
        None => {
            let (addr, _) = gotcha_service::spawn(SocketAddr::from(([127, 0, 0, 1], 0)))
                .await
                .map_err(|e| CliError::Runtime(format!("cannot start embedded server: {e}")))?;
            Ok(Client::new(format!("http://{addr}")))
        }
    }
}

async fn version(server: Option<&str>) -> Result<(), CliError> {
    let local = api::version();
    println!("{} {}", local.name, local.version);
    if let Some(url) = server {
        let remote = Client::new(url).version().await?;
        println!("server {} {} at {url}", remote.name, remote.version);
    }
    Ok(())
}

fn file_stem(kind: ProfileKind) -> String {
    kind.as_str().to_lowercase()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

async fn session(client: &Client, s: &Settings, a: SessionArgs) -> Result<(), CliError> {
    let mut protocol = s.protocol();
    if let Some(path) = &a.calibration {
        let cal: Calibration = serde_json::from_value(read_json(path, "calibration")?)
            .map_err(|e| CliError::Config(format!("invalid calibration file {}: {e}", path.display())))?;
        if cal.score_mode != s.mode() {
            return Err(CliError::Config(format!(
                "calibration {} was made in {} mode; pass --mode {}",
                path.display(),
                cal.score_mode.as_str(),
                cal.score_mode.as_str()
            )));
        }
        protocol.session.threshold = cal.threshold;
        protocol.models = Some(cal.models);
    }
    if let Some(t) = a.threshold {
        protocol.session.threshold = t;
    }
    let profiles = if a.pipelines.is_empty() {
        vec![ProfileKind::Genuine, ProfileKind::Ldfl]
    } else {
        a.pipelines
    };
    for kind in profiles {
        let record = client
            .simulate(&SimulateRequest {
                protocol: protocol.clone(),
                pipeline: kind,
                participant: a.participant,
            })
            .await?;
        let stem = file_stem(kind);
        s.write(&format!("session-{stem}.json"), &record.to_json())?;
        s.write(&format!("session-{stem}.csv"), &record.to_csv())?;
        let verdict = match (record.verdict, record.fail_reason) {
            (Verdict::Pass, _) => "pass".to_string(),
            (Verdict::Fail, Some(r)) => format!("fail ({})", serde_json::to_value(r).unwrap_or_default().as_str().unwrap_or("?")),
            (Verdict::Fail, None) => "fail".to_string(),
        };
        println!(
            "{:<10} {:<32} E_bar={:.4} steps={} T={}",
            record.participant_id,
            verdict,
            record.mean_score,
            record.steps.len(),
            record.threshold
        );
    }
    Ok(())
}

async fn monte_carlo(client: &Client, s: &Settings, a: MonteCarloArgs) -> Result<(), CliError> {
    let defaults = Populations::default();
    let populations = Populations {
        n_genuine: a.n_genuine.or(s.manifest.n_genuine).unwrap_or(defaults.n_genuine),
        n_per_pipeline: a
            .n_per_pipeline
            .or(s.manifest.n_per_pipeline)
            .unwrap_or(defaults.n_per_pipeline),
    };
    let mut protocol = s.protocol();
    if let Some(t) = a.threshold {
        protocol.session.threshold = t;
    }
    let report = client.monte_carlo(&MonteCarloRequest { protocol, populations }).await?;
    s.write("report.json", &report.to_json())?;
    s.write("trajectories.csv", &report.trajectories_csv())?;
    s.write("roc.csv", &report.roc_csv())?;

    println!(
        "{:<9} {:>8} {:>12} {:>8} {:>8} {:>8}",
        "pipeline", "sessions", "mean_E_bar", "FPR", "FNR", "AUC"
    );
    for row in &report.summaries {
        println!(
            "{:<9} {:>8} {:>12.4} {:>8} {:>8} {:>8}",
            row.pipeline.as_str(),
            row.sessions,
            row.mean_final,
            fmt_opt(row.fpr),
            fmt_opt(row.fnr),
            fmt_opt(row.auc)
        );
    }
    println!("threshold_T = {} ({} mode)", report.threshold, report.score_mode.as_str());
    Ok(())
}

async fn qualify(client: &Client, s: &Settings, a: QualifyArgs) -> Result<(), CliError> {
    let defaults = GapConfig::default();
    let gap = GapConfig {
        beta: a.beta.or(s.manifest.beta).unwrap_or(defaults.beta),
        eta: a.eta.or(s.manifest.eta).unwrap_or(defaults.eta),
        ..defaults
    };
    // Checked here as well so the message names the flag.
    for (name, v) in [("--beta", gap.beta), ("--eta", gap.eta)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(CliError::Config(format!("{name} must be in (0, 1], got {v}")));
        }
    }
    let resp = client
        .qualify(&QualifyRequest {
            inputs: s.inputs.clone(),
            pipeline: a.pipeline,
            gap,
            seed: s.seed,
        })
        .await?;
    let mut json = serde_json::to_string_pretty(&resp).expect("report serializes");
    json.push('\n');
    s.write("qualification.json", &json)?;

    println!("{:<20} {:>9}  qualified", "challenge", "mean_gap");
    for (id, g) in &resp.report.per_challenge {
        let mark = if resp.report.qualified.contains(id) { "yes" } else { "no" };
        println!("{id:<20} {:>9.4}  {mark}", g.mean_gap);
    }
    println!(
        "{} of {} challenges qualify against {} at beta = {}",
        resp.report.qualified.len(),
        resp.report.per_challenge.len(),
        resp.pipeline.as_str(),
        gap.beta
    );
    println!(
        "genuine stability: {:.3} of samples under epsilon ({})",
        resp.genuine_pass.pass_fraction,
        if resp.genuine_pass.ok { "ok" } else { "below eta" }
    );
    Ok(())
}

async fn calibrate(client: &Client, s: &Settings, a: CalibrateArgs) -> Result<(), CliError> {
    let fp_rate = a.fp_rate.or(s.manifest.fp_rate).unwrap_or(DEFAULT_FP_RATE);
    if !(fp_rate > 0.0 && fp_rate < 1.0) {
        return Err(CliError::Config(format!("--fp-rate must be in (0, 1), got {fp_rate}")));
    }
    let n_genuine = a
        .n_genuine
        .or(s.manifest.n_genuine)
        .unwrap_or(DEFAULT_CALIBRATION_SIZE);
    let cal = client
        .calibrate(&CalibrateRequest {
            protocol: s.protocol(),
            n_genuine,
            fp_rate,
        })
        .await?;
    let path = s.write("calibration.json", &cal.to_json())?;
    println!("T = {}", cal.threshold);
    println!(
        "{} genuine sessions, target false-positive rate {}, written to {}",
        cal.n_genuine,
        cal.target_fp_rate,
        path.display()
    );
    Ok(())
}
