use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use evmscan::config::RunConfig;
use evmscan::corpus::api::{ApiClient, Fetch, UreqTransport};
use evmscan::corpus::{
    class_names, heuristic_label, load_csv_with, synthesize_corpus, write_csv_to, write_csv_with, ContractRecord,
    CsvOptions, SynthConfig,
};
use evmscan::disasm::{disassemble, parse_hex, to_hex_tokens};
use evmscan::model::checkpoint::Checkpoint;
use evmscan::model::ModelKind;
use evmscan::training::{encode_dataset, evaluate, predict, run_pipeline};
use evmscan::window::{argmax, make_windows, Aggregation, WindowConfig};
use evmscan::{Error, Result};
use serde::Serialize;

use crate::{AggArg, Cli, Command, ModelArg, Shared};

pub fn run(cli: &Cli) -> Result<u8> {
    let s = &cli.shared;
    match &cli.command {
        Command::Scan {
            input,
            checkpoint,
            strict,
        } => scan(s, input, checkpoint, *strict),
        Command::Train { dataset } => train(s, dataset),
        Command::Eval { dataset, checkpoint } => eval(s, dataset, checkpoint),
        Command::Ingest {
            addresses,
            api_key,
            api_url,
            source_dir,
            retries,
        } => ingest(s, addresses, api_key, api_url, source_dir.as_deref(), *retries),
        Command::Synth { n, min_len, max_len } => synth(s, *n, *min_len, *max_len),
        Command::Disasm { input } => disasm(s, input),
    }
}

/// Defaults, then `--config` assignments, then the dedicated flags.
fn settings(s: &Shared) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for a in &s.config {
        cfg.apply(a)?;
    }
    if let Some(m) = s.model {
        cfg.kind = match m {
            ModelArg::Transformer => ModelKind::Transformer,
            ModelArg::Lstm => ModelKind::Lstm,
        };
    }
    if let Some(c) = &s.classes {
        cfg.set_num_classes(c.parse().expect("validated by clap"));
    }
    if let Some(e) = s.epochs {
        cfg.train.epochs = e;
    }
    cfg.train.seed = s.seed;
    cfg.window = window_overrides(s, cfg.window)?;
    Ok(cfg)
}

fn window_overrides(s: &Shared, mut w: WindowConfig) -> Result<WindowConfig> {
    if let Some(ws) = s.window_size {
        w.window_size = ws;
    }
    if let Some(o) = s.overlap {
        w.overlap = o;
    }
    if let Some(a) = s.aggregation {
        w.aggregation = match a {
            AggArg::Max => Aggregation::Max,
            AggArg::Mean => Aggregation::Mean,
        };
    }
    w.validate()?;
    Ok(w)
}

fn csv_options(s: &Shared, skip_malformed: bool) -> CsvOptions {
    CsvOptions {
        has_header: s.header,
        skip_malformed,
    }
}

/// Loads a checkpoint and applies window flag overrides.
fn open_checkpoint(s: &Shared, path: &Path) -> Result<(Checkpoint, WindowConfig)> {
    let ck = Checkpoint::load(path)?;
    let window = window_overrides(s, ck.window)?;
    if window.window_size > ck.model.config.max_length() {
        return Err(Error::Config(format!(
            "window_size {} exceeds the checkpoint's max_length {}",
            window.window_size,
            ck.model.config.max_length()
        )));
    }
    Ok((ck, window))
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct WindowScore {
    start: usize,
    probabilities: Vec<f64>,
}

#[derive(Serialize)]
struct ScanReport {
    address: String,
    probabilities: Vec<f64>,
    predicted_class: usize,
    predicted_label: String,
    vulnerable: bool,
    windows: Vec<WindowScore>,
    checkpoint: String,
}

#[derive(Serialize)]
struct ScanError {
    record: String,
    message: String,
}

#[derive(Serialize)]
struct ScanOutput {
    reports: Vec<ScanReport>,
    errors: Vec<ScanError>,
}

fn scan(s: &Shared, input: &Path, checkpoint: &Path, strict: bool) -> Result<u8> {
    let (ck, window) = open_checkpoint(s, checkpoint)?;
    let names = class_names(ck.model.num_classes());
    let mut items: Vec<(String, Vec<String>)> = Vec::new();
    let mut errors = Vec::new();
    if input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let loaded = load_csv_with(input, csv_options(s, true))?;
        for e in loaded.skipped {
            errors.push(ScanError {
                record: input.display().to_string(),
                message: e.to_string(),
            });
        }
        items.extend(loaded.records.into_iter().map(|r| (r.address, r.hex_tokens)));
    } else {
        let name = input
            .file_stem()
            .map_or_else(|| input.display().to_string(), |n| n.to_string_lossy().into_owned());
        match parse_hex(&fs::read_to_string(input)?) {
            Ok(code) => items.push((name, to_hex_tokens(&code))),
            Err(e) => errors.push(ScanError {
                record: name,
                message: e.to_string(),
            }),
        }
    }

    let mut reports = Vec::new();
    for (address, tokens) in items {
        let scored = make_windows(&ck.vocab.encode(&tokens), &window)
            .and_then(|b| predict(&ck.model, &b.windows, &window).map(|p| (b, p)));
        let (batch, (probs, per_window)) = match scored {
            Ok(v) => v,
            Err(e) => {
                errors.push(ScanError {
                    record: address,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let class = argmax(&probs);
        let report = ScanReport {
            address,
            predicted_label: names[class].to_string(),
            vulnerable: class != 0,
            predicted_class: class,
            windows: batch
                .windows
                .iter()
                .zip(per_window)
                .map(|(w, p)| WindowScore {
                    start: w.start,
                    probabilities: p,
                })
                .collect(),
            probabilities: probs,
            checkpoint: checkpoint.display().to_string(),
        };
        let probs: Vec<String> = report.probabilities.iter().map(|p| format!("{p:.4}")).collect();
        println!(
            "{} {} [{}] windows={}",
            report.address,
            report.predicted_label,
            probs.join(" "),
            report.windows.len()
        );
        reports.push(report);
    }
    for e in &errors {
        eprintln!("error: {}: {}", e.record, e.message);
    }
    let flagged = reports.iter().filter(|r| r.vulnerable).count();
    println!(
        "scanned {}, vulnerable {flagged}, errors {}",
        reports.len() + errors.len(),
        errors.len()
    );
    let failed = !errors.is_empty();
    if let Some(out) = &s.out {
        let text = serde_json::to_string_pretty(&ScanOutput { reports, errors })?;
        write_out(out, &text)?;
    }
    Ok(if strict && failed {
        1
    } else if flagged > 0 {
        2
    } else {
        0
    })
}

fn train(s: &Shared, dataset: &Path) -> Result<u8> {
    let cfg = settings(s)?.pipeline()?;
    let records = load_csv_with(dataset, csv_options(s, false))?.records;
    let out = s.out.clone().unwrap_or_else(|| PathBuf::from("evmscan-run"));
    fs::create_dir_all(&out)?;

    let (a, b, c) = cfg.split.sizes(records.len());
    let mut log = format!("split train={a} val={b} test={c}\n");
    eprintln!("split: train {a}, val {b}, test {c}");
    let outcome = run_pipeline(&records, &cfg, |e| {
        let line = e.log_line();
        eprintln!("{line}");
        log.push_str(&line);
        log.push('\n');
    })?;
    if let Some(e) = outcome.history.restored_epoch {
        eprintln!("restored parameters from epoch {e}");
        log.push_str(&format!("restored epoch={e}\n"));
    }

    let ck = Checkpoint {
        model: outcome.model,
        vocab: outcome.vocab,
        window: cfg.window,
    };
    ck.save(&out.join("model.ckpt"))?;
    ck.vocab.save(&out.join("vocab.tsv"))?;
    write_out(&out.join("history.csv"), &outcome.history.to_csv())?;
    write_out(&out.join("metrics.log"), &log)?;
    match &outcome.report {
        Some(r) => {
            write_out(&out.join("report.json"), &r.to_json())?;
            write_out(&out.join("report.txt"), &r.to_string())?;
            println!("{r}");
        }
        None => eprintln!("test partition is empty; no report written"),
    }
    eprintln!("wrote {}", out.display());
    Ok(0)
}

fn eval(s: &Shared, dataset: &Path, checkpoint: &Path) -> Result<u8> {
    let (ck, window) = open_checkpoint(s, checkpoint)?;
    let c = ck.model.num_classes();
    if let Some(want) = &s.classes {
        if want.parse::<usize>().ok() != Some(c) {
            return Err(Error::LabelMismatch(format!(
                "--classes {want} but the checkpoint has {c} classes"
            )));
        }
    }
    let records = load_csv_with(dataset, csv_options(s, false))?.records;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let data = encode_dataset(&records, &ck.vocab, &window, c)?;
    let report = evaluate(&ck.model, &data, &window)?;
    println!("{report}");
    if let Some(out) = &s.out {
        write_out(out, &report.to_json())?;
    }
    Ok(0)
}

fn ingest(
    s: &Shared,
    addresses: &Path,
    api_key: &str,
    api_url: &str,
    source_dir: Option<&Path>,
    retries: u32,
) -> Result<u8> {
    let out = s
        .out
        .as_deref()
        .ok_or_else(|| Error::Config("ingest needs --out for the dataset CSV".into()))?;
    if let Some(dir) = source_dir {
        fs::create_dir_all(dir)?;
    }
    let mut client = ApiClient::new(UreqTransport::default(), api_key);
    client.base_url = api_url.to_string();
    client.max_attempts = retries.max(1);
    client.source_dir = source_dir.map(Path::to_path_buf);

    let text = fs::read_to_string(addresses)?;
    let list: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let mut records: Vec<ContractRecord> = Vec::new();
    let mut skipped = 0;
    let mut failure = None;
    for (i, addr) in list.iter().enumerate() {
        if !evmscan::corpus::is_valid_address(addr) {
            eprintln!("[{}/{}] {addr}: not an address, skipped", i + 1, list.len());
            skipped += 1;
            continue;
        }
        match client.fetch_verified(addr) {
            Ok(Fetch::Contract(c)) => {
                let code = parse_hex(&c.hex_tokens.concat())?;
                let label = heuristic_label(&disassemble(&code));
                eprintln!("[{}/{}] {addr}: {} {label}", i + 1, list.len(), c.contract_name);
                records.push(ContractRecord {
                    address: c.address,
                    hex_tokens: c.hex_tokens,
                    label,
                    source: Some(c.contract_name),
                });
            }
            Ok(Fetch::Skip { reason, .. }) => {
                eprintln!("[{}/{}] {addr}: skipped ({reason})", i + 1, list.len());
                skipped += 1;
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    write_csv_with(&records, out, s.header)?;
    eprintln!("wrote {} records, skipped {skipped}", records.len());
    match failure {
        Some(e) => Err(e),
        None => Ok(0),
    }
}

fn synth(s: &Shared, n: usize, min_len: usize, max_len: usize) -> Result<u8> {
    let four = settings(s)?.num_classes() == 4;
    let cfg = SynthConfig {
        min_len,
        max_len,
        ..if four {
            SynthConfig::four_class()
        } else {
            SynthConfig::default()
        }
    };
    let records = synthesize_corpus(n, &cfg, s.seed)?;
    match &s.out {
        Some(path) => {
            write_csv_with(&records, path, s.header)?;
            eprintln!("wrote {} records to {}", records.len(), path.display());
        }
        None => write_csv_to(&records, std::io::stdout().lock(), s.header)?,
    }
    Ok(0)
}

fn disasm(s: &Shared, input: &Path) -> Result<u8> {
    let code = parse_hex(&fs::read_to_string(input)?)?;
    let listing = disassemble(&code).listing();
    match &s.out {
        Some(path) => write_out(path, &listing)?,
        None => std::io::stdout().lock().write_all(listing.as_bytes())?,
    }
    Ok(0)
}
