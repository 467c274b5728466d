use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{SystemTime, UNIX_EPOCH};

use remixit_core::analysis::{decompose_errors_unnormalized, decomposition_csv, mean_abs_corr, track_decomposition, ProbeLog};
use remixit_core::checkpoint;
use remixit_core::datagen::wav::{write_wav, WavFile};
use remixit_core::datagen::{
    bandpass_oracle, gen_test_set, gen_views, DatasetViews, DomainSpec, Manifest, ManifestRow, Role, SourceRef, Split,
};
use remixit_core::trainers::{evaluate, evaluate_with, metrics_csv, run, TrainConfig, TrainInputs};
use remixit_core::{Error, ModelState};
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "REMIXIT_SEED";

/// Exit status and message of a failed command.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: if e.is_numerical() { 3 } else { 2 }, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

type CmdResult = std::result::Result<(), Failure>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> std::result::Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Error::Io { path: path.to_path_buf(), source: e }.into())
}

fn create_dir(path: &Path) -> std::result::Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e }.into())
}

/// Accepts `mixtures/noise`, `paired/mixtures/noise`, or
/// `role=fraction` pairs separated by commas.
pub fn parse_split(text: &str) -> std::result::Result<Split, Failure> {
    let bad = |m: String| usage(format!("split: {m}"));
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad(format!("{v:?} is not a number")));
    let mut split = Split { paired: 0.0, mixtures: 0.0, noise: 0.0 };
    if text.contains('=') {
        for part in text.split(',') {
            let (role, value) = part.split_once('=').ok_or_else(|| bad(format!("expected role=fraction, got {part:?}")))?;
            let slot = match role.trim() {
                "paired" => &mut split.paired,
                "mixtures" | "mixtures_only" => &mut split.mixtures,
                "noise" | "noise_only" => &mut split.noise,
                r => return Err(bad(format!("unknown role {r:?}"))),
            };
            *slot = num(value)?;
        }
    } else {
        let values: Vec<f64> = text.split('/').map(num).collect::<std::result::Result<_, _>>()?;
        split = match values.as_slice() {
            [m, n] => Split { paired: 0.0, mixtures: *m, noise: *n },
            [p, m, n] => Split { paired: *p, mixtures: *m, noise: *n },
            _ => return Err(bad(format!("expected 2 or 3 fractions, got {}", values.len()))),
        };
    }
    split.validate().map_err(|e| bad(e.to_string()))?;
    Ok(split)
}

fn wav_rows(views: &DatasetViews, dir: &Path, clips: &str, sample_rate: u32) -> std::result::Result<Vec<ManifestRow>, Failure> {
    let mut rows = Vec::new();
    let put = |name: String, data: &[f64]| -> std::result::Result<PathBuf, Failure> {
        let rel = PathBuf::from(clips).join(name);
        write_wav(dir.join(&rel), &WavFile::from_f64(data, sample_rate))?;
        Ok(rel)
    };
    if let Some(v) = &views.paired {
        let all: Vec<usize> = (0..v.len()).collect();
        let b = v.batch::<f64>(&all)?;
        for (i, &index) in v.indices().iter().enumerate() {
            put(format!("{index}.speech.wav"), b.speech.row(i))?;
            put(format!("{index}.noise.wav"), b.noise.row(i))?;
            let rel = put(format!("{index}.mix.wav"), b.mixture.row(i))?;
            rows.push(ManifestRow { index, role: Role::Paired, source: SourceRef::File(rel) });
        }
    }
    if let Some(v) = &views.mixtures {
        let all: Vec<usize> = (0..v.len()).collect();
        let b = v.batch::<f64>(&all)?;
        for (i, &index) in v.indices().iter().enumerate() {
            let rel = put(format!("{index}.mix.wav"), b.row(i))?;
            rows.push(ManifestRow { index, role: Role::MixturesOnly, source: SourceRef::File(rel) });
        }
    }
    if let Some(v) = &views.noise {
        let all: Vec<usize> = (0..v.len()).collect();
        let b = v.batch::<f64>(&all)?;
        for (i, &index) in v.indices().iter().enumerate() {
            let rel = put(format!("{index}.noise.wav"), b.row(i))?;
            rows.push(ManifestRow { index, role: Role::NoiseOnly, source: SourceRef::File(rel) });
        }
    }
    Ok(rows)
}

pub fn gen_data(spec: &str, count: usize, split: &str, out: &Path, wav: bool, heldout: bool) -> CmdResult {
    let spec = DomainSpec::load(spec)?;
    let split = if heldout { Split::PAIRED } else { parse_split(split)? };
    let views = if heldout {
        DatasetViews { paired: Some(gen_test_set(&spec, count)?), mixtures: None, noise: None }
    } else {
        gen_views(&spec, count, split)?
    };
    create_dir(out)?;
    write(&out.join("domain.spec"), spec.to_text())?;
    let mut manifest = Manifest::synthetic("domain.spec", &views);
    manifest.directives.push(("count".into(), count.to_string()));
    manifest.directives.push(("split".into(), format!("{} {} {}", split.paired, split.mixtures, split.noise)));
    if wav {
        create_dir(&out.join("clips"))?;
        manifest.rows = wav_rows(&views, out, "clips", spec.sample_rate)?;
    }
    manifest.save(out.join("manifest.tsv"))?;
    println!(
        "wrote {} rows ({} paired, {} mixtures_only, {} noise_only) to {}",
        manifest.rows.len(),
        manifest.count(Role::Paired),
        manifest.count(Role::MixturesOnly),
        manifest.count(Role::NoiseOnly),
        out.join("manifest.tsv").display()
    );
    Ok(())
}

/// Hex SHA-256 of the canonical config text and seed, truncated to 12
/// characters.
pub fn run_id(cfg: &TrainConfig) -> String {
    let digest = Sha256::new().chain_update(cfg.to_text()).chain_update(cfg.seed.to_le_bytes()).finalize();
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn load_config(mode: Option<&str>, path: &Path) -> std::result::Result<TrainConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let text = match mode {
        Some(m) => format!("mode = {m}\n{text}"),
        None => text,
    };
    let mut cfg = TrainConfig::parse(&text, &path.display().to_string(), path.parent().unwrap_or(Path::new("")))?;
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.seed = v.trim().parse().map_err(|_| usage(format!("{SEED_ENV}: {v:?} is not an integer")))?;
    }
    Ok(cfg)
}

pub fn train(mode: Option<&str>, config: &Path, teacher: Option<&Path>, out: Option<&Path>, quiet: bool) -> CmdResult {
    let cfg = load_config(mode, config)?;
    if cfg.mode.needs_teacher() && teacher.is_none() {
        return Err(usage(format!("{} mode requires --teacher", cfg.mode)));
    }
    let teacher: Option<ModelState> = teacher.map(checkpoint::load).transpose()?;
    let id = run_id(&cfg);
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs").join(&id));
    create_dir(&dir)?;
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    write(
        &dir.join("manifest.txt"),
        format!(
            "config = {}\noutput = {}\nrun_id = {id}\nseed = {}\ncreated_at = {created}\n",
            config.display(),
            dir.display(),
            cfg.seed
        ),
    )?;
    write(&dir.join("config.resolved"), cfg.to_text())?;
    let inputs = TrainInputs::load(&cfg)?;
    let outcome = run(&cfg, &inputs, teacher.as_ref(), |row| {
        if !quiet {
            eprintln!("{}", row.csv_line());
        }
    })?;
    write(&dir.join("metrics.csv"), metrics_csv(&outcome.rows))?;
    checkpoint::save(&outcome.model, dir.join("model.rmxm"))?;
    if let Some(t) = &outcome.teacher {
        checkpoint::save(t, dir.join("teacher.rmxm"))?;
    }
    if let Some(p) = &outcome.probe {
        p.save(dir.join("probe.bin"))?;
    }
    if let Some(init) = outcome.initial {
        println!("initial_si_sdr={}", init.si_sdr);
        println!("initial_si_sdri={}", init.si_sdri);
    }
    if let Some(last) = outcome.rows.last() {
        println!("final_si_sdr={}", last.si_sdr);
    }
    println!("final_si_sdri={}", outcome.final_si_sdri().unwrap_or(0.0));
    println!("run_dir={}", dir.display());
    Ok(())
}

pub fn eval(model: &str, data: &Path, out: Option<&Path>) -> CmdResult {
    let manifest = Manifest::load(data)?;
    let views = manifest.views()?;
    let test = views.paired.as_ref().ok_or(Error::Role {
        expected: "paired",
        found: if views.mixtures.is_some() { "mixtures_only" } else { "noise_only" },
    })?;
    let result = match model {
        "identity" => evaluate_with(test, |m| Ok(m.clone()))?,
        "bandpass" => {
            let spec = manifest.spec()?;
            evaluate_with(test, |m| Ok(bandpass_oracle(&spec, m)?.slot(0)))?
        }
        path => {
            let state: ModelState = checkpoint::load(path)?;
            evaluate(&state, test)?
        }
    };
    let csv = format!("model,items,si_sdr,si_sdri\n{model},{},{},{}\n", result.items, result.si_sdr, result.si_sdri);
    print!("{csv}");
    if let Some(p) = out {
        write(p, &csv)?;
    }
    Ok(())
}

pub fn analyze(run_dir: &Path, dat: bool) -> CmdResult {
    let path = run_dir.join("probe.bin");
    if !path.exists() {
        return Err(usage(format!("{} not found; only remixit and zeroshot runs record probe tensors", path.display())));
    }
    let log = ProbeLog::load(&path)?;
    let rows = track_decomposition(&log)?;
    for (epoch, d) in &rows {
        if d.identity_residual() > 1e-9 {
            return Err(Failure {
                code: 3,
                message: format!("epoch {epoch}: decomposition identity off by {}", d.identity_residual()),
            });
        }
    }
    write(&run_dir.join("decomposition.csv"), decomposition_csv(&rows))?;
    let raw: Vec<_> = log
        .records
        .iter()
        .map(|r| Ok((r.epoch, decompose_errors_unnormalized(&r.student, &r.teacher, &log.clean)?)))
        .collect::<remixit_core::Result<_>>()?;
    write(&run_dir.join("decomposition_unnormalized.csv"), decomposition_csv(&raw))?;
    if dat {
        let mut text = String::from("# epoch sup_term teacher_term corr_term total\n");
        for (e, d) in &rows {
            text.push_str(&format!("{e} {} {} {} {}\n", d.sup_term, d.teacher_term, d.corr_term, d.total));
        }
        write(&run_dir.join("decomposition.dat"), text)?;
    }
    print!("{}", decomposition_csv(&rows));
    println!("mean_abs_corr={}", mean_abs_corr(&rows));
    Ok(())
}

fn spawn_train(
    mode: Option<&str>,
    config: &Path,
    teacher: Option<&Path>,
    seed: u64,
    dir: &Path,
) -> std::result::Result<Child, Failure> {
    let exe = std::env::current_exe().map_err(|e| usage(format!("cannot locate own executable: {e}")))?;
    let mut cmd = Command::new(exe);
    cmd.arg("train").arg("--config").arg(config).arg("--out").arg(dir).arg("--quiet");
    if let Some(m) = mode {
        cmd.arg("--mode").arg(m);
    }
    if let Some(t) = teacher {
        cmd.arg("--teacher").arg(t);
    }
    cmd.env(SEED_ENV, seed.to_string()).stdout(Stdio::piped());
    cmd.spawn().map_err(|e| usage(format!("cannot spawn training process: {e}")))
}

fn finish(child: Child, seed: u64) -> std::result::Result<f64, Failure> {
    let mut child = child;
    let stdout = child.stdout.take().expect("piped stdout");
    let mut summary = None;
    for line in BufReader::new(stdout).lines().map_while(std::result::Result::ok) {
        if let Some(v) = line.strip_prefix("final_si_sdri=") {
            summary = v.parse::<f64>().ok();
        }
    }
    let status = child.wait().map_err(|e| usage(format!("seed {seed}: {e}")))?;
    match (status.code(), summary) {
        (Some(0), Some(v)) => Ok(v),
        (code, _) => Err(Failure {
            code: code.and_then(|c| u8::try_from(c).ok()).filter(|&c| c != 0).unwrap_or(2),
            message: format!("seed {seed}: training failed with status {status}"),
        }),
    }
}

pub fn sweep(
    mode: Option<&str>,
    config: &Path,
    teacher: Option<&Path>,
    seeds: &[u64],
    jobs: usize,
    out: &Path,
) -> CmdResult {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    create_dir(out)?;
    let mut results = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(jobs) {
        let children = chunk
            .iter()
            .map(|&s| Ok((s, spawn_train(mode, config, teacher, s, &out.join(format!("seed_{s}")))?)))
            .collect::<std::result::Result<Vec<_>, Failure>>()?;
        for (s, child) in children {
            results.push((s, finish(child, s)?));
        }
    }
    let mut csv = String::from("seed,final_si_sdri\n");
    for (s, v) in &results {
        csv.push_str(&format!("{s},{v}\n"));
    }
    write(&out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
