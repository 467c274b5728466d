//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p remixit-cli --test acceptance`.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remixit_core::analysis::{item_terms, mean_abs_corr, track_decomposition};
use remixit_core::datagen::{bandpass_oracle, domain_a, gen_test_set};
use remixit_core::metrics::{neg_si_sdr_loss_and_grad, si_sdr};
use remixit_core::net::{grad_check, init_model, GradCheckOptions, ModelConfig};
use remixit_core::signal::{mix, sample_permutation};
use remixit_core::trainers::{
    evaluate_with, mixit_loss, mixit_make_mom, remix, run, supervised_loss, Assignment, DataSource, Mode,
    PermuteMode, TeacherProtocol, TrainConfig, TrainInputs,
};
use remixit_core::{ModelState, SourceEstimates, WaveBatch};

const TEST_ITEMS: usize = 100;

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn line(&mut self, id: usize, name: &str, pass: bool, detail: String, started: Instant) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {id}: {verdict} {name}: {detail} [{:.1} s]", started.elapsed().as_secs_f64());
        if !pass {
            self.failed.push(id);
        }
    }
}

fn rand_batch(rng: &mut ChaCha8Rng, batch: usize, len: usize) -> WaveBatch {
    WaveBatch::new((0..batch * len).map(|_| rng.random_range(-1.0..1.0)).collect(), batch, len, 8000).unwrap()
}

fn separator() -> ModelConfig {
    ModelConfig { num_filters: 64, filter_len: 64, hop: 16, ..Default::default() }
}

fn identity_suite(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let mut decomp = 0.0f64;
    for _ in 0..1000 {
        let len = rng.random_range(16..512);
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        let mut v = || -> Vec<f64> { (0..len).map(|_| scale * rng.random_range(-1.0..1.0)).collect() };
        let (a, b, c) = (v(), v(), v());
        let it = item_terms(&a, &b, &c);
        let direct: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        decomp = decomp.max((it.total - (it.sup + it.teacher - 2.0 * it.corr)).abs()).max((it.total - direct).abs());
    }

    let mut consistency = 0.0f64;
    for k in 0..40 {
        let cfg = ModelConfig {
            num_slots: 2 + k % 2,
            num_filters: 8 << (k % 3),
            filter_len: 8 << (k % 2),
            hop: 4,
            depth: 1 + k % 3,
            seed: k as u64,
            ..Default::default()
        };
        let model = init_model::<f64>(cfg).unwrap();
        let x = rand_batch(&mut rng, 1 + k % 4, 64 + 37 * k).map(|v| v * 10f64.powi(k as i32 % 5 - 2));
        let (est, _) = model.forward(&x).unwrap();
        consistency = consistency.max(est.consistency_error(&x).unwrap());
    }

    let mut scale = 0.0f64;
    for _ in 0..100 {
        let reference: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let est: Vec<f64> = reference.iter().map(|v| v + 0.3 * rng.random_range(-1.0..1.0)).collect();
        let base = si_sdr(&est, &reference).unwrap().value_db;
        for c in [0.1, -0.1, 1.0, -1.0, 10.0, -10.0] {
            let scaled: Vec<f64> = est.iter().map(|v| c * v).collect();
            scale = scale.max((si_sdr(&scaled, &reference).unwrap().value_db - base).abs());
        }
    }

    let mut mixit_gap = 0.0f64;
    let mut mixit_assign_ok = true;
    for _ in 0..100 {
        let (batch, len) = (rng.random_range(1..6), rng.random_range(16..200));
        let est = SourceEstimates::from_slots(&[
            rand_batch(&mut rng, batch, len),
            rand_batch(&mut rng, batch, len),
            rand_batch(&mut rng, batch, len),
        ])
        .unwrap();
        let (m, n2) = (rand_batch(&mut rng, batch, len), rand_batch(&mut rng, batch, len));
        let out = mixit_loss(&est, &m, &n2).unwrap();
        let mut brute = 0.0;
        for b in 0..batch {
            let value = |join: usize, lone: usize| {
                let pair: Vec<f64> = est.item(0, b).iter().zip(est.item(join, b)).map(|(x, y)| x + y).collect();
                neg_si_sdr_loss_and_grad(&pair, m.row(b)).unwrap().0 + neg_si_sdr_loss_and_grad(est.item(lone, b), n2.row(b)).unwrap().0
            };
            let (first, second) = (value(1, 2), value(2, 1));
            let best = if second < first { Assignment::Second } else { Assignment::First };
            mixit_assign_ok &= out.assignments[b] == best;
            brute += first.min(second) / batch as f64;
        }
        mixit_gap = mixit_gap.max((brute - out.loss).abs());
    }

    let pass = decomp <= 1e-9 && consistency <= 1e-6 && scale <= 1e-9 && mixit_gap <= 1e-9 && mixit_assign_ok;
    let detail = format!(
        "decomposition {decomp:.1e}, consistency {consistency:.1e}, scale {scale:.1e}, mixit {mixit_gap:.1e} (assignments {})",
        if mixit_assign_ok { "match" } else { "differ" }
    );
    let fast = t.elapsed().as_secs_f64() < 10.0;
    r.line(1, "identity suite", pass && fast, detail, t);
}

fn gradient_checks(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = |seed| GradCheckOptions { samples: 50, seed, ..Default::default() };

    let (s, n) = (rand_batch(&mut rng, 2, 64), rand_batch(&mut rng, 2, 64));
    let m = mix(&s, &n).unwrap();
    let student = init_model::<f64>(ModelConfig { seed: 1, ..separator() }).unwrap();
    let sup = grad_check(&student, &m, &|e: &SourceEstimates| supervised_loss(e, &s, &n), opts(1)).unwrap();

    let n2 = rand_batch(&mut rng, 2, 64);
    let mom = mixit_make_mom(&m, &n2).unwrap();
    let mixit_model = init_model::<f64>(ModelConfig { num_slots: 3, seed: 2, ..separator() }).unwrap();
    let mixit = |e: &SourceEstimates| mixit_loss(e, &m, &n2).map(|o| (o.loss, o.grad));
    let mix_report = grad_check(&mixit_model, &mom, &mixit, opts(2)).unwrap();

    let teacher = init_model::<f64>(ModelConfig { seed: 3, ..separator() }).unwrap();
    let perm = sample_permutation(&mut rng, 2);
    let targets = remix(&teacher.separate(&m).unwrap(), &perm).unwrap();
    let remix_loss = |e: &SourceEstimates| supervised_loss(e, &targets.speech, &targets.noise);
    let rem = grad_check(&student, &targets.mixture, &remix_loss, opts(3)).unwrap();

    let errs = [sup.max_rel_error, mix_report.max_rel_error, rem.max_rel_error];
    let counts = [sup.checked.len(), mix_report.checked.len(), rem.checked.len()];
    let pass = errs.iter().all(|&e| e < 1e-5) && counts.iter().all(|&c| c == 50) && t.elapsed().as_secs_f64() < 30.0;
    let detail = format!("max rel error supervised {:.1e}, mixit {:.1e}, remixit {:.1e}", errs[0], errs[1], errs[2]);
    r.line(2, "gradient checks", pass, detail, t);
}

fn supervised_a(r: &mut Report) -> ModelState {
    let t = Instant::now();
    let a = domain_a();
    let test = gen_test_set(&a, TEST_ITEMS).unwrap();
    let oracle = evaluate_with(&test, |m| Ok(bandpass_oracle(&a, m)?.slot(0))).unwrap();

    let mut cfg = TrainConfig::new(Mode::Supervised);
    cfg.train_count = 2000;
    cfg.epochs = 40;
    cfg.test_count = TEST_ITEMS;
    cfg.model = separator();
    cfg.lr0 = 2e-3;
    cfg.lr_halving_period = 8;
    let inputs = TrainInputs::load(&cfg).unwrap();
    let out = run::<f64>(&cfg, &inputs, None, |_| {}).unwrap();
    let got = out.final_si_sdri().unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = got >= 0.7 * oracle.si_sdri && secs < 600.0;
    let detail = format!("SI-SDRi {got:.2} dB vs oracle {:.2} dB (ratio {:.2})", oracle.si_sdri, got / oracle.si_sdri);
    r.line(3, "supervised on A", pass, detail, t);
    out.model
}

struct Adapted {
    initial_sdr: f64,
    initial_sdri: f64,
    final_sdr: f64,
    final_sdri: f64,
    mean_abs_corr: Option<f64>,
}

fn adapt(teacher: &ModelState, mode: Mode, domain: &str, seed: u64, setup: impl FnOnce(&mut TrainConfig)) -> Adapted {
    let mut cfg = TrainConfig::new(mode);
    cfg.train_data = DataSource::Spec(domain.into());
    cfg.test_count = TEST_ITEMS;
    cfg.seed = seed;
    cfg.model = *teacher.config();
    setup(&mut cfg);
    let inputs = TrainInputs::load(&cfg).unwrap();
    let out = run(&cfg, &inputs, Some(teacher), |_| {}).unwrap();
    let initial = out.initial.unwrap();
    let last = out.rows.last().unwrap();
    let corr = out.probe.as_ref().map(|p| mean_abs_corr(&track_decomposition(p).unwrap()));
    Adapted {
        initial_sdr: initial.si_sdr,
        initial_sdri: initial.si_sdri,
        final_sdr: last.si_sdr,
        final_sdri: last.si_sdri,
        mean_abs_corr: corr,
    }
}

fn remixit_b(r: &mut Report, teacher: &ModelState) {
    let t = Instant::now();
    let seeds = [0u64, 1, 2];
    let remix_run = |seed, protocol, permute| {
        adapt(teacher, Mode::Remixit, "B", seed, |c| {
            c.train_count = 500;
            c.epochs = 30;
            c.protocol = protocol;
            c.permute = permute;
        })
    };
    let mut seq = Vec::new();
    let mut stat = Vec::new();
    let mut ident = Vec::new();
    for &s in &seeds {
        seq.push(remix_run(s, TeacherProtocol::Sequential(10), PermuteMode::Shuffle));
        stat.push(remix_run(s, TeacherProtocol::Static, PermuteMode::Shuffle));
        ident.push(remix_run(s, TeacherProtocol::Sequential(10), PermuteMode::Identity));
    }

    let gains: Vec<f64> = seq.iter().map(|a| a.final_sdr - a.initial_sdr).collect();
    let detail = format!(
        "teacher {:.2} dB, student gain per seed {}",
        seq[0].initial_sdr,
        gains.iter().map(|g| format!("{g:+.2}")).collect::<Vec<_>>().join(" ")
    );
    r.line(4, "remixit beats frozen teacher", gains.iter().all(|&g| g >= 0.5), detail, t);

    let diffs: Vec<f64> = seq.iter().zip(&stat).map(|(a, b)| a.final_sdr - b.final_sdr).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let pass = diffs.iter().all(|&d| d >= -0.1) && mean > 0.0;
    let detail = format!(
        "sequential minus static per seed {}, mean {mean:+.3}",
        diffs.iter().map(|d| format!("{d:+.3}")).collect::<Vec<_>>().join(" ")
    );
    r.line(5, "sequential vs static", pass, detail, t);

    let pairs: Vec<(f64, f64)> = seq.iter().zip(&ident).map(|(a, b)| (a.mean_abs_corr.unwrap(), b.mean_abs_corr.unwrap())).collect();
    let pass = pairs.iter().all(|(a, b)| a <= b);
    let detail = format!(
        "mean |corr| remix/identity per seed {}",
        pairs.iter().map(|(a, b)| format!("{a:.5}/{b:.5}")).collect::<Vec<_>>().join(" ")
    );
    r.line(9, "error correlation", pass, detail, t);
}

fn mixit_b(r: &mut Report) {
    let t = Instant::now();
    let mut cfg = TrainConfig::new(Mode::Mixit);
    cfg.train_data = DataSource::Spec("B".into());
    cfg.train_count = 1000;
    cfg.epochs = 10;
    cfg.test_count = TEST_ITEMS;
    cfg.model = ModelConfig { num_slots: 3, ..separator() };
    cfg.lr0 = 2e-3;
    cfg.lr_halving_period = 8;
    let inputs = TrainInputs::load(&cfg).unwrap();
    let got = run::<f64>(&cfg, &inputs, None, |_| {}).unwrap().final_si_sdri().unwrap();
    let detail = format!("speech slot SI-SDRi {got:.2} dB ({} mixtures, {} noises)", inputs.train.mixtures.as_ref().map_or(0, |v| v.len()), inputs.train.noise.as_ref().map_or(0, |v| v.len()));
    r.line(6, "mixit on B", got > 3.0, detail, t);
}

fn zero_shot(r: &mut Report, teacher: &ModelState) {
    let t = Instant::now();
    let gains: Vec<f64> = (0..3)
        .map(|s| {
            let a = adapt(teacher, Mode::ZeroShot, "B", s, |c| {
                c.train_count = 200;
                c.epochs = 20;
            });
            a.final_sdri - a.initial_sdri
        })
        .collect();
    let mean = gains.iter().sum::<f64>() / 3.0;
    let detail = format!(
        "SI-SDRi change per seed {}, mean {mean:+.2}",
        gains.iter().map(|g| format!("{g:+.2}")).collect::<Vec<_>>().join(" ")
    );
    r.line(7, "zero-shot adaptation", mean > 0.0, detail, t);

    let t = Instant::now();
    let own: Vec<f64> = (0..3)
        .map(|s| {
            let a = adapt(teacher, Mode::ZeroShot, "A", s, |c| {
                c.train_count = 200;
                c.epochs = 10;
                c.lr0 = 1e-4;
                c.test_data = Some(DataSource::Spec("A".into()));
            });
            a.final_sdri - a.initial_sdri
        })
        .collect();
    let pass = own.iter().all(|&g| g >= -0.2);
    println!(
        "extra: {} own-domain adaptation (lr0 1e-4): SI-SDRi change per seed {} [{:.1} s]",
        if pass { "PASS" } else { "FAIL" },
        own.iter().map(|g| format!("{g:+.3}")).collect::<Vec<_>>().join(" "),
        t.elapsed().as_secs_f64()
    );
    if !pass {
        r.failed.push(7);
    }
}

fn determinism(r: &mut Report) {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.spec"), "builtin = B\nclip_len = 512\n").unwrap();
    let body = "model.num_filters = 16\nmodel.filter_len = 16\nmodel.hop = 8\nmodel.hidden_width = 16\n\
                train_data = small.spec\ntrain_count = 32\ntest_count = 8\nbatch = 4\nepochs = 3\nseed = 7\n";
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, body).unwrap();
    let train = |mode: &str, out: &str, teacher: Option<&str>| -> Vec<u8> {
        let out = dir.path().join(out);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_remixit"));
        cmd.args(["train", "--quiet", "--mode", mode, "--config"]).arg(&cfg).arg("--out").arg(&out);
        if let Some(t) = teacher {
            cmd.arg("--teacher").arg(dir.path().join(t));
        }
        let o = cmd.env_remove("REMIXIT_SEED").output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("metrics.csv")).unwrap()
    };
    let sup = [train("supervised", "s1", None), train("supervised", "s2", None)];
    let rem = [train("remixit", "r1", Some("s1/model.rmxm")), train("remixit", "r2", Some("s1/model.rmxm"))];
    let pass = sup[0] == sup[1] && rem[0] == rem[1];
    let detail = format!(
        "supervised CSVs {}, remixit CSVs {}",
        if sup[0] == sup[1] { "identical" } else { "differ" },
        if rem[0] == rem[1] { "identical" } else { "differ" }
    );
    r.line(8, "determinism", pass, detail, t);
}

fn main() -> ExitCode {
    let overall = Instant::now();
    let mut r = Report { failed: Vec::new() };
    identity_suite(&mut r);
    gradient_checks(&mut r);
    determinism(&mut r);
    let teacher = supervised_a(&mut r);
    mixit_b(&mut r);
    zero_shot(&mut r, &teacher);
    remixit_b(&mut r, &teacher);
    r.failed.sort_unstable();
    r.failed.dedup();
    println!("acceptance: {} failed {:?} [{:.1} s]", r.failed.len(), r.failed, overall.elapsed().as_secs_f64());
    if r.failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
