use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;

use super::config::RunConfig;
use super::manifest::{manifest_path, Manifest};
use super::*;
use crate::ballworld::{self, generate_dataset, EpisodeSet, RngState};
use crate::evalharness::{self, Trackers};
use crate::paegan::io::{self as model_io, ModelSidecar, Stage};
use crate::paegan::{
    belief_bank, train_pae as run_pae_training, train_sampler_gan, CurriculumSchedule, DiscriminatorModel, PaeModel,
    SamplerModel, TrainPaeConfig, TrainSamplerConfig,
};
use crate::pfilter::{self, PfConfig};
use crate::seed::{self, tag};

type CmdResult = Result<(), CliError>;

fn base_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load_or_default(c.config.as_deref())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(CliError::Runtime)
}

fn parent_dir(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_data(path: &Path) -> Result<EpisodeSet, CliError> {
    if !path.exists() {
        return Err(CliError::Runtime(anyhow::anyhow!("dataset {} does not exist", path.display())));
    }
    Ok(EpisodeSet::load(path)?)
}

/// Training split: all but the last 10% of episodes (all of them when
/// fewer than ten).
fn training_split(data: &EpisodeSet) -> Result<EpisodeSet, CliError> {
    let held = data.episodes / 10;
    Ok(data.subset(0..data.episodes - held)?)
}

fn held_out_split(data: &EpisodeSet) -> Result<EpisodeSet, CliError> {
    let held = (data.episodes / 10).max(1);
    Ok(data.subset(data.episodes - held..data.episodes)?)
}

fn header_hash(data: &EpisodeSet) -> Result<String, CliError> {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_vec(&data.header()).map_err(|e| CliError::Runtime(e.into()))?;
    Ok(hex::encode(Sha256::digest(json)))
}

pub fn gen_data(a: GenDataArgs) -> CmdResult {
    let mut cfg = base_config(&a.common)?;
    if let Some(b) = a.balls {
        cfg.world.num_balls = b;
    }
    if let Some(e) = a.episodes {
        cfg.data.episodes = e as usize;
    }
    if let Some(s) = a.steps {
        cfg.data.steps = s as usize;
    }
    if let Some(c) = a.collision {
        cfg.world.collision_mode = c.into();
    }
    if let Some(n) = a.process_noise {
        cfg.world.process_noise_sigma = n;
    }
    cfg.world.validate()?;
    let out = a.out.unwrap_or_else(|| cfg.out_dir().join("data.bin"));
    parent_dir(&out)?;
    let data = generate_dataset(&cfg.world, cfg.data.episodes, cfg.data.steps, cfg.seed)?;
    data.save(&out)?;
    let mut m = Manifest::new("gen-data", &cfg);
    m.output(&out)?;
    m.write(&manifest_path(&out))?;
    println!(
        "wrote {}: episodes={} steps={} size={}x{} balls={} seed={}",
        out.display(),
        data.episodes,
        data.steps,
        cfg.world.image_size,
        cfg.world.image_size,
        cfg.world.num_balls,
        cfg.seed
    );
    Ok(())
}

/// Loss log that keeps its first `keep` rows from a previous run.
struct LossLog {
    path: PathBuf,
    lines: Vec<String>,
}

impl LossLog {
    fn open(path: PathBuf, header: &str, keep: Option<u64>) -> Result<Self, CliError> {
        let mut lines = vec![header.to_string()];
        if let Some(k) = keep {
            let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read log {}", path.display()))?;
            lines.extend(text.lines().skip(1).take(k as usize).map(String::from));
            if lines.len() != k as usize + 1 {
                return Err(CliError::Runtime(anyhow::anyhow!(
                    "log {} has fewer than {k} rows; cannot resume",
                    path.display()
                )));
            }
        }
        Ok(LossLog { path, lines })
    }

    fn flush(&self) -> crate::Result<()> {
        let text = self.lines.join("\n") + "\n";
        std::fs::write(&self.path, text).map_err(|e| crate::Error::Io {
            path: self.path.clone(),
            source: e,
        })
    }
}

fn check_resume(sidecar: &ModelSidecar, training: &serde_json::Value, arch: &crate::paegan::ArchConfig) -> CmdResult {
    if &sidecar.training != training || &sidecar.arch != arch {
        return Err(CliError::Usage(
            "resume settings differ from the checkpoint's; use the original configuration".into(),
        ));
    }
    Ok(())
}

fn apply_train_flags(t: &TrainArgs, updates: &mut u64, batch: &mut usize, lr: &mut f64) {
    if let Some(u) = t.updates {
        *updates = u;
    }
    if let Some(b) = t.batch_size {
        *batch = b;
    }
    if let Some(l) = t.lr {
        *lr = l;
    }
}

pub fn train_pae(a: TrainPaeArgs) -> CmdResult {
    let t = &a.train;
    let mut cfg = base_config(&t.common)?;
    let p = &mut cfg.training.pae;
    apply_train_flags(t, &mut p.updates, &mut p.batch_size, &mut p.adam.learning_rate);
    if p.checkpoint_every == 0 {
        return Err(CliError::Usage("checkpoint_every must be positive".into()));
    }
    let tcfg = TrainPaeConfig {
        updates: p.updates,
        batch_size: p.batch_size,
        schedule: CurriculumSchedule::for_updates(p.updates),
        adam: p.adam,
        seed: cfg.seed,
    };
    tcfg.validate()?;
    cfg.arch.validate()?;
    let out = a.out.clone().unwrap_or_else(|| cfg.out_dir().join("pae.ckpt"));
    let log_path = t.log.clone().unwrap_or_else(|| with_suffix(&out, ".log.csv"));
    parent_dir(&out)?;
    let data = load_data(&t.data)?;
    let train = training_split(&data)?;
    let training = serde_json::to_value(&tcfg).map_err(|e| CliError::Runtime(e.into()))?;

    let (mut pae, start) = if t.resume && model_io::sidecar_path(&out).exists() {
        let (pae, side) = model_io::load_pae(&out)?;
        check_resume(&side, &training, &cfg.arch)?;
        (pae, side.updates_done)
    } else {
        (PaeModel::<f32>::new(cfg.arch.clone(), cfg.seed)?, 0)
    };
    let mut log = LossLog::open(log_path.clone(), "update,p_mask,loss,wall_time", (start > 0).then_some(start))?;
    let stop = t.stop_after.unwrap_or(tcfg.updates).min(tcfg.updates);
    let run_cfg = TrainPaeConfig {
        updates: stop,
        ..tcfg.clone()
    };
    let every = cfg.training.pae.checkpoint_every;
    let save = |pae: &PaeModel<f32>, done: u64, log: &LossLog| -> crate::Result<()> {
        let side = ModelSidecar::new(Stage::Pae, cfg.arch.clone(), done, cfg.seed, training.clone());
        model_io::save_pae(&out, pae, side)?;
        log.flush()
    };
    run_pae_training(&mut pae, &train, &run_cfg, start, |m, r| {
        log.lines
            .push(format!("{},{:.6},{:.8e},{:.3}", r.update, r.p_mask, r.loss, r.wall_time));
        let done = r.update + 1;
        if done % every == 0 && done < stop {
            save(m, done, &log)?;
            eprintln!("update {done}/{}: loss {:.4e} p_mask {:.3}", tcfg.updates, r.loss, r.p_mask);
        }
        Ok(())
    })?;
    save(&pae, stop.max(start), &log)?;

    let mut m = Manifest::new("train-pae", &cfg);
    m.input(&t.data)?;
    for f in [out.clone(), model_io::sidecar_path(&out), log_path] {
        m.output(&f)?;
    }
    if stop < tcfg.updates {
        m.notes.push(format!("stopped after {stop} of {} updates", tcfg.updates));
    }
    m.write(&manifest_path(&out))?;
    println!("wrote {} after {stop} updates", out.display());
    Ok(())
}

pub fn train_sampler(a: TrainSamplerArgs) -> CmdResult {
    let t = &a.train;
    let mut cfg = base_config(&t.common)?;
    let s = &mut cfg.training.sampler;
    apply_train_flags(t, &mut s.updates, &mut s.batch_size, &mut s.adam.learning_rate);
    if s.checkpoint_every == 0 {
        return Err(CliError::Usage("checkpoint_every must be positive".into()));
    }
    let tcfg = TrainSamplerConfig {
        updates: s.updates,
        batch_size: s.batch_size,
        loss: s.loss,
        d_update_period: s.d_update_period,
        bank_episodes: s.bank_episodes,
        adam: s.adam,
        seed: cfg.seed,
        ..TrainSamplerConfig::new(s.updates, s.batch_size, cfg.seed)
    };
    tcfg.validate()?;
    let (pae, _) = model_io::load_pae(&a.pae).map_err(|e| match e {
        crate::Error::MissingStage(m) => CliError::Runtime(anyhow::anyhow!("missing stage PAE: {m}; run train-pae first")),
        other => other.into(),
    })?;
    cfg.arch = pae.arch().clone();
    let pae_checksum = pae.store().checksum();
    let out = a.out.clone().unwrap_or_else(|| cfg.out_dir().join("sampler.ckpt"));
    let log_path = t.log.clone().unwrap_or_else(|| with_suffix(&out, ".log.csv"));
    parent_dir(&out)?;
    let data = load_data(&t.data)?;
    let train = training_split(&data)?;
    let training = serde_json::to_value(&tcfg).map_err(|e| CliError::Runtime(e.into()))?;

    let (mut sampler, mut disc, start) = if t.resume && model_io::sidecar_path(&out).exists() {
        let (s, d, side) = model_io::load_gan(&out)?;
        check_resume(&side, &training, &cfg.arch)?;
        if side.pae_checksum.as_deref() != Some(pae_checksum.as_str()) {
            return Err(CliError::Usage("checkpoint was trained against a different PAE".into()));
        }
        (s, d, side.updates_done)
    } else {
        let init = seed::derive(cfg.seed, tag::INIT, 1);
        (
            SamplerModel::<f32>::new(cfg.arch.clone(), init)?,
            DiscriminatorModel::<f32>::new(cfg.arch.clone(), init + 1)?,
            0,
        )
    };
    let bank = belief_bank(&pae, &train, tcfg.bank_episodes, tcfg.bank_p_mask, cfg.seed)?;
    let mut log = LossLog::open(
        log_path.clone(),
        "update,horizon,l_g,l_av,l_d,d_accuracy,wall_time",
        (start > 0).then_some(start),
    )?;
    let stop = t.stop_after.unwrap_or(tcfg.updates).min(tcfg.updates);
    let run_cfg = TrainSamplerConfig {
        updates: stop,
        ..tcfg.clone()
    };
    let every = cfg.training.sampler.checkpoint_every;
    let save = |s: &SamplerModel<f32>, d: &DiscriminatorModel<f32>, done: u64, log: &LossLog| -> crate::Result<()> {
        let mut side = ModelSidecar::new(Stage::Sampler, cfg.arch.clone(), done, cfg.seed, training.clone());
        side.pae_checksum = Some(pae_checksum.clone());
        model_io::save_gan(&out, s, d, side)?;
        log.flush()
    };
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.8e}"));
    train_sampler_gan(&pae, &mut sampler, &mut disc, &train, &bank, &run_cfg, start, |s, d, r| {
        log.lines.push(format!(
            "{},{},{:.8e},{:.8e},{},{},{:.3}",
            r.update,
            r.horizon,
            r.l_g,
            r.l_av,
            opt(r.l_d),
            opt(r.d_accuracy),
            r.wall_time
        ));
        let done = r.update + 1;
        if done % every == 0 && done < stop {
            save(s, d, done, &log)?;
            eprintln!("update {done}/{}: L_G {:.4} L_Av {:.4e}", tcfg.updates, r.l_g, r.l_av);
        }
        Ok(())
    })?;
    save(&sampler, &disc, stop.max(start), &log)?;
    if pae.store().checksum() != pae_checksum {
        return Err(CliError::Runtime(anyhow::anyhow!("PAE parameters changed during sampler training")));
    }

    let mut m = Manifest::new("train-sampler", &cfg);
    m.input(&t.data)?;
    m.input(&a.pae)?;
    for f in [out.clone(), model_io::sidecar_path(&out), log_path] {
        m.output(&f)?;
    }
    m.write(&manifest_path(&out))?;
    println!("wrote {} after {stop} updates", out.display());
    Ok(())
}

fn apply_protocol(p: &ProtocolArgs, cfg: &mut RunConfig) -> CmdResult {
    let pr = &mut cfg.protocol;
    if let Some(w) = p.warmup {
        pr.warmup_obs = w;
    }
    if let Some(h) = p.horizon {
        pr.horizon = h;
    }
    if let Some(o) = p.obs_prob {
        pr.obs_probability = o;
    }
    if let Some(e) = p.episodes {
        pr.num_eval_episodes = e;
    }
    if let Some(n) = p.particles {
        cfg.pf.num_particles = n;
    }
    pr.seed = cfg.seed;
    Ok(pr.validate()?)
}

fn pf_config(cfg: &RunConfig, data: &EpisodeSet) -> Result<PfConfig, CliError> {
    let pf = PfConfig {
        num_particles: cfg.pf.num_particles,
        resample_threshold: cfg.pf.resample_threshold,
        ..PfConfig::new(data.cfg.clone())
    };
    pf.validate()?;
    Ok(pf)
}

pub fn evaluate(a: EvaluateArgs) -> CmdResult {
    let mut cfg = base_config(&a.common)?;
    apply_protocol(&a.protocol, &mut cfg)?;
    let out_dir = a.out_dir.clone().unwrap_or_else(|| cfg.out_dir().join("eval"));
    create_dir(&out_dir)?;
    let mut m = Manifest::new("evaluate", &cfg);

    let data = load_data(&a.data)?;
    m.input(&a.data)?;
    let (eval, baseline_src) = match &a.train_data {
        Some(tp) => {
            let train = load_data(tp)?;
            m.input(tp)?;
            if header_hash(&train)? == header_hash(&data)? {
                let msg = "evaluation and training sets are identical; evaluating on the held-out last 10% only";
                eprintln!("warning: {msg}");
                m.notes.push(msg.into());
                (held_out_split(&data)?, training_split(&train)?)
            } else {
                (data, training_split(&train)?)
            }
        }
        None => {
            let msg = "no --train-data given; baseline is the mean frame of the evaluation set";
            eprintln!("warning: {msg}");
            m.notes.push(msg.into());
            let base = data.clone();
            (data, base)
        }
    };
    let baseline = evalharness::uninformed_baseline(&baseline_src)?;

    let (pae, _) = model_io::load_pae(&a.pae)?;
    m.input(&a.pae)?;
    let sampler = match &a.sampler {
        Some(sp) => {
            let (s, _, side) = model_io::load_gan(sp)?;
            m.input(sp)?;
            if side.pae_checksum.as_deref() != Some(pae.store().checksum().as_str()) {
                let msg = "sampler was trained against a different PAE";
                eprintln!("warning: {msg}");
                m.notes.push(msg.into());
            }
            Some(s)
        }
        None => None,
    };
    cfg.arch = pae.arch().clone();
    m.config = cfg.clone();
    let pf = pf_config(&cfg, &eval)?;
    let trackers = Trackers {
        pae: &pae,
        sampler: sampler.as_ref(),
        pf: &pf,
    };
    let records = evalharness::run_tracking(&cfg.protocol, &eval, &trackers)?;
    let curve = evalharness::mse_curve(&records, &baseline, cfg.protocol.warmup_obs)?;

    let csv = out_dir.join("mse.csv");
    curve.write_csv(&csv)?;
    let rec_path = out_dir.join("records.bin");
    evalharness::save_records(&rec_path, &records, cfg.protocol.warmup_obs)?;
    let summary_path = out_dir.join("summary.csv");
    let divergences: usize = records.iter().map(|r| r.pf_divergences).sum();
    let rows = [
        ("mean_mse_paegan", evalharness::mean(&curve.mse_paegan)),
        ("mean_mse_pf", evalharness::mean(&curve.mse_pf)),
        ("mean_mse_baseline", evalharness::mean(&curve.mse_baseline)),
        ("pf_divergences", divergences as f64),
    ];
    let mut f = BufWriter::new(File::create(&summary_path).map_err(|e| crate::Error::io(&summary_path, e))?);
    evalharness::write_summary(&mut f, &rows)
        .and_then(|_| f.flush())
        .map_err(|e| crate::Error::io(&summary_path, e))?;
    drop(f);
    let mut outputs = vec![csv.clone(), rec_path, summary_path];
    if a.stride > 0 {
        for r in records.iter().take(a.strips) {
            let p = out_dir.join(format!("strip_e{:03}.pgm", r.episode));
            evalharness::render_strip(r, cfg.protocol.warmup_obs, a.stride, &p)?;
            outputs.push(p);
        }
    }
    for o in &outputs {
        m.output(o)?;
    }
    m.write(&out_dir.join("evaluate.manifest.json"))?;
    for (k, v) in rows {
        println!("{k}: {v:.6}");
    }
    println!("wrote {}", csv.display());
    Ok(())
}

pub fn render(a: RenderArgs) -> CmdResult {
    let (records, warmup) = evalharness::load_records(&a.records)?;
    let out_dir = a.out_dir.unwrap_or_else(|| {
        a.records
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    create_dir(&out_dir)?;
    if a.stride == 0 {
        return Err(CliError::Usage("--stride must be positive".into()));
    }
    let n = a.max_episodes.unwrap_or(records.len());
    for r in records.iter().take(n) {
        let p = out_dir.join(format!("strip_e{:03}.pgm", r.episode));
        let (w, h) = evalharness::render_strip(r, warmup, a.stride, &p)?;
        println!("wrote {} ({w}x{h})", p.display());
    }
    Ok(())
}

pub fn pf_run(a: PfRunArgs) -> CmdResult {
    let mut cfg = base_config(&a.common)?;
    apply_protocol(&a.protocol, &mut cfg)?;
    let out_dir = a.out_dir.clone().unwrap_or_else(|| cfg.out_dir().join("pf"));
    create_dir(&out_dir)?;
    let data = load_data(&a.data)?;
    if a.episode >= data.episodes {
        return Err(CliError::Usage(format!("episode {} outside 0..{}", a.episode, data.episodes)));
    }
    let states = data
        .states(a.episode)
        .ok_or_else(|| CliError::Usage("dataset has no ground-truth states".into()))?;
    let p = &cfg.protocol;
    if states.len() < p.total_steps() {
        return Err(CliError::Usage(format!(
            "protocol needs {} steps, episodes have {}",
            p.total_steps(),
            states.len()
        )));
    }
    let pf = pf_config(&cfg, &data)?;
    let schedule = evalharness::availability_schedule(p, a.episode);
    let mut rng = seed::rng_for(p.seed, tag::PF, a.episode as u64);
    let mut meas = RngState::new(seed::derive(p.seed, tag::MEASURE, a.episode as u64), data.cfg.num_balls);
    let mut current = None;

    let csv_path = out_dir.join(format!("pf_e{:03}.csv", a.episode));
    let mut csv = String::from("t,observed,mse_pf,position_error,ess,spread\n");
    let particles_path = out_dir.join(format!("particles_e{:03}.csv", a.episode));
    let mut dump = if a.dump_particles {
        let f = File::create(&particles_path).map_err(|e| crate::Error::io(&particles_path, e))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "{}", pfilter::PARTICLES_CSV_HEADER).map_err(|e| crate::Error::io(&particles_path, e))?;
        Some(w)
    } else {
        None
    };
    let mut divergences = 0;
    for (t, s) in states[..p.total_steps()].iter().enumerate() {
        let z = schedule[t].then(|| ballworld::measure(s, &data.cfg, &mut meas));
        let (ps, out) = pfilter::pf_step(current.take(), z.as_ref(), &pf, &mut rng)?;
        divergences += usize::from(out.is_some_and(|o| o.diverged));
        let truth = ballworld::render(s, &data.cfg);
        let mse = pfilter::pf_expected_observation(&ps, &pf).sq_error(&truth);
        let err = ps
            .mean_positions()
            .iter()
            .zip(&s.positions)
            .map(|(m, q)| (m[0] - q[0]).hypot(m[1] - q[1]))
            .sum::<f64>()
            / s.positions.len() as f64;
        csv.push_str(&format!(
            "{t},{},{mse:.8e},{err:.8e},{:.8e},{:.8e}\n",
            u8::from(schedule[t]),
            ps.ess(),
            ps.position_spread()
        ));
        if let Some(w) = dump.as_mut() {
            pfilter::write_particles_csv(w, t, &ps).map_err(|e| crate::Error::io(&particles_path, e))?;
        }
        current = Some(ps);
    }
    if let Some(mut w) = dump {
        w.flush().map_err(|e| crate::Error::io(&particles_path, e))?;
    }
    std::fs::write(&csv_path, csv).map_err(|e| crate::Error::io(&csv_path, e))?;

    let mut m = Manifest::new("pf-run", &cfg);
    m.input(&a.data)?;
    m.output(&csv_path)?;
    if a.dump_particles {
        m.output(&particles_path)?;
    }
    m.write(&with_suffix(&csv_path, ".manifest.json"))?;
    println!("wrote {} ({divergences} divergences)", csv_path.display());
    Ok(())
}
