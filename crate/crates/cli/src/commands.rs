use std::fs::{self, File};
use std::io::BufWriter;
use std::net::TcpListener;
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use visk_core::data::{load_demo, StreamKind};
use visk_core::expert::{collect_scripted, CollectOptions, ExpertParams};
use visk_core::sim::EnvConfig;
use visk_core::{ModalityMask, View};
use visk_eval::{
    ablation_matrix, evaluate_policy, generalization_report, EvalConfig, EvalReport, ReportFormat, ReportRow, SeedResult,
    Variation,
};
use visk_policy::{Policy, PolicyConfig};
use visk_teleop::{serve, ServeOptions, Session, TeleopConfig};
use visk_train::TrainConfig;

use crate::{
    load_config, parse_combos, write_json, AblateArgs, CollectArgs, EvalArgs, FormatArg, ReplayArgs, ReportArgs, TeleopArgs,
    TrainArgs, ViewArg,
};

/// Named modality sets for `ablate --combos`.
pub fn combo_preset(name: &str) -> Option<Vec<ModalityMask>> {
    match name {
        "table1" => Some(ModalityMask::table_rows()),
        "visk-vs-vision" => Some(vec![ModalityMask::visuotactile(), ModalityMask::vision_only()]),
        "visk-proprio" => Some(vec![ModalityMask::visuotactile(), ModalityMask { proprio: true, ..ModalityMask::visuotactile() }]),
        _ => None,
    }
}

/// Writes `<stem>.json`, `<stem>.md` and `<stem>.csv` into `dir`.
pub fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    let md = report.render(ReportFormat::Markdown)?;
    let csv = report.render(ReportFormat::Csv)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join(format!("{stem}.json")), report)?;
    fs::write(dir.join(format!("{stem}.md")), md)?;
    fs::write(dir.join(format!("{stem}.csv")), csv)?;
    Ok(())
}

fn env_or_default(path: Option<&Path>) -> Result<EnvConfig> {
    let env: EnvConfig = load_config(path)?;
    env.validate()?;
    Ok(env)
}

pub fn collect(a: CollectArgs) -> Result<()> {
    let env = env_or_default(a.env.as_deref())?;
    let mut params: ExpertParams = load_config(a.expert.as_deref())?;
    if let Some(v) = a.theta_max {
        params.theta_max_deg = v;
    }
    if let Some(v) = a.estimate_err {
        params.estimate_err_cm = v;
    }
    if let Some(v) = a.seed {
        params.seed = v;
    }
    let opts = CollectOptions { eval_seed: a.eval_seed, ..CollectOptions::default() };
    let index = collect_scripted(&env, &params, a.n, &a.out, &opts)?;
    println!("collected {} demonstrations in {} attempts into {}", index.demos.len(), index.attempts, a.out.display());
    Ok(())
}

pub fn teleop(a: TeleopArgs) -> Result<()> {
    let env = env_or_default(a.env.as_deref())?;
    let cfg = TeleopConfig { env, theta_max_deg: a.theta_max, seed: a.seed, max_episode_s: a.max_episode_s, ..TeleopConfig::default() };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let session = Session::new(cfg, &a.out)?;
    let listener = TcpListener::bind(&a.bind).with_context(|| format!("binding {}", a.bind))?;
    println!("teleop server listening on {}", listener.local_addr()?);
    let session = serve(listener, session, ServeOptions::default(), Arc::new(AtomicBool::new(false)))?;
    println!("recorded {} demonstrations", session.index().demos.len());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut pcfg: PolicyConfig = load_config(a.policy.as_deref())?;
    let mut tcfg: TrainConfig = load_config(a.train.as_deref())?;
    if let Some(s) = a.seed {
        pcfg.init_seed = s;
        tcfg.seed = s;
    }
    if let Some(v) = a.steps {
        tcfg.steps = v;
    }
    if let Some(v) = a.lr {
        tcfg.lr = v;
    }
    if let Some(v) = a.batch {
        tcfg.batch = v;
    }
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let out = visk_train::train(&a.data, &pcfg, &tcfg, &a.out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn eval_config(path: Option<&Path>, env: Option<&Path>, jobs: Option<usize>) -> Result<EvalConfig> {
    let mut cfg: EvalConfig = load_config(path)?;
    if let Some(p) = env {
        cfg.env = env_or_default(Some(p))?;
    }
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = eval_config(a.eval.as_deref(), a.env.as_deref(), a.jobs)?;
    if a.record {
        cfg.record_dir = Some(a.out.join("rollouts"));
    }
    let policy = Policy::load(&a.ckpt)?;
    let mask = policy.config().modalities.clone();
    let seed = policy.config().init_seed;
    let mut variations = vec![Variation::in_domain()];
    if a.variations {
        variations.extend(Variation::standard());
    }
    let mut report = EvalReport::new("Peg insertion", cfg.n_trials_per_seed, variations.iter().map(|v| v.name.clone()).collect());
    let mut cells = Vec::with_capacity(variations.len());
    for v in &variations {
        let result = evaluate_policy(&policy, &cfg, v, &format!("{}_{}", mask.label(), v.name))?;
        println!("{}: {}/{}", v.name, result.successes, result.n_trials);
        cells.push(vec![SeedResult { seed, result }]);
    }
    report.rows.push(ReportRow { label: mask.label(), modalities: mask, cells });
    report.notes.push(format!("Checkpoint: {}", a.ckpt.display()));
    write_report(&a.out, "report", &report)
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let combos = parse_combos(&a.combos)?;
    let pcfg: PolicyConfig = load_config(a.policy.as_deref())?;
    let mut tcfg: TrainConfig = load_config(a.train.as_deref())?;
    if let Some(v) = a.steps {
        tcfg.steps = v;
    }
    let mut cfg = eval_config(a.eval.as_deref(), a.env.as_deref(), a.jobs)?;
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    let report = ablation_matrix(&a.data, &combos, &pcfg, &tcfg, &cfg, &a.out)?;
    write_report(&a.out, "report", &report)?;
    print!("{}", report.render(ReportFormat::Markdown)?);
    if a.generalize {
        let gen = generalization_report(&report, &a.out, &Variation::standard(), &cfg)?;
        write_report(&a.out, "generalization", &gen)?;
        print!("\n{}", gen.render(ReportFormat::Markdown)?);
    }
    Ok(())
}

fn write_png(path: &Path, rgb: &[u8], h: usize, w: usize) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(rgb)?;
    writer.finish()?;
    Ok(())
}

pub fn replay(a: ReplayArgs) -> Result<()> {
    let demo = load_demo(&a.demo)?;
    let view = match a.view {
        ViewArg::Top => View::Top,
        ViewArg::Side => View::Side,
        ViewArg::Wrist => View::Wrist,
    };
    let cam = demo.stream(&view.stream_name())?;
    let Some((h, w)) = cam.frame_hw().filter(|_| cam.kind() == StreamKind::Camera) else {
        bail!("stream {} is not a camera", cam.name());
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut index = csv::Writer::from_path(a.out.join("frames.csv"))?;
    index.write_record(["file", "t"])?;
    for i in 0..cam.len() {
        let name = format!("frame_{i:04}.png");
        write_png(&a.out.join(&name), cam.frame(i), h, w)?;
        index.write_record([name, cam.timestamps()[i].to_string()])?;
    }
    index.flush()?;
    let actions = demo.action_stream()?;
    let mut out = csv::Writer::from_path(a.out.join("actions.csv"))?;
    out.write_record(["t", "dx", "dy", "dz", "dgrip"])?;
    for i in 0..actions.len() {
        let mut rec = vec![actions.timestamps()[i].to_string()];
        rec.extend(actions.values(i).iter().map(|v| v.to_string()));
        out.write_record(rec)?;
    }
    out.flush()?;
    println!("wrote {} frames and {} actions to {}", cam.len(), actions.len(), a.out.display());
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let path = a.input.join(format!("{}.json", a.name));
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let fmt = match a.fmt {
        FormatArg::Md => ReportFormat::Markdown,
        FormatArg::Csv => ReportFormat::Csv,
    };
    print!("{}", report.render(fmt)?);
    Ok(())
}
