use std::io::BufRead;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use a2t::decoder::PromptSpec;
use a2t::metrics::{evaluate as score, read_records, EvalMode, EvalRecord, MetricTable};
use a2t::prompt::{builtin, parse_templates, InContextExample, NShotStyle};
use a2t::toy::{ToyScene, ToyWorld};
use a2t::wire::server::serve_tcp;
use a2t::wire::Dispatcher;
use a2t::{
    apply_mask, pnm, rollout as roll, saliency, threshold_mask, AttentionDump, GuidingConfig,
    Image, WireError,
};
use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use crate::backends::Backends;
use crate::io::{bad_input, load_image, load_scene, read_text, BadInput, OutDir};
use crate::transcript;
use crate::{
    EvaluateArgs, GuidingArgs, InferArgs, InputArgs, PromptArgs, RolloutArgs, ServeArgs, SweepArgs,
    SweepParam, TranslateArgs,
};

/// 1 for usage and other failures, 2 when the backend cannot be reached,
/// 3 for malformed input or mismatched shapes.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<BadInput>() {
            return 3;
        }
        if let Some(err) = cause.downcast_ref::<a2t::Error>() {
            if let Some(w) = err.as_wire() {
                return if w.is_unreachable() { 2 } else { 1 };
            }
            if matches!(err.root(), a2t::Error::InvalidInput(_)) {
                return 3;
            }
        }
        if let Some(w) = cause.downcast_ref::<WireError>() {
            return if w.is_unreachable() { 2 } else { 1 };
        }
    }
    1
}

/// The error chain on one line, skipping causes already quoted by their parent.
pub fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

pub fn guiding_config(g: &GuidingArgs) -> Result<GuidingConfig> {
    let d = GuidingConfig::default();
    let cfg = GuidingConfig {
        k: g.k.unwrap_or(d.k),
        top_p: g.p.unwrap_or(d.top_p),
        kappa: g.kappa.unwrap_or(d.kappa),
        beta: g.beta.unwrap_or(d.beta),
        tau: g.tau.unwrap_or(d.tau),
        max_tokens: g.max_tokens.unwrap_or(d.max_tokens),
        max_continuation_tokens: g
            .max_continuation_tokens
            .unwrap_or(d.max_continuation_tokens),
        seed: g.seed.unwrap_or(d.seed),
        renormalize_lm_probs: g.renormalize,
    };
    cfg.validate().map_err(|e| anyhow!("{e}"))?;
    Ok(cfg)
}

pub fn prompt_spec(p: &PromptArgs) -> Result<PromptSpec> {
    if p.n_shot > 0 {
        let path = p
            .examples
            .as_ref()
            .ok_or_else(|| anyhow!("--n-shot needs --examples"))?;
        let mut examples = Vec::new();
        for (i, line) in read_text(path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ex: InContextExample = serde_json::from_str(line)
                .map_err(|e| bad_input(format!("{} line {}: {e}", path.display(), i + 1)))?;
            examples.push(ex);
        }
        if examples.len() < p.n_shot {
            bail!(
                "--n-shot {} but {} has only {} examples",
                p.n_shot,
                path.display(),
                examples.len()
            );
        }
        examples.truncate(p.n_shot);
        let style = if p.newline_shots {
            NShotStyle::newline()
        } else {
            NShotStyle::default()
        };
        return Ok(PromptSpec::NShot { examples, style });
    }
    if let Some(path) = &p.templates {
        let file = parse_templates(&read_text(path)?)
            .map_err(|e| bad_input(format!("{}: {e}", path.display())))?;
        if let Some(t) = file.into_iter().find(|t| t.id() == p.template) {
            return Ok(PromptSpec::Template(t));
        }
    }
    builtin(&p.template)
        .map(PromptSpec::Template)
        .ok_or_else(|| anyhow!("unknown template id {:?}", p.template))
}

/// Loads the input image; a scene also fixes the patch grid.
fn load_input(
    input: &InputArgs,
    grid: Option<(usize, usize)>,
) -> Result<(Image, Option<(usize, usize)>)> {
    if let Some(path) = &input.scene {
        let scene = load_scene(path)?;
        let img = render_scene(&scene)?;
        return Ok((img, grid.or(Some((scene.rows(), scene.cols())))));
    }
    let path = input.image.as_ref().expect("clap enforces one input");
    Ok((load_image(path)?, grid))
}

fn render_scene(scene: &ToyScene) -> Result<Image> {
    scene
        .render(ToyWorld::standard().palette())
        .map_err(|e| bad_input(format!("scene: {e}")))
}

pub fn translate(a: TranslateArgs) -> Result<()> {
    let cfg = guiding_config(&a.guiding)?;
    let prompt = prompt_spec(&a.prompt)?;
    let (image, grid) = load_input(&a.input, a.grid)?;
    let backends = Backends::open(
        a.backend.backend,
        a.backend.addr.as_deref(),
        a.backend.timeout,
    )?;
    let r = backends.translate(
        &image,
        grid,
        &a.question,
        a.answer.as_deref(),
        &cfg,
        &prompt,
    )?;
    let out = OutDir::new(&a.out_dir)?;
    out.write_json("result.json", &r)?;
    out.write("transcript.txt", transcript::render(&r).as_bytes())?;
    println!("{}", r.text);
    Ok(())
}

pub fn infer(a: InferArgs) -> Result<()> {
    let (image, grid) = load_input(&a.input, a.grid)?;
    let backends = Backends::open(
        a.backend.backend,
        a.backend.addr.as_deref(),
        a.backend.timeout,
    )?;
    let out_v = backends.infer(&image, grid, &a.question)?;
    let out = OutDir::new(&a.out_dir)?;
    let mut dump = AttentionDump::from_stack(&out_v.stack).to_json();
    dump.push('\n');
    out.write("attention.json", dump.as_bytes())?;
    out.write("answer.txt", format!("{}\n", out_v.answer).as_bytes())?;
    println!("{}", out_v.answer);
    Ok(())
}

pub fn rollout(a: RolloutArgs) -> Result<()> {
    let tau = a.tau.unwrap_or(GuidingConfig::default().tau);
    if !(0.0..=1.0).contains(&tau) {
        bail!("--tau must be in [0, 1], got {tau}");
    }
    let dump = AttentionDump::from_json(&read_text(&a.dump)?)
        .map_err(|e| bad_input(format!("{}: {e}", a.dump.display())))?;
    let stack = dump
        .to_stack::<f64>()
        .map_err(|e| bad_input(format!("{}: {e}", a.dump.display())))?;
    let (image, grid) = load_input(&a.input, None)?;
    if let Some(g) = grid.filter(|&g| g != stack.patch_grid) {
        return Err(bad_input(format!(
            "attention grid {}x{} does not match the {}x{} scene",
            stack.patch_grid.0, stack.patch_grid.1, g.0, g.1
        )));
    }
    let state = roll(&stack)?;
    let sal = saliency(&state, &stack)?;
    let mask = threshold_mask(&sal, tau, image.width(), image.height()).map_err(|e| {
        bad_input(format!(
            "attention grid {}x{} does not fit a {}x{} image: {e}",
            stack.patch_grid.0,
            stack.patch_grid.1,
            image.width(),
            image.height()
        ))
    })?;
    let masked = apply_mask(&image, &mask)?;
    let out = OutDir::new(&a.out_dir)?;
    out.write("saliency.pgm", &pnm::saliency_pgm(&sal))?;
    out.write("mask.pgm", &pnm::mask_pgm(&mask))?;
    out.write("masked.ppm", &pnm::image_ppm(masked.image()))?;
    let kept = a2t::patch_mask(&sal, tau)?.iter().filter(|&&b| b).count();
    println!(
        "{kept} of {} patches kept, {} of {} pixels zeroed",
        sal.rows() * sal.cols(),
        mask.bits().len() - mask.count_ones(),
        mask.bits().len()
    );
    Ok(())
}

fn write_table(out: &OutDir, stem: &str, table: &MetricTable) -> Result<()> {
    out.write(&format!("{stem}.tsv"), table.to_tsv().as_bytes())?;
    let pretty = table.to_pretty();
    out.write(&format!("{stem}.txt"), pretty.as_bytes())?;
    print!("{pretty}");
    Ok(())
}

fn load_records(path: &Path) -> Result<Vec<EvalRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| bad_input(format!("cannot read {}: {e}", path.display())))?;
    read_records(std::io::BufReader::new(file))
        .map_err(|e| bad_input(format!("{}: {e}", path.display())))
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let records = load_records(&a.dataset)?;
    let table = score(&records, a.mode.into())?;
    write_table(&OutDir::new(&a.out_dir)?, "metrics", &table)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SceneRef {
    Path(PathBuf),
    Inline(ToyScene),
}

#[derive(Debug, Deserialize)]
struct SweepItem {
    scene: SceneRef,
    question: String,
    ground_truth_answer: String,
    references: Vec<String>,
}

fn load_sweep_items(path: &Path) -> Result<Vec<(ToyScene, SweepItem)>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let file = std::fs::File::open(path)
        .map_err(|e| bad_input(format!("cannot read {}: {e}", path.display())))?;
    let mut items = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("{} line {}", path.display(), i + 1);
        let item: SweepItem =
            serde_json::from_str(&line).map_err(|e| bad_input(format!("{}: {e}", at())))?;
        if item.references.is_empty() {
            return Err(bad_input(format!("{}: no references", at())));
        }
        let scene = match &item.scene {
            SceneRef::Path(p) => load_scene(&base.join(p))?,
            SceneRef::Inline(s) => s.clone(),
        };
        items.push((scene, item));
    }
    if items.is_empty() {
        return Err(bad_input(format!("{} has no items", path.display())));
    }
    Ok(items)
}

fn set_param(cfg: &mut GuidingConfig, param: SweepParam, v: f64) -> Result<()> {
    match param {
        SweepParam::Tau => cfg.tau = v,
        SweepParam::Kappa => cfg.kappa = v,
        SweepParam::Beta => cfg.beta = v,
        SweepParam::P => cfg.top_p = v,
        SweepParam::K => {
            if v.fract() != 0.0 || v < 1.0 {
                bail!("k must be a positive integer, got {v}");
            }
            cfg.k = v as usize;
        }
    }
    cfg.validate().map_err(|e| anyhow!("{e}"))
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let base = guiding_config(&a.guiding)?;
    let prompt = prompt_spec(&a.prompt)?;
    let items = load_sweep_items(&a.dataset)?;
    let images: Vec<Image> = items
        .iter()
        .map(|(s, _)| render_scene(s))
        .collect::<Result<_>>()?;
    let backends = Backends::open(
        a.backend.backend,
        a.backend.addr.as_deref(),
        a.backend.timeout,
    )?;
    let mode: EvalMode = a.mode.into();
    let name = format!("{:?}", a.param).to_lowercase();

    let mut table = MetricTable::new(name.clone());
    for &v in &a.grid {
        let mut cfg = base.clone();
        set_param(&mut cfg, a.param, v)?;
        let mut records = Vec::with_capacity(items.len());
        let mut coverage = 0.0;
        for ((scene, item), img) in items.iter().zip(&images) {
            let gt = a
                .gt_conditioned
                .then_some(item.ground_truth_answer.as_str());
            let r = backends
                .translate(
                    img,
                    Some((scene.rows(), scene.cols())),
                    &item.question,
                    gt,
                    &cfg,
                    &prompt,
                )
                .with_context(|| format!("{name}={v}, question {:?}", item.question))?;
            coverage +=
                r.patch_mask.iter().filter(|&&b| b).count() as f64 / r.patch_mask.len() as f64;
            records.push(EvalRecord {
                question: item.question.clone(),
                ground_truth_answer: item.ground_truth_answer.clone(),
                predicted_answer: r.predicted_answer,
                references: item.references.clone(),
                hypothesis: r.text,
                gt_conditioned: a.gt_conditioned,
            });
        }
        let mut row = score(&records, mode)?.rows.remove(0);
        row.label = v.to_string();
        row.extra.push((
            "mask_coverage".into(),
            format!("{:.4}", coverage / items.len() as f64),
        ));
        table.rows.push(row);
    }
    write_table(&OutDir::new(&a.out_dir)?, "sweep", &table)
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let (rows, cols) = a.grid;
    let d = Arc::new(Dispatcher::toy(&ToyWorld::standard(), rows, cols));
    let listener = TcpListener::bind(&a.addr).with_context(|| format!("binding {}", a.addr))?;
    println!("listening on {}", listener.local_addr()?);
    serve_tcp(d, listener, a.concurrent)?;
    Ok(())
}
