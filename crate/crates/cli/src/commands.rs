use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use embalign::alignment::{
    cluster_center_procrustes, finetune_rotation, identity_alignment, identity_correspondence,
    oracle_procrustes, wasserstein_procrustes, AlignmentResult,
};
use embalign::embedding::EmbeddingSet;
use embalign::experiment::{run_experiment, ExperimentConfig, Method};
use embalign::gmm::{default_components, fit_gmm, score_set, DEFAULT_EM_ITERS};
use embalign::io::{read_embeddings, read_pairing, write_embeddings, write_pairing, FileFormat};
use embalign::json::to_pretty;
use embalign::metrics::{evaluate_attack, render_table, EvalConfig};
use embalign::rng::RngSeed;
use embalign::synth::{generate_world, WorldConfig};

use crate::args::{
    AlignArgs, EvalArgs, ExperimentArgs, GlobalArgs, GmmFitArgs, MethodArg, SynthArgs, TuningArgs,
    WorldArgs,
};
use crate::error::{CliError, Result};

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Identity => Method::Identity,
            MethodArg::ProcrustesCluster => Method::ProcrustesCluster,
            MethodArg::ProcrustesClusterFinetune => Method::ProcrustesClusterFinetune,
            MethodArg::Wasserstein => Method::Wasserstein,
            MethodArg::Oracle => Method::Oracle,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn load(path: &Path) -> Result<EmbeddingSet> {
    Ok(read_embeddings(path)?)
}

/// Defaults, then the config file, then flags.
fn world_config(args: &WorldArgs, base: WorldConfig, seed: Option<u64>) -> Result<WorldConfig> {
    let mut c = match &args.config {
        Some(p) => read_json(p)?,
        None => base,
    };
    if let Some(s) = seed {
        c.seed = RngSeed(s);
    }
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = args.$f { c.$f = v; } )* };
    }
    set!(
        users,
        records_per_user,
        dim,
        class_scale,
        user_scale,
        record_scale,
        noise_scale,
        nonlinearity,
        spectrum_decay,
        residual_frequency
    );
    if let Some(k) = args.classes {
        c.classes = (k > 0).then_some(k);
    }
    c.validate()?;
    Ok(c)
}

fn apply_tuning(cfg: &mut ExperimentConfig, t: &TuningArgs) {
    let (f, w) = (&mut cfg.finetune, &mut cfg.wasserstein);
    if let Some(v) = t.iterations {
        f.iterations = v;
    }
    if let Some(v) = t.learning_rate {
        f.learning_rate = v;
        w.learning_rate = v;
    }
    if let Some(v) = t.gmm_components {
        f.gmm_components = v;
    }
    if let Some(v) = t.symmetric_mode {
        f.symmetric_mode = v.into();
    }
    if let Some(v) = t.initial_batch {
        w.initial_batch = v;
    }
    if let Some(v) = t.batch_growth_factor {
        w.batch_growth_factor = v;
    }
    if let Some(v) = t.epochs_per_stage {
        w.epochs_per_stage = v;
    }
    if let Some(v) = t.stages {
        w.stages = v;
    }
    if let Some(v) = t.ot_mode {
        w.ot_mode = v.into();
    }
    if let Some(v) = t.init {
        w.init = v.into();
    }
    if let Some(v) = t.landmarks {
        w.landmarks = v;
    }
    if let Some(v) = t.proper_rotation {
        cfg.proper_rotation = v;
    }
}

pub fn synth(g: &GlobalArgs, a: &SynthArgs) -> Result<()> {
    let cfg = world_config(&a.world, WorldConfig::default(), g.seed)?;
    let world = generate_world(&cfg)?;
    ensure_dir(&g.out_dir)?;
    let format: FileFormat = g.format.into();
    let ext = format.extension();
    let attack_name = format!("e_attack.{ext}");
    let target_name = format!("e_target.{ext}");
    write_embeddings(&world.e_attack, g.out_dir.join(&attack_name), format)?;
    write_embeddings(&world.e_target, g.out_dir.join(&target_name), format)?;
    let mut hidden = AlignmentResult::new("hidden-rotation", world.hidden_rotation.clone());
    hidden.config = json!({ "seed": cfg.seed, "relation": "e_target ≈ e_attack · matrix" });
    write_text(&g.out_dir.join("hidden_rotation.json"), &hidden.to_json()?)?;
    write_pairing(&world.pairing, g.out_dir.join("pairing.csv"))?;
    let manifest = json!({
        "config": cfg,
        "format": g.format_name(),
        "files": {
            "e_attack": attack_name,
            "e_target": target_name,
            "hidden_rotation": "hidden_rotation.json",
            "pairing": "pairing.csv",
        },
        "records": world.e_attack.len(),
        "users": cfg.users,
        "residual_scale": world.residual_scale,
    });
    write_text(
        &g.out_dir.join("world.json"),
        &to_pretty(&manifest).map_err(embalign::error::Error::from)?,
    )?;
    println!(
        "synth: {} records, {} users, dim {}, written to {}",
        world.e_attack.len(),
        cfg.users,
        cfg.dim,
        g.out_dir.display()
    );
    Ok(())
}

impl GlobalArgs {
    fn format_name(&self) -> &'static str {
        match self.format {
            crate::args::FormatArg::Csv => "csv",
            crate::args::FormatArg::Bin => "bin",
        }
    }

    fn output(&self, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.out_dir.join(default))
    }
}

fn base_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => read_json(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn require<'a>(
    set: &'a Option<EmbeddingSet>,
    flag: &str,
    method: MethodArg,
) -> Result<&'a EmbeddingSet> {
    set.as_ref()
        .ok_or_else(|| CliError::Usage(format!("--method {} needs --{flag}", Method::from(method))))
}

pub fn align(g: &GlobalArgs, a: &AlignArgs) -> Result<()> {
    let mut cfg = base_config(&a.config)?;
    if let Some(s) = g.seed {
        cfg.world.seed = RngSeed(s);
    }
    apply_tuning(&mut cfg, &a.tuning);
    let cfg = cfg.with_derived_seeds();
    let target = a.target.as_deref().map(load).transpose()?;
    let attack = a.attack.as_deref().map(load).transpose()?;
    if let (Some(t), Some(at)) = (&target, &attack) {
        if t.dim() != at.dim() {
            return Err(CliError::Usage(format!(
                "dimension mismatch: target has dim {}, attack has dim {}",
                t.dim(),
                at.dim()
            )));
        }
    }
    let result = match a.method {
        MethodArg::Identity => {
            let dim = target
                .as_ref()
                .or(attack.as_ref())
                .map(|s| s.dim())
                .ok_or_else(|| {
                    CliError::Usage(
                        "--method identity needs --target or --attack to know the dimension".into(),
                    )
                })?;
            identity_alignment(dim)?
        }
        MethodArg::ProcrustesCluster | MethodArg::ProcrustesClusterFinetune => {
            let t = require(&target, "target", a.method)?;
            let at = require(&attack, "attack", a.method)?;
            let start =
                cluster_center_procrustes(t, at, &identity_correspondence(t), cfg.proper_rotation)?;
            if a.method == MethodArg::ProcrustesCluster {
                start
            } else {
                let mut r = finetune_rotation(&start.rotation, t, at, &cfg.finetune)?;
                r.underdetermined = start.underdetermined;
                r.config["init"] = json!(start.method);
                r
            }
        }
        MethodArg::Wasserstein => {
            let t = require(&target, "target", a.method)?;
            let at = require(&attack, "attack", a.method)?;
            wasserstein_procrustes(t, at, &cfg.wasserstein)?
        }
        MethodArg::Oracle => {
            let t = require(&target, "target", a.method)?;
            let at = require(&attack, "attack", a.method)?;
            let path = a.pairing.as_ref().ok_or_else(|| {
                CliError::Usage("--method oracle needs the true record pairing (--pairing)".into())
            })?;
            let pairing = read_pairing(path)?;
            if pairing.len() != t.len() {
                return Err(CliError::Usage(format!(
                    "pairing covers {} target rows, target has {}",
                    pairing.len(),
                    t.len()
                )));
            }
            oracle_procrustes(t, &at.select(&pairing)?)?
        }
    };
    let out = g.output(&a.output, "alignment.json");
    write_text(&out, &result.to_json()?)?;
    let last = match result.loss_trace.last() {
        Some(v) if a.method == MethodArg::Wasserstein => format!("transport_cost={v:.6}"),
        Some(v) => format!("loss={v:.6}"),
        None => "loss=-".to_string(),
    };
    println!(
        "method={} {last} orthogonality_error={:.3e} det={:.6} -> {}",
        result.method,
        result.rotation.orthogonality_error(),
        result.rotation.det(),
        out.display()
    );
    Ok(())
}

pub fn eval(g: &GlobalArgs, a: &EvalArgs) -> Result<()> {
    let target = load(&a.target)?;
    let text = fs::read_to_string(&a.rotation).map_err(|e| CliError::io(&a.rotation, e))?;
    let alignment = AlignmentResult::from_json(&text)?;
    if alignment.rotation.dim() != target.dim() {
        return Err(CliError::Usage(format!(
            "dimension mismatch: rotation is {}×{}, target embeddings have dim {}",
            alignment.rotation.dim(),
            alignment.rotation.dim(),
            target.dim()
        )));
    }
    let reference = match &a.reference {
        Some(p) => {
            let r = load(p)?;
            if r.dim() != target.dim() {
                return Err(CliError::Usage(format!(
                    "dimension mismatch: reference has dim {}, target has dim {}",
                    r.dim(),
                    target.dim()
                )));
            }
            Some(match &a.pairing {
                Some(pp) => r.select(&read_pairing(pp)?)?,
                None => r,
            })
        }
        None if a.pairing.is_some() => {
            return Err(CliError::Usage(
                "--pairing only applies together with --reference".into(),
            ))
        }
        None => None,
    };
    let cfg = EvalConfig {
        pooling: a.pooling.into(),
    };
    let mut report = evaluate_attack(
        &target,
        &alignment.rotation,
        reference.as_ref(),
        &alignment.method,
        &cfg,
    )?;
    report.oracle = alignment.oracle;
    report.underdetermined = alignment.underdetermined;
    report.config["alignment"] = alignment.config.clone();
    let out = g.output(&a.output, "report.json");
    write_text(&out, &report.to_json()?)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if g.table {
        print!("{}", render_table(std::slice::from_ref(&report)));
    } else {
        println!(
            "method={} sFAR_EER={} eer={:.4} -> {}",
            report.method,
            report.sfar.eer.map_or("null".into(), |v| format!("{v:.4}")),
            report.eer,
            out.display()
        );
    }
    Ok(())
}

pub fn experiment(g: &GlobalArgs, a: &ExperimentArgs) -> Result<()> {
    let mut cfg = base_config(&a.spec)?;
    cfg.world = world_config(&a.world, cfg.world, g.seed)?;
    apply_tuning(&mut cfg, &a.tuning);
    if let Some(m) = &a.methods {
        cfg.methods = m.iter().map(|&m| m.into()).collect();
    }
    if let Some(f) = a.attack_fraction {
        cfg.attack_fraction = f;
    }
    if let Some(p) = a.pooling {
        cfg.eval.pooling = p.into();
    }
    let out = run_experiment(&cfg)?;
    ensure_dir(&g.out_dir)?;
    for al in &out.alignments {
        let name = al.method.replace('+', "_");
        write_text(
            &g.out_dir.join("alignments").join(format!("{name}.json")),
            &al.to_json()?,
        )?;
    }
    write_text(
        &g.out_dir.join("reports.json"),
        &to_pretty(&out.reports).map_err(embalign::error::Error::from)?,
    )?;
    write_text(
        &g.out_dir.join("experiment.json"),
        &to_pretty(&out).map_err(embalign::error::Error::from)?,
    )?;
    let table = render_table(&out.reports);
    write_text(&g.out_dir.join("table.txt"), &table)?;
    if g.table {
        print!("{table}");
    }
    if out.ordering.holds {
        eprintln!("ordering check: ok ({})", out.ordering.checked.join(", "));
    } else {
        eprintln!(
            "ordering check: FAILED ({})",
            out.ordering.violations.join("; ")
        );
    }
    if let Some(f) = out.failure {
        return Err(CliError::Usage(format!(
            "stage `{}` failed: {} (results of earlier methods were written)",
            f.stage, f.message
        )));
    }
    Ok(())
}

pub fn gmm_fit(g: &GlobalArgs, a: &GmmFitArgs) -> Result<()> {
    let set = load(&a.input)?;
    let k = a.components.unwrap_or_else(|| default_components(&set));
    let seed = RngSeed(g.seed.unwrap_or(0)).derive("gmm");
    let model = fit_gmm(&set, k, seed, a.max_iters.unwrap_or(DEFAULT_EM_ITERS))?;
    let identity = nalgebra_identity(set.dim());
    let ll = score_set(&set, &identity, &model)?;
    let out = g.output(&a.output, "gmm.json");
    write_text(
        &out,
        &to_pretty(&model).map_err(embalign::error::Error::from)?,
    )?;
    println!(
        "gmm: K={k} mean log-likelihood={ll:.6} reseeds={} -> {}",
        model.reseeds.len(),
        out.display()
    );
    Ok(())
}

fn nalgebra_identity(d: usize) -> embalign::nalgebra::DMatrix<f64> {
    embalign::nalgebra::DMatrix::identity(d, d)
}
