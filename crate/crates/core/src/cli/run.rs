use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use toml::{Table, Value};

use super::config::{self, from_table, read_table, set, MineSettings};
use super::manifest::*;
use super::{Cli, CliError, Command, Layering};
use crate::baselines::{kmeans_assign, kmeans_mine, knn_mine, KmeansConfig};
use crate::eval::{self, hungarian_match, ClusterReport, TrustReport};
use crate::feature_store::{load_batch, load_csv, normalize, save_batch, subsample, FeatureBatch, Precision};
use crate::mining::mine;
use crate::objective::{train_projection, LossConfig, ProjectionState};
use crate::parallel::{resolve_threads, with_threads};
use crate::result::{MiningResult, StrategyConfig};
use crate::synthgen::{sample_mixture, MixtureSpec, Preset};

pub(super) fn execute(cli: Cli) -> Result<(), CliError> {
    let threads = resolve_threads(cli.threads)?;
    let invocation = resolve(cli.command)?;
    let start = Instant::now();
    with_threads(threads, || perform(&invocation))??;
    RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: invocation.seed(),
        threads,
        duration_secs: start.elapsed().as_secs_f64(),
        invocation,
    }
    .write()
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(path).map_err(|e| CliError::io(path, e))
}

fn absolute_opt(path: Option<&Path>) -> Result<Option<PathBuf>, CliError> {
    path.map(absolute).transpose()
}

fn layered(layering: &Layering, flags: impl FnOnce(&mut Table)) -> Result<Table, CliError> {
    let mut table = read_table(layering.config.as_deref())?;
    flags(&mut table);
    config::apply_overrides(&mut table, &layering.sets)?;
    Ok(table)
}

fn resolve(command: Command) -> Result<Invocation, CliError> {
    Ok(match command {
        Command::Generate {
            spec,
            preset,
            seed,
            precision,
            sets,
            out,
        } => {
            let mut table = read_table(spec.as_deref())?;
            set(&mut table, "preset", preset);
            set(&mut table, "seed", seed.map(|s| s as i64));
            set(&mut table, "precision", precision);
            config::apply_overrides(&mut table, &sets)?;
            let (spec_resolved, precision) = resolve_generate(table)?;
            Invocation::Generate(GenerateRun {
                spec_path: absolute_opt(spec.as_deref())?,
                spec: spec_resolved,
                precision,
                output: absolute(&out)?,
            })
        }
        Command::Mine {
            features,
            strategy,
            layering,
            out,
        } => {
            let table = layered(&layering, |t| set(t, "strategy", strategy))?;
            Invocation::Mine(MineRun {
                features: absolute(&features)?,
                config_path: absolute_opt(layering.config.as_deref())?,
                settings: config::resolve_mine(table)?,
                output: absolute(&out)?,
            })
        }
        Command::Train {
            features,
            mining,
            epochs,
            layering,
            out,
        } => {
            let table = layered(&layering, |t| set(t, "epochs", epochs.map(|e| e as i64)))?;
            let settings: LossConfig = from_table(table, "loss config")?;
            settings.validate()?;
            Invocation::Train(TrainRun {
                features: absolute(&features)?,
                mining: absolute(&mining)?,
                config_path: absolute_opt(layering.config.as_deref())?,
                settings,
                output: absolute(&out)?,
            })
        }
        Command::Eval {
            features,
            mining,
            trust,
            curve,
            cluster,
            bands,
            projection,
            layering,
            out,
        } => {
            let table = layered(&layering, |t| {
                for (key, on) in [("trust", trust), ("curve", curve), ("cluster", cluster), ("bands", bands)] {
                    if on {
                        t.insert(key.into(), Value::Boolean(true));
                    }
                }
            })?;
            let mut settings: EvalSettings = from_table(table, "eval config")?;
            if !(settings.trust || settings.curve || settings.cluster || settings.bands) {
                settings.trust = true;
            }
            if (settings.trust || settings.curve || settings.bands) && mining.is_none() {
                return Err(CliError::usage("trust, curve and bands reports need --mining"));
            }
            Invocation::Eval(EvalRun {
                features: absolute(&features)?,
                mining: absolute_opt(mining.as_deref())?,
                projection: absolute_opt(projection.as_deref())?,
                config_path: absolute_opt(layering.config.as_deref())?,
                settings,
                output: absolute(&out)?,
            })
        }
        Command::Sweep {
            features,
            base,
            sweep,
            out,
        } => {
            let base_table = read_table(base.as_deref())?;
            let sweep_table = read_table(Some(&sweep))?;
            let (points, train, eval) = resolve_sweep(&base_table, sweep_table)?;
            Invocation::Sweep(SweepRun {
                features: absolute(&features)?,
                base_path: absolute_opt(base.as_deref())?,
                sweep_path: absolute(&sweep)?,
                points,
                train,
                eval,
                output: absolute(&out)?,
            })
        }
        Command::Replay { manifest, out } => {
            let mut invocation = RunManifest::load(&manifest)?.invocation;
            if let Some(out) = out {
                invocation.set_output(absolute(&out)?);
            }
            invocation
        }
    })
}

fn resolve_generate(mut table: Table) -> Result<(MixtureSpec, Precision), CliError> {
    let precision = match table.remove("precision") {
        None => Precision::F64,
        Some(Value::String(s)) if s == "f64" => Precision::F64,
        Some(Value::String(s)) if s == "f32" => Precision::F32,
        Some(other) => return Err(CliError::usage(format!("precision must be \"f32\" or \"f64\", got {other}"))),
    };
    let spec: MixtureSpec = match table.remove("preset") {
        Some(Value::String(name)) => {
            let preset = Preset::parse(&name).ok_or_else(|| {
                CliError::usage(format!("unknown preset {name:?} (two-clusters, overlap8, long-tail)"))
            })?;
            let seed = match table.get("seed") {
                None => 0,
                Some(Value::Integer(s)) if *s >= 0 => *s as u64,
                Some(other) => return Err(CliError::usage(format!("seed must be a non-negative integer, got {other}"))),
            };
            let mut merged = config::to_table(&preset.spec(seed));
            merged.extend(table);
            from_table(merged, "mixture spec")?
        }
        Some(other) => return Err(CliError::usage(format!("preset must be a string, got {other}"))),
        None => from_table(table, "mixture spec")?,
    };
    spec.validate()?;
    Ok((spec, precision))
}

type SweepParts = (Vec<SweepPoint>, Option<LossConfig>, EvalSettings);

fn value_repr(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn resolve_sweep(base: &Table, mut spec: Table) -> Result<SweepParts, CliError> {
    let grid = spec.remove("grid");
    let listed = spec.remove("points");
    let train = match spec.remove("train") {
        Some(Value::Table(t)) => {
            let c: LossConfig = from_table(t, "sweep train config")?;
            c.validate()?;
            Some(c)
        }
        Some(other) => return Err(CliError::usage(format!("train must be a table, got {other}"))),
        None => None,
    };
    let eval: EvalSettings = match spec.remove("eval") {
        Some(Value::Table(t)) => from_table(t, "sweep eval config")?,
        Some(other) => return Err(CliError::usage(format!("eval must be a table, got {other}"))),
        None => EvalSettings::default(),
    };
    if let Some(key) = spec.keys().next() {
        return Err(CliError::usage(format!("unknown sweep key {key:?} (grid, points, train, eval)")));
    }

    let assignments: Vec<Vec<(String, Value)>> = match (grid, listed) {
        (Some(Value::Table(grid)), None) => {
            let mut axes = Vec::new();
            for (name, values) in grid {
                match values {
                    Value::Array(vs) if !vs.is_empty() => axes.push((name, vs)),
                    Value::Array(_) => return Err(CliError::usage(format!("grid field {name:?} has no values"))),
                    other => return Err(CliError::usage(format!("grid field {name:?} must be an array, got {other}"))),
                }
            }
            if axes.is_empty() {
                return Err(CliError::usage("empty grid"));
            }
            // Odometer order: the last field varies fastest.
            let total: usize = axes.iter().map(|(_, vs)| vs.len()).product();
            (0..total)
                .map(|mut k| {
                    let mut point = vec![(String::new(), Value::Boolean(false)); axes.len()];
                    for (slot, (name, vs)) in point.iter_mut().zip(&axes).rev() {
                        *slot = (name.clone(), vs[k % vs.len()].clone());
                        k /= vs.len();
                    }
                    point
                })
                .collect()
        }
        (None, Some(Value::Array(points))) => {
            if points.is_empty() {
                return Err(CliError::usage("empty point list"));
            }
            points
                .into_iter()
                .map(|p| match p {
                    Value::Table(t) => Ok(t.into_iter().collect()),
                    other => Err(CliError::usage(format!("sweep point must be a table, got {other}"))),
                })
                .collect::<Result<_, _>>()?
        }
        (None, None) => return Err(CliError::usage("sweep spec needs a [grid] table or a points list")),
        _ => return Err(CliError::usage("sweep spec needs exactly one of a [grid] table and a points array")),
    };

    let points = assignments
        .into_iter()
        .map(|assignment| {
            let mut table = base.clone();
            let mut params = Vec::with_capacity(assignment.len());
            for (name, value) in assignment {
                params.push(SweepParam {
                    name: name.clone(),
                    value: value_repr(&value),
                });
                table.insert(name, value);
            }
            Ok(SweepPoint {
                params,
                settings: config::resolve_mine(table)?,
            })
        })
        .collect::<Result<_, CliError>>()?;
    Ok((points, train, eval))
}

fn perform(invocation: &Invocation) -> Result<(), CliError> {
    match invocation {
        Invocation::Generate(r) => perform_generate(r),
        Invocation::Mine(r) => perform_mine(r),
        Invocation::Train(r) => perform_train(r),
        Invocation::Eval(r) => perform_eval(r),
        Invocation::Sweep(r) => perform_sweep(r),
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        _ => Ok(()),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let to_err = |e: csv::Error| CliError {
        code: super::EXIT_IO,
        message: format!("{}: {e}", path.display()),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Loads a container or CSV file and scales rows to unit length if needed.
pub(crate) fn load_features(path: &Path) -> Result<FeatureBatch, CliError> {
    let batch = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        load_csv(path)
    } else {
        load_batch(path)
    }
    .map_err(|e| with_path(e, path))?;
    if batch.is_normalized() {
        Ok(batch)
    } else {
        Ok(normalize(&batch)?)
    }
}

fn with_path(e: crate::Error, path: &Path) -> CliError {
    let mut c = CliError::from(e);
    c.message = format!("{}: {}", path.display(), c.message);
    c
}

fn load_mining(path: &Path) -> Result<MiningResult, CliError> {
    MiningResult::load(path).map_err(|e| with_path(e, path))
}

fn mine_batch(batch: &FeatureBatch, settings: &MineSettings) -> Result<MiningResult, CliError> {
    let (work, row_map) = match &settings.subsample {
        Some(spec) => {
            let (b, idx) = subsample(batch, spec)?;
            (Cow::Owned(b), Some(idx))
        }
        None => (Cow::Borrowed(batch), None),
    };
    let mut result = match &settings.strategy {
        StrategyConfig::Ppap(c) => mine(&work, c, None)?,
        StrategyConfig::Knn(c) => knn_mine(&work, c, None)?,
        StrategyConfig::Kmeans(c) => kmeans_mine(&work, c, None)?,
    };
    if !settings.diagnostics {
        for a in &mut result.anchors {
            a.diagnostics = None;
        }
    }
    result.row_map = row_map.map(|idx| idx.into_iter().map(|i| i as u32).collect());
    Ok(result)
}

/// Rows of `batch` that were mining candidates.
fn candidate_rows<'a>(batch: &'a FeatureBatch, result: &MiningResult) -> Result<Cow<'a, FeatureBatch>, CliError> {
    match &result.row_map {
        Some(map) => {
            let idx: Vec<usize> = map.iter().map(|&i| i as usize).collect();
            Ok(Cow::Owned(batch.select_rows(&idx)?))
        }
        None => Ok(Cow::Borrowed(batch)),
    }
}

fn perform_generate(r: &GenerateRun) -> Result<(), CliError> {
    let batch = sample_mixture(&r.spec)?.with_precision(r.precision);
    ensure_parent(&r.output)?;
    save_batch(&batch, &r.output).map_err(|e| with_path(e, &r.output))
}

fn perform_mine(r: &MineRun) -> Result<(), CliError> {
    let batch = load_features(&r.features)?;
    let result = mine_batch(&batch, &r.settings)?;
    ensure_parent(&r.output)?;
    result.save(&r.output).map_err(|e| with_path(e, &r.output))
}

fn write_loss_csv(path: &Path, history: &[f64]) -> Result<(), CliError> {
    write_csv(
        path,
        &["epoch", "loss"],
        history.iter().enumerate().map(|(e, l)| vec![e.to_string(), l.to_string()]),
    )
}

fn perform_train(r: &TrainRun) -> Result<(), CliError> {
    let batch = load_features(&r.features)?;
    let result = load_mining(&r.mining)?;
    let rows = candidate_rows(&batch, &result)?;
    let state = train_projection(&rows, &result, &r.settings)?;
    ensure_dir(&r.output)?;
    save_batch(&state.weights_batch()?, r.output.join("projection.bin"))?;
    save_batch(&state.project(&batch)?, r.output.join("projected.bin"))?;
    write_loss_csv(&r.output.join("loss.csv"), &state.loss_history)
}

fn trust_summary(report: &TrustReport) -> serde_json::Value {
    let mut v = serde_json::to_value(report).expect("report serializes");
    if let Some(map) = v.as_object_mut() {
        map.remove("per_anchor_rows");
    }
    v
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn cluster_report(batch: &FeatureBatch, settings: &EvalSettings) -> Result<ClusterReport, CliError> {
    let labels = batch.labels().ok_or(crate::Error::MissingLabels)?;
    let classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let k = settings.clusters.unwrap_or(classes);
    let config = KmeansConfig {
        clusters: k,
        max_iters: settings.cluster_max_iters,
        seed: settings.cluster_seed,
        ..KmeansConfig::default()
    };
    let pred = kmeans_assign(batch, &config)?;
    Ok(hungarian_match(&pred, labels, k.max(classes))?)
}

fn perform_eval(r: &EvalRun) -> Result<(), CliError> {
    let s = &r.settings;
    let batch = load_features(&r.features)?;
    let raw_labels = batch.labels().ok_or(crate::Error::MissingLabels)?;
    ensure_dir(&r.output)?;

    if s.trust || s.curve || s.bands {
        let path = r
            .mining
            .as_deref()
            .ok_or_else(|| CliError::usage("trust, curve and bands reports need a mining result"))?;
        let result = load_mining(path)?;
        let labels = eval::candidate_labels(&result, raw_labels)?;
        if s.trust {
            let t = eval::trust_report(&result, Some(&labels))?;
            write_json(&r.output.join("trust.json"), &trust_summary(&t))?;
            write_csv(
                &r.output.join("trust_anchors.csv"),
                &[
                    "anchor",
                    "label",
                    "positives",
                    "true_positives",
                    "ambiguous",
                    "negatives",
                    "false_negatives",
                    "precision",
                ],
                t.per_anchor_rows.iter().map(|a| {
                    vec![
                        a.anchor.to_string(),
                        a.label.to_string(),
                        a.positives.to_string(),
                        a.true_positives.to_string(),
                        a.ambiguous.to_string(),
                        a.negatives.to_string(),
                        a.false_negatives.to_string(),
                        opt(a.precision),
                    ]
                }),
            )?;
        }
        if s.curve {
            let c = eval::curve_report(&result, Some(&labels), &s.quantiles)?;
            write_json(&r.output.join("curve.json"), &c)?;
            write_csv(
                &r.output.join("curve.csv"),
                &["q", "anchors", "mean_count", "precision"],
                (0..c.quantile_grid.len()).map(|i| {
                    vec![
                        c.quantile_grid[i].to_string(),
                        c.anchors_in_range[i].to_string(),
                        c.cumulative_mean_count[i].to_string(),
                        c.cumulative_precision[i].to_string(),
                    ]
                }),
            )?;
        }
        if s.bands {
            let b = eval::frequency_breakdown(&result, Some(&labels), s.band_cuts)?;
            let summary: Vec<serde_json::Value> = b
                .iter()
                .map(|band| {
                    serde_json::json!({
                        "band": band.band,
                        "classes": band.classes,
                        "report": trust_summary(&band.report),
                    })
                })
                .collect();
            write_json(&r.output.join("bands.json"), &summary)?;
            write_csv(
                &r.output.join("bands.csv"),
                &["band", "classes", "anchors", "mean_positive_count", "tp_in_p_ratio", "fp_in_n_ratio"],
                b.iter().map(|band| {
                    let name = serde_json::to_value(band.band).expect("band serializes");
                    vec![
                        name.as_str().unwrap_or_default().to_string(),
                        band.classes.iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
                        band.report.anchors.to_string(),
                        band.report.mean_positive_count.to_string(),
                        band.report.tp_in_p_ratio.to_string(),
                        band.report.fp_in_n_ratio.to_string(),
                    ]
                }),
            )?;
        }
    }
    if s.cluster {
        let feats = match &r.projection {
            Some(p) => {
                let weights = load_batch(p).map_err(|e| with_path(e, p))?;
                Cow::Owned(ProjectionState::from_weights_batch(&weights).project(&batch)?)
            }
            None => Cow::Borrowed(&batch),
        };
        write_json(&r.output.join("cluster.json"), &cluster_report(&feats, s)?)?;
    }
    Ok(())
}

fn perform_sweep(r: &SweepRun) -> Result<(), CliError> {
    let batch = load_features(&r.features)?;
    let raw_labels = batch.labels().ok_or(crate::Error::MissingLabels)?;
    ensure_dir(&r.output)?;

    let mut names: Vec<String> = Vec::new();
    for p in &r.points {
        for param in &p.params {
            if !names.contains(&param.name) {
                names.push(param.name.clone());
            }
        }
    }
    let mut header: Vec<String> = vec!["run".into()];
    header.extend(names.iter().cloned());
    header.extend(
        [
            "mean_positive_count",
            "tp_in_p_ratio",
            "anchor_mean_precision",
            "mean_ambiguous_count",
            "mean_negative_count",
            "fp_in_n_ratio",
        ]
        .map(String::from),
    );
    if r.train.is_some() {
        header.extend(["initial_loss", "final_loss", "accuracy", "miou"].map(String::from));
    }

    let mut rows = Vec::with_capacity(r.points.len());
    for (i, point) in r.points.iter().enumerate() {
        let start = Instant::now();
        let name = format!("run-{i:03}");
        let dir = r.output.join(&name);
        ensure_dir(&dir)?;
        let result = mine_batch(&batch, &point.settings)?;
        let result_path = dir.join("result.bin");
        result.save(&result_path)?;
        let labels = eval::candidate_labels(&result, raw_labels)?;
        let trust = eval::trust_report(&result, Some(&labels))?;
        write_json(&dir.join("trust.json"), &trust_summary(&trust))?;

        let mut row = vec![name];
        for n in &names {
            row.push(
                point
                    .params
                    .iter()
                    .find(|p| &p.name == n)
                    .map(|p| p.value.clone())
                    .unwrap_or_default(),
            );
        }
        row.extend(
            [
                trust.mean_positive_count,
                trust.tp_in_p_ratio,
                trust.anchor_mean_precision,
                trust.mean_ambiguous_count,
                trust.mean_negative_count,
                trust.fp_in_n_ratio,
            ]
            .map(|x| x.to_string()),
        );
        if let Some(loss) = &r.train {
            let candidates = candidate_rows(&batch, &result)?;
            let state = train_projection(&candidates, &result, loss)?;
            write_loss_csv(&dir.join("loss.csv"), &state.loss_history)?;
            let cluster = cluster_report(&state.project(&batch)?, &r.eval)?;
            write_json(&dir.join("cluster.json"), &cluster)?;
            row.extend(
                [
                    state.loss_history[0],
                    *state.loss_history.last().expect("history has the initial loss"),
                    cluster.accuracy,
                    cluster.miou,
                ]
                .map(|x| x.to_string()),
            );
        }
        rows.push(row);

        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: point.settings.subsample.map(|s| s.seed),
            threads: rayon::current_num_threads(),
            duration_secs: start.elapsed().as_secs_f64(),
            invocation: Invocation::Mine(MineRun {
                features: r.features.clone(),
                config_path: r.base_path.clone(),
                settings: point.settings.clone(),
                output: result_path,
            }),
        }
        .write()?;
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&r.output.join("sweep.csv"), &header, rows)
}
