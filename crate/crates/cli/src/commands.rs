use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use eigendist_core::concentration::{
    exp_moment_bound, function_tail_scale, simulate_function_tail, ConcentrationParams, N_MAX,
};
use eigendist_core::eigen::EigendistanceSummary;
use eigendist_core::families::{
    gamblers_ruin, hamming, harmonic_h, kappa_l, rho_l, weighted_hamming, ExampleSpec,
};
use eigendist_core::io::{ChainFile, MetricFile};
use eigendist_core::{
    certify, coupling_for, coupling_irreducible, find_lumpable_partition, is_lumpable, iterate_f,
    iterate_maximal, quotient_chain, simulate_coupled, symmetrize, tensor_metric,
    verify_eigendistance, EigendistanceResult, MarkovChain, Matrix, Partition, PseudoMetric,
    SearchMode, Tolerances,
};
use serde_json::{json, Value};

use crate::report::{
    columns_tsv, matrix_tsv, read_input, report_schema_version, validation, write_output, Failure,
    Output, Report,
};
use crate::{Cli, Command, Common, Family, Format, Mode};

struct Context {
    common: Common,
    tol: Tolerances,
    inputs: BTreeMap<&'static str, String>,
}

impl Context {
    fn new(common: &Common) -> Result<Self, Failure> {
        let mut tol = Tolerances::default();
        if let Some(t) = common.tol {
            tol.fp_tol = t;
        }
        if let Some(m) = common.max_iter {
            tol.max_iter = m;
        }
        tol.validate()?;
        if !(common.p >= 1.0 && common.p.is_finite()) {
            return Err(validation(anyhow!("--p must be a finite number >= 1")));
        }
        if common.samples == Some(0) {
            return Err(validation(anyhow!("--samples must be at least 1")));
        }
        Ok(Self {
            common: common.clone(),
            tol,
            inputs: BTreeMap::new(),
        })
    }

    fn chain(&mut self) -> Result<MarkovChain, Failure> {
        let path = required(&self.common.chain, "--chain")?;
        let input = read_input(&path)?;
        self.inputs.insert("chain", input.sha256);
        let file: ChainFile = serde_json::from_str(&input.text).map_err(validation)?;
        Ok(file.into_chain()?)
    }

    fn metric(&mut self, n: usize) -> Result<Option<PseudoMetric>, Failure> {
        let Some(path) = self.common.metric.clone() else {
            return Ok(None);
        };
        let input = read_input(&path)?;
        self.inputs.insert("metric", input.sha256);
        let file: MetricFile = serde_json::from_str(&input.text).map_err(validation)?;
        let metric = file.into_metric()?;
        if metric.n() != n {
            return Err(eigendist_core::Error::DimensionMismatch {
                expected: n,
                actual: metric.n(),
            }
            .into());
        }
        Ok(Some(metric))
    }

    fn json_file<T: serde::de::DeserializeOwned>(
        &mut self,
        role: &'static str,
        path: &Path,
    ) -> Result<T, Failure> {
        let input = read_input(path)?;
        self.inputs.insert(role, input.sha256);
        serde_json::from_str(&input.text).map_err(validation)
    }

    fn report(self, command: &'static str, parameters: Value, result: Value) -> Value {
        serde_json::to_value(Report {
            report_schema_version: report_schema_version(),
            command,
            inputs: self.inputs,
            parameters,
            tolerances: self.tol,
            result,
        })
        .expect("report serializes")
    }
}

fn required(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf, Failure> {
    path.clone()
        .ok_or_else(|| validation(anyhow!("{flag} is required for this command")))
}

fn to_json(v: impl serde::Serialize) -> Value {
    serde_json::to_value(v).expect("value serializes")
}

/// Runs the command, writes its output once, and returns the exit code.
pub fn run(cli: &Cli) -> Result<i32, Failure> {
    let mut cx = Context::new(&cli.common)?;
    let out = match &cli.command {
        Command::Eigendist => eigendist(&mut cx)?,
        Command::Maximal => maximal(&mut cx)?,
        Command::Verify => verify(&mut cx)?,
        Command::Coupling { x0, y0, steps } => coupling(&mut cx, *x0, *y0, *steps)?,
        Command::Lumpable { mode } => lumpable(&mut cx, *mode)?,
        Command::Quotient { partition } => quotient(&mut cx, partition.as_ref())?,
        Command::Concentration {
            function,
            x0,
            steps,
        } => concentration(&mut cx, function.as_ref(), *x0, *steps)?,
        Command::Example { family, metric_out } => {
            return example(&cli.common, family, metric_out.as_ref());
        }
    };
    let text = match cli.common.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&out.json).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Tsv => out.tsv,
    };
    write_output(&text, cli.common.out.as_ref())?;
    if out.converged {
        Ok(0)
    } else {
        eprintln!("error: iteration did not reach the stopping tolerance");
        Ok(3)
    }
}

fn parameters(cx: &Context, extra: Value) -> Value {
    let mut base = json!({ "p": cx.common.p });
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn eigen_output(cx: Context, command: &'static str, r: &EigendistanceResult) -> Output {
    let mut result = to_json(EigendistanceSummary::from(r));
    result["degenerate"] = json!(r.is_degenerate());
    let tsv = matrix_tsv(r.rho.matrix());
    let params = parameters(&cx, json!({}));
    Output {
        json: cx.report(command, params, result),
        tsv,
        converged: r.converged,
    }
}

fn eigendist(cx: &mut Context) -> Result<Output, Failure> {
    let chain = cx.chain()?;
    let init = cx
        .metric(chain.n())?
        .unwrap_or_else(|| PseudoMetric::indicator(chain.n()));
    let r = iterate_f(&chain, cx.common.p, &init, None, &cx.tol)?;
    log::info!(
        "iterate_f: {} iterations, residual {:e}",
        r.iterations,
        r.residual
    );
    Ok(eigen_output(take(cx), "eigendist", &r))
}

fn maximal(cx: &mut Context) -> Result<Output, Failure> {
    let chain = cx.chain()?;
    let r = iterate_maximal(&chain, cx.common.p, &cx.tol)?;
    Ok(eigen_output(take(cx), "maximal", &r))
}

fn verify(cx: &mut Context) -> Result<Output, Failure> {
    let chain = cx.chain()?;
    let metric = cx
        .metric(chain.n())?
        .ok_or_else(|| validation(anyhow!("--metric is required for verify")))?;
    let v = verify_eigendistance(&chain, &metric, cx.common.p, &cx.tol)?;
    let result = json!({
        "kappa": v.kappa_hat,
        "residual": v.residual,
        "image": v.image.matrix().to_rows(),
    });
    let tsv = columns_tsv(&["kappa", "residual"], &[&[v.kappa_hat], &[v.residual]]);
    let cx = take(cx);
    let params = parameters(&cx, json!({}));
    Ok(Output {
        json: cx.report("verify", params, result),
        tsv,
        converged: true,
    })
}

/// Eigendistance from `--metric` when given (certified), else from the
/// discrete metric.
fn eigendistance(cx: &mut Context, chain: &MarkovChain) -> Result<EigendistanceResult, Failure> {
    Ok(match cx.metric(chain.n())? {
        Some(m) => certify(chain, &m, cx.common.p, &cx.tol)?,
        None => iterate_f(
            chain,
            cx.common.p,
            &PseudoMetric::indicator(chain.n()),
            None,
            &cx.tol,
        )?,
    })
}

fn coupling(cx: &mut Context, x0: usize, y0: usize, steps: usize) -> Result<Output, Failure> {
    let chain = cx.chain()?;
    let eig = eigendistance(cx, &chain)?;
    let c = symmetrize(&coupling_for(&chain, &eig, &cx.tol)?);
    let irr = coupling_irreducible(&c);
    let records = c.records();
    let mut result = json!({
        "kappa": c.kappa,
        "p": c.p,
        "relation_error": c.relation_error,
        "marginal_error": c.marginal_error,
        "irreducibility": irr,
        "coupling": records,
    });
    if let Some(samples) = cx.common.samples {
        let sim = simulate_coupled(&c, x0, y0, steps, samples, cx.common.seed)?;
        result["simulation"] = json!({
            "mean_rho_p": sim.mean_rho_p,
            "stderr": sim.stderr,
            "histogram": sim.histogram,
        });
    }
    let mut tsv = String::from("from_x\tfrom_y\tto_x\tto_y\tmass\n");
    for r in &records {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.from[0], r.from[1], r.to[0], r.to[1], r.mass
        ));
    }
    let converged = eig.converged;
    let cx = take(cx);
    let params = parameters(
        &cx,
        json!({ "seed": cx.common.seed, "samples": cx.common.samples, "x0": x0, "y0": y0, "steps": steps }),
    );
    Ok(Output {
        json: cx.report("coupling", params, result),
        tsv,
        converged,
    })
}

fn search_mode(mode: Mode) -> SearchMode {
    match mode {
        Mode::Auto => SearchMode::Auto,
        Mode::Exhaustive => SearchMode::Exhaustive,
        Mode::Heuristic => SearchMode::Heuristic,
    }
}

fn labels_tsv(p: &Partition) -> String {
    let mut out = String::from("state\tblock\n");
    for (x, b) in p.labels().iter().enumerate() {
        out.push_str(&format!("{x}\t{b}\n"));
    }
    out
}

fn lumpable(cx: &mut Context, mode: Mode) -> Result<Output, Failure> {
    let chain = cx.chain()?;
    let found = find_lumpable_partition(&chain, search_mode(mode))?;
    let tsv = found
        .partition
        .as_ref()
        .map_or_else(|| "state\tblock\n".into(), labels_tsv);
    let result = json!({
        "partition": found.partition,
        "blocks": found.partition.as_ref().map(Partition::len),
        "exhaustive": found.exhaustive,
        "certified_irreducible": found.certified_irreducible(),
    });
    let cx = take(cx);
    let params = json!({ "mode": format!("{mode:?}").to_lowercase() });
    Ok(Output {
        json: cx.report("lumpable", params, result),
        tsv,
        converged: true,
    })
}

fn quotient(cx: &mut Context, partition: Option<&PathBuf>) -> Result<Output, Failure> {
    let chain = cx.chain()?;
    let part = match partition {
        Some(path) => {
            let p: Partition = cx.json_file("partition", path)?;
            if p.n() != chain.n() {
                return Err(validation(anyhow!(
                    "partition covers {} states, chain has {}",
                    p.n(),
                    chain.n()
                )));
            }
            if !is_lumpable(&chain, &p)? {
                return Err(eigendist_core::Error::NotLumpable.into());
            }
            p
        }
        None => find_lumpable_partition(&chain, SearchMode::Auto)?
            .partition
            .ok_or_else(|| validation(anyhow!("no nontrivial lumpable partition found")))?,
    };
    let q = quotient_chain(&chain, &part)?;
    let tsv = matrix_tsv(q.matrix());
    let result = json!({ "partition": part, "chain": ChainFile::from(&q) });
    let cx = take(cx);
    Ok(Output {
        json: cx.report("quotient", json!({}), result),
        tsv,
        converged: true,
    })
}

fn concentration(
    cx: &mut Context,
    function: Option<&PathBuf>,
    x0: usize,
    steps: usize,
) -> Result<Output, Failure> {
    if cx.common.p != 1.0 {
        return Err(validation(anyhow!("concentration bounds need --p 1")));
    }
    let chain = cx.chain()?;
    let n = chain.n();
    let metric = cx
        .metric(n)?
        .ok_or_else(|| validation(anyhow!("--metric is required for concentration")))?;
    if x0 >= n {
        return Err(validation(anyhow!("--x0 {x0} outside 0..{n}")));
    }
    let eig = certify(&chain, &metric, 1.0, &cx.tol)?;
    if !eig.converged {
        return Err(Failure::NonConvergence(anyhow!(
            "--metric is not an eigendistance (residual {:e})",
            eig.residual
        )));
    }
    let kappa = eig.kappa.max(0.0);
    let f: Vec<f64> = match function {
        Some(path) => cx.json_file("function", path)?,
        None => (0..n).map(|y| metric.get(x0, y)).collect(),
    };
    let params = ConcentrationParams::new(&chain, &metric, kappa, N_MAX, Some(&f))?;
    let lip = params.lip_norm.unwrap_or(f64::INFINITY);
    if !lip.is_finite() {
        return Err(validation(anyhow!(
            "function is not Lipschitz for --metric"
        )));
    }
    let bound = exp_moment_bound(&params, lip, steps)
        .map(Some)
        .or_else(|e| match e {
            eigendist_core::Error::DivergentTail { remainder } => {
                log::warn!("moment series remainder {remainder:e}; bound omitted");
                Ok(None)
            }
            e => Err(e),
        })?;
    let mut result = json!({
        "kappa": kappa,
        "j": params.j,
        "sigma": params.sigma,
        "sigma_ratio": params.sigma_ratio(),
        "lip_norm": lip,
        "exp_moment_bound": bound,
        "tail_scale": function_tail_scale(lip, params.j, kappa, steps),
    });
    let mut tsv = String::new();
    if let Some(samples) = cx.common.samples {
        let rep = simulate_function_tail(
            &chain,
            &f,
            &metric,
            kappa,
            x0,
            steps,
            samples,
            cx.common.seed,
        )?;
        tsv = columns_tsv(
            &["r", "empirical", "bound", "mc_stderr"],
            &[&rep.r, &rep.empirical, &rep.bound, &rep.mc_stderr],
        );
        result["dominated"] = json!(rep.dominated(4.0));
        result["tail"] = to_json(&rep);
    }
    let cx = take(cx);
    let p = json!({ "p": 1.0, "x0": x0, "steps": steps, "seed": cx.common.seed, "samples": cx.common.samples });
    Ok(Output {
        json: cx.report("concentration", p, result),
        tsv,
        converged: true,
    })
}

fn take(cx: &mut Context) -> Context {
    Context {
        common: cx.common.clone(),
        tol: cx.tol,
        inputs: std::mem::take(&mut cx.inputs),
    }
}

fn family_spec(family: &Family) -> Result<ExampleSpec, Failure> {
    Ok(match family {
        Family::LazyTorus { l, q } => ExampleSpec::LazyTorus { l: *l, q: *q },
        Family::SpinFlip { n, q, .. } => ExampleSpec::SpinFlip { n: *n, q: *q },
        Family::AbsorbingRuin { n, q } => ExampleSpec::AbsorbingRuin { n: *n, q: *q },
        Family::RandomLazy {
            n,
            seed,
            min_selfloop,
        } => ExampleSpec::RandomLazy {
            n: *n,
            seed: *seed,
            min_selfloop: *min_selfloop,
        },
        Family::Product { left, right } => ExampleSpec::Product {
            left: Box::new(serde_json::from_str(left).map_err(validation)?),
            right: Box::new(serde_json::from_str(right).map_err(validation)?),
        },
    })
}

/// Closed-form `(metric, kappa)` of a family, for `p = 1`.
fn closed_form(
    spec: &ExampleSpec,
    weights: Option<&[f64]>,
) -> Result<(PseudoMetric, f64), Failure> {
    Ok(match spec {
        ExampleSpec::LazyTorus { l, q } => (rho_l(*l)?, kappa_l(*l, 1.0 - 2.0 * q)?),
        ExampleSpec::SpinFlip { n, q } => match weights {
            Some(a) if a.len() != *n => {
                return Err(validation(anyhow!("--weights needs {n} entries")));
            }
            Some(a) => (weighted_hamming(a)?, 2.0 * q),
            None => (hamming(*n)?, 2.0 * q),
        },
        ExampleSpec::AbsorbingRuin { n, q } => {
            let chain = gamblers_ruin(*n, *q)?;
            let h = harmonic_h(&chain, &[0], &[*n])?;
            let d = Matrix::from_fn(n + 1, n + 1, |x, y| (h[x] - h[y]).abs());
            (PseudoMetric::new(d)?, 0.0)
        }
        ExampleSpec::Product { left, right } => {
            let (ra, ka) = closed_form(left, None)?;
            let (rb, kb) = closed_form(right, None)?;
            if (ka - kb).abs() > 1e-12 {
                return Err(validation(anyhow!(
                    "factor curvatures differ ({ka} vs {kb}); no common eigendistance"
                )));
            }
            (tensor_metric(&ra, &rb, 1.0, 1.0, 1.0)?, ka)
        }
        ExampleSpec::RandomLazy { .. } => {
            return Err(validation(anyhow!("random_lazy has no closed-form metric")));
        }
    })
}

fn example(common: &Common, family: &Family, metric_out: Option<&PathBuf>) -> Result<i32, Failure> {
    let spec = family_spec(family)?;
    let chain = spec.build()?;
    let weights = match family {
        Family::SpinFlip { weights, .. } => weights.as_deref(),
        _ => None,
    };
    let render_chain = |c: &MarkovChain| match common.format {
        Format::Json => {
            let mut s =
                serde_json::to_string_pretty(&ChainFile::from(c)).expect("chain serializes");
            s.push('\n');
            s
        }
        Format::Tsv => matrix_tsv(c.matrix()),
    };
    if let Some(path) = metric_out {
        let (metric, _) = closed_form(&spec, weights)?;
        let mut s =
            serde_json::to_string_pretty(&MetricFile::from(&metric)).expect("metric serializes");
        s.push('\n');
        write_output(&s, Some(path))?;
    }
    write_output(&render_chain(&chain), common.out.as_ref())?;
    Ok(0)
}
