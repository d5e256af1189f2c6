//! Run configuration: defaults, overlaid by an optional flat key-value
//! config file, overlaid by command-line flags. Every file key has a flag
//! of the same name.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fex_core::integral::{GForm, IntegralMethod};
use fex_core::problems::{builtin_problem, ProblemSpec};
use fex_core::search::SearchConfig;

/// Everything one solve run needs, fully resolved.
#[derive(Clone, Debug)]
pub struct Settings {
    pub problem_name: String,
    pub dim: usize,
    pub seed: u64,
    pub integral: Option<String>,
    pub grid_points: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub jump_var: Option<f64>,
    pub out_dir: PathBuf,
    pub search: SearchConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            problem_name: String::new(),
            dim: 1,
            seed: 0,
            integral: None,
            grid_points: 50,
            grid_lo: 0.0,
            grid_hi: 1.0,
            jump_var: None,
            out_dir: PathBuf::from("runs"),
            search: SearchConfig::default(),
        }
    }
}

/// Overrides collected from the CLI; `None` means "not given".
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub problem: Option<String>,
    pub dim: Option<usize>,
    pub seed: Option<u64>,
    pub tree_depth: Option<usize>,
    pub search_iters: Option<usize>,
    pub samples_per_iter: Option<usize>,
    pub pool_size: Option<usize>,
    pub batch_n: Option<usize>,
    pub batch_m: Option<usize>,
    pub epsilon: Option<f64>,
    pub nu: Option<f64>,
    pub eta_cluster: Option<f64>,
    pub controller_lr: Option<f64>,
    pub grouping: Option<bool>,
    pub integral: Option<String>,
    pub grid_points: Option<usize>,
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    pub jump_var: Option<f64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub t1: Option<usize>,
    pub t2: Option<usize>,
    pub t2_polish: Option<usize>,
    pub t3: Option<usize>,
    pub t4: Option<usize>,
    pub adam_lr_coarse: Option<f64>,
    pub adam_lr_fine: Option<f64>,
    pub early_stop_threshold: Option<f64>,
    pub early_stop_window: Option<usize>,
    pub trace_every: Option<usize>,
}

pub fn resolve(config_path: Option<&Path>, overrides: &Overrides) -> Result<Settings> {
    let mut settings = Settings::default();
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let kv = parse_flat_config(&text)?;
        apply_file_keys(&mut settings, &kv)?;
    }
    apply_overrides(&mut settings, overrides);
    if settings.problem_name.is_empty() {
        bail!("no problem selected: pass --problem or a config file naming one");
    }
    Ok(settings)
}

fn parse_flat_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`", lineno + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn apply_file_keys(s: &mut Settings, kv: &BTreeMap<String, String>) -> Result<()> {
    for (key, value) in kv {
        apply_one(s, key, value)
            .with_context(|| format!("config key `{key}` with value `{value}`"))?;
    }
    Ok(())
}

fn apply_one(s: &mut Settings, key: &str, v: &str) -> Result<()> {
    match key {
        "problem" => s.problem_name = v.to_string(),
        "dim" => s.dim = v.parse()?,
        "seed" => s.seed = v.parse()?,
        "tree-depth" => s.search.tree_depth = v.parse()?,
        "search-iters" => s.search.iterations = v.parse()?,
        "samples-per-iter" => s.search.samples_per_iter = v.parse()?,
        "pool-size" => s.search.pool_capacity = v.parse()?,
        "batch-n" => s.search.optimizer.n_interior = v.parse()?,
        "batch-m" => s.search.optimizer.m_terminal = v.parse()?,
        "epsilon" => s.search.epsilon = v.parse()?,
        "nu" => s.search.nu = v.parse()?,
        "eta-cluster" => {
            s.search.eta_cluster = if v == "auto" { None } else { Some(v.parse()?) }
        }
        "controller-lr" => s.search.controller_lr = v.parse()?,
        "grouping" => s.search.grouping = v.parse()?,
        "integral" => s.integral = Some(v.to_string()),
        "grid-points" => s.grid_points = v.parse()?,
        "grid-lo" => s.grid_lo = v.parse()?,
        "grid-hi" => s.grid_hi = v.parse()?,
        "jump-var" => s.jump_var = Some(v.parse()?),
        "workers" => s.search.workers = v.parse()?,
        "out-dir" => s.out_dir = PathBuf::from(v),
        "t1" => s.search.optimizer.t1 = v.parse()?,
        "t2" => s.search.optimizer.t2 = v.parse()?,
        "t2-polish" => s.search.optimizer.t2_polish = v.parse()?,
        "t3" => s.search.optimizer.t3 = v.parse()?,
        "t4" => s.search.optimizer.t4 = v.parse()?,
        "adam-lr-coarse" => s.search.optimizer.adam_lr_coarse = v.parse()?,
        "adam-lr-fine" => s.search.optimizer.adam_lr_fine = v.parse()?,
        "early-stop-threshold" => s.search.optimizer.early_stop_threshold = v.parse()?,
        "early-stop-window" => s.search.optimizer.early_stop_window = v.parse()?,
        "trace-every" => s.search.trace_every = v.parse()?,
        other => bail!("unknown config key `{other}`"),
    }
    Ok(())
}

fn apply_overrides(s: &mut Settings, o: &Overrides) {
    macro_rules! set {
        ($field:expr, $src:expr) => {
            if let Some(v) = &$src {
                $field = v.clone();
            }
        };
    }
    set!(s.problem_name, o.problem);
    set!(s.dim, o.dim);
    set!(s.seed, o.seed);
    set!(s.search.tree_depth, o.tree_depth);
    set!(s.search.iterations, o.search_iters);
    set!(s.search.samples_per_iter, o.samples_per_iter);
    set!(s.search.pool_capacity, o.pool_size);
    set!(s.search.optimizer.n_interior, o.batch_n);
    set!(s.search.optimizer.m_terminal, o.batch_m);
    set!(s.search.epsilon, o.epsilon);
    set!(s.search.nu, o.nu);
    if o.eta_cluster.is_some() {
        s.search.eta_cluster = o.eta_cluster;
    }
    set!(s.search.controller_lr, o.controller_lr);
    set!(s.search.grouping, o.grouping);
    if o.integral.is_some() {
        s.integral = o.integral.clone();
    }
    set!(s.grid_points, o.grid_points);
    set!(s.grid_lo, o.grid_lo);
    set!(s.grid_hi, o.grid_hi);
    if o.jump_var.is_some() {
        s.jump_var = o.jump_var;
    }
    set!(s.search.workers, o.workers);
    set!(s.out_dir, o.out_dir);
    set!(s.search.optimizer.t1, o.t1);
    set!(s.search.optimizer.t2, o.t2);
    set!(s.search.optimizer.t2_polish, o.t2_polish);
    set!(s.search.optimizer.t3, o.t3);
    set!(s.search.optimizer.t4, o.t4);
    set!(s.search.optimizer.adam_lr_coarse, o.adam_lr_coarse);
    set!(s.search.optimizer.adam_lr_fine, o.adam_lr_fine);
    set!(s.search.optimizer.early_stop_threshold, o.early_stop_threshold);
    set!(s.search.optimizer.early_stop_window, o.early_stop_window);
    set!(s.search.trace_every, o.trace_every);
}

impl Settings {
    /// Builds the problem instance with the integral / jump overrides
    /// applied and validated.
    pub fn build_problem(&self) -> Result<ProblemSpec> {
        let mut problem = builtin_problem(&self.problem_name, self.dim)
            .map_err(|e| anyhow!("{e}"))?;
        if let Some(var) = self.jump_var {
            problem = problem.with_jump_variance(var);
        }
        match self.integral.as_deref() {
            None => {}
            Some("taylor") => problem.integral = IntegralMethod::Taylor,
            Some("trapezoid") => {
                problem.integral = IntegralMethod::Trapezoid1d {
                    lo: self.grid_lo,
                    hi: self.grid_hi,
                    n_points: self.grid_points,
                }
            }
            Some(other) => bail!("unknown integral method `{other}` (expected taylor|trapezoid)"),
        }
        // reject invalid method/jump-form combinations up front
        match (problem.jump.g_form, &problem.integral) {
            (GForm::Additive, IntegralMethod::Taylor) => {}
            (GForm::Multiplicative1d, IntegralMethod::Trapezoid1d { .. }) if problem.dim == 1 => {}
            (g, m) => bail!("integral method {m:?} is incompatible with jump form {g:?}"),
        }
        // apply grid overrides even without an explicit --integral flag
        if let IntegralMethod::Trapezoid1d { lo, hi, n_points } = &mut problem.integral {
            *lo = self.grid_lo;
            *hi = self.grid_hi;
            *n_points = self.grid_points;
        }
        Ok(problem)
    }

    /// The fully-resolved flat config, written into every run directory.
    pub fn render_effective(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[problem]");
        let _ = writeln!(out, "problem = {}", self.problem_name);
        let _ = writeln!(out, "dim = {}", self.dim);
        if let Some(v) = self.jump_var {
            let _ = writeln!(out, "jump-var = {v}");
        }
        let _ = writeln!(out, "\n[integral]");
        if let Some(m) = &self.integral {
            let _ = writeln!(out, "integral = {m}");
        }
        let _ = writeln!(out, "grid-points = {}", self.grid_points);
        let _ = writeln!(out, "grid-lo = {}", self.grid_lo);
        let _ = writeln!(out, "grid-hi = {}", self.grid_hi);
        let _ = writeln!(out, "\n[search]");
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "tree-depth = {}", self.search.tree_depth);
        let _ = writeln!(out, "search-iters = {}", self.search.iterations);
        let _ = writeln!(out, "samples-per-iter = {}", self.search.samples_per_iter);
        let _ = writeln!(out, "pool-size = {}", self.search.pool_capacity);
        let _ = writeln!(out, "epsilon = {}", self.search.epsilon);
        let _ = writeln!(out, "nu = {}", self.search.nu);
        match self.search.eta_cluster {
            Some(eta) => {
                let _ = writeln!(out, "eta-cluster = {eta}");
            }
            None => {
                let _ = writeln!(out, "eta-cluster = auto");
            }
        }
        let _ = writeln!(out, "controller-lr = {}", self.search.controller_lr);
        let _ = writeln!(out, "grouping = {}", self.search.grouping);
        let _ = writeln!(out, "workers = {}", self.search.workers);
        let _ = writeln!(out, "\n[optimizer]");
        let opt = &self.search.optimizer;
        let _ = writeln!(out, "t1 = {}", opt.t1);
        let _ = writeln!(out, "t2 = {}", opt.t2);
        let _ = writeln!(out, "t2-polish = {}", opt.t2_polish);
        let _ = writeln!(out, "t3 = {}", opt.t3);
        let _ = writeln!(out, "t4 = {}", opt.t4);
        let _ = writeln!(out, "batch-n = {}", opt.n_interior);
        let _ = writeln!(out, "batch-m = {}", opt.m_terminal);
        let _ = writeln!(out, "adam-lr-coarse = {}", opt.adam_lr_coarse);
        let _ = writeln!(out, "adam-lr-fine = {}", opt.adam_lr_fine);
        let _ = writeln!(out, "early-stop-threshold = {}", opt.early_stop_threshold);
        let _ = writeln!(out, "early-stop-window = {}", opt.early_stop_window);
        let _ = writeln!(out, "trace-every = {}", self.search.trace_every);
        let _ = writeln!(out, "\n[output]");
        let _ = writeln!(out, "out-dir = {}", self.out_dir.display());
        out
    }
}
