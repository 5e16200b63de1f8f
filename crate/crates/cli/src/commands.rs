use crate::config::RunConfig;
use crate::CliError;
use divacq::acquire::{
    read_checkpoint, write_checkpoint, write_history, write_manifest, AcquireError,
    AcquisitionState, Checkpoint, Evaluator, HomogenizeEvaluator, LookupEvaluator,
};
use divacq::corpus::{
    generate_corpus_with_params, read_pack, read_pgm_dir, write_pack, write_pgm, CorpusError,
    ShapeLibrary,
};
use divacq::descriptor::{
    fit_pca, import_latents, transform, write_latents, DescriptorError, LatentMatrix,
};
use divacq::homogenize::{
    homogenize_batch, read_properties, write_properties, HomogenizeError, MaterialSpec,
    PropertyVector,
};
use divacq::metrics::{distance_gain, MetricsError};
use divacq::quality::raw_quality;
use divacq::rng::{derive_seed, labels};
use nalgebra::DMatrix;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

type Result<T> = std::result::Result<T, CliError>;

fn corpus_err(e: CorpusError) -> CliError {
    match e {
        CorpusError::Empty | CorpusError::Resolution(_) => CliError::Usage(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

fn descriptor_err(e: DescriptorError) -> CliError {
    match e {
        DescriptorError::BadHeader { .. } => CliError::Usage(e.to_string()),
        DescriptorError::RankDeficient { .. } => CliError::Numeric(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

fn homogenize_err(e: HomogenizeError) -> CliError {
    match e {
        HomogenizeError::SolverSingular { .. } => CliError::Numeric(e.to_string()),
        HomogenizeError::InvalidMaterial(_) => CliError::Usage(e.to_string()),
        HomogenizeError::Batch { ref source, .. }
            if matches!(**source, HomogenizeError::SolverSingular { .. }) =>
        {
            CliError::Numeric(e.to_string())
        }
        _ => CliError::Data(e.to_string()),
    }
}

fn acquire_err(e: AcquireError) -> CliError {
    match e {
        AcquireError::Config(_) => CliError::Usage(e.to_string()),
        _ if e.is_numeric() => CliError::Numeric(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

fn metrics_err(e: MetricsError) -> CliError {
    CliError::Data(e.to_string())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

/// Prints the fully resolved settings of a command.
fn print_resolved<S: Serialize>(command: &str, settings: &S) {
    let body = toml::to_string(settings).unwrap_or_else(|e| format!("# unprintable: {e}\n"));
    println!("# divacq {command}: resolved configuration\n{body}");
}

#[derive(clap::Args, Serialize)]
pub struct CorpusSource {
    /// Shape pack (SHPB) file.
    #[arg(long, conflicts_with = "pgm_dir")]
    pub pack: Option<PathBuf>,
    /// Directory of binary PGM rasters, read in file name order.
    #[arg(long)]
    pub pgm_dir: Option<PathBuf>,
}

impl CorpusSource {
    fn load(&self) -> Result<ShapeLibrary<f64>> {
        let shapes = match (&self.pack, &self.pgm_dir) {
            (Some(p), None) => read_pack(p),
            (None, Some(d)) => read_pgm_dir(d),
            _ => {
                return Err(CliError::Usage(
                    "give exactly one of --pack and --pgm-dir".into(),
                ))
            }
        }
        .map_err(corpus_err)?;
        ShapeLibrary::from_shapes(shapes).map_err(corpus_err)
    }
}

#[derive(clap::Args, Serialize)]
pub struct MaterialArgs {
    #[arg(long, default_value_t = 1.0)]
    pub e_solid: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub e_void: f64,
    #[arg(long, default_value_t = 0.3)]
    pub nu: f64,
}

impl MaterialArgs {
    fn spec(&self) -> Result<MaterialSpec<f64>> {
        material(self.e_solid, self.e_void, self.nu)
    }
}

fn material(e_solid: f64, e_void: f64, nu: f64) -> Result<MaterialSpec<f64>> {
    let m = MaterialSpec {
        e_solid,
        e_void,
        nu,
    };
    m.validate().map_err(homogenize_err)?;
    Ok(m)
}

#[derive(clap::Args, Serialize)]
pub struct GenCorpusArgs {
    /// Number of shapes.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub resolution: usize,
    /// Output shape pack.
    #[arg(long)]
    pub out: PathBuf,
    /// Lattice parameter CSV; defaults to the pack path with `.params.csv`.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

pub fn gen_corpus(a: GenCorpusArgs) -> Result<()> {
    print_resolved("gen-corpus", &a);
    if a.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let (lib, params) =
        generate_corpus_with_params::<f64>(a.n, a.seed, a.resolution).map_err(corpus_err)?;
    write_pack(&a.out, lib.shapes()).map_err(corpus_err)?;
    let params_path = a
        .params
        .clone()
        .unwrap_or_else(|| a.out.with_extension("params.csv"));
    let mut csv = String::from("id,t0,t1,t2,t3\n");
    for (i, p) in params.iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{},{},{}", p.t[0], p.t[1], p.t[2], p.t[3]);
    }
    std::fs::write(&params_path, csv).map_err(io_err(&params_path))?;
    println!(
        "wrote {} shapes to {} and parameters to {}",
        lib.len(),
        a.out.display(),
        params_path.display()
    );
    Ok(())
}

#[derive(clap::Args, Serialize)]
pub struct DescriptorArgs {
    #[command(flatten)]
    pub corpus: CorpusSource,
    /// Number of principal components.
    #[arg(long, default_value_t = 10)]
    pub d_z: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Validate and standardize an existing latent CSV instead of fitting PCA.
    #[arg(long)]
    pub import: Option<PathBuf>,
    /// Output latent CSV.
    #[arg(long)]
    pub out: PathBuf,
}

/// PCA latents, falling back to the numerical rank when `d_z` exceeds it.
fn pca_latents(
    lib: &ShapeLibrary<f64>,
    d_z: usize,
    seed: u64,
) -> Result<(LatentMatrix<f64>, Vec<String>)> {
    let mut comments = vec![format!("pca d_z={d_z} seed={seed} n={}", lib.len())];
    let basis = match fit_pca(lib, d_z, seed) {
        Ok(b) => b,
        Err(DescriptorError::RankDeficient { rank, requested }) if rank > 0 => {
            log::warn!("descriptor rank is {rank}, below the requested {requested}; using {rank} components");
            comments.push(format!(
                "d_z reduced from {requested} to {rank} (numerical rank)"
            ));
            fit_pca(lib, rank, seed).map_err(descriptor_err)?
        }
        Err(e) => return Err(descriptor_err(e)),
    };
    let latents = transform(&basis, lib).map_err(descriptor_err)?;
    Ok((latents, comments))
}

pub fn descriptor(a: DescriptorArgs) -> Result<()> {
    print_resolved("descriptor", &a);
    let lib = a.corpus.load()?;
    let (latents, comments) = match &a.import {
        Some(path) => {
            let l = import_latents::<f64>(path, lib.len()).map_err(descriptor_err)?;
            (l, vec![format!("imported from {}", path.display())])
        }
        None => pca_latents(&lib, a.d_z, a.seed)?,
    };
    write_latents(&a.out, &latents, &comments).map_err(descriptor_err)?;
    println!(
        "wrote {} x {} latents to {}",
        latents.n(),
        latents.dim(),
        a.out.display()
    );
    Ok(())
}

#[derive(clap::Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub corpus: CorpusSource,
    #[command(flatten)]
    pub material: MaterialArgs,
    /// Comma separated shape ids; all shapes when omitted.
    #[arg(long, value_delimiter = ',')]
    pub ids: Option<Vec<usize>>,
    /// Output property CSV.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    print_resolved("evaluate", &a);
    let lib = a.corpus.load()?;
    let ids: Vec<usize> = a.ids.clone().unwrap_or_else(|| (0..lib.len()).collect());
    if let Some(&bad) = ids.iter().find(|&&i| i >= lib.len()) {
        return Err(CliError::Usage(format!(
            "shape id {bad} out of range (library has {})",
            lib.len()
        )));
    }
    let started = Instant::now();
    let shapes: Vec<_> = ids.iter().map(|&i| lib.shape(i)).collect();
    let props = homogenize_batch(&shapes, &a.material.spec()?).map_err(homogenize_err)?;
    write_properties(&a.out, &ids, &props).map_err(homogenize_err)?;
    println!(
        "homogenized {} shapes in {:.1?}; wrote {}",
        ids.len(),
        started.elapsed(),
        a.out.display()
    );
    Ok(())
}

fn load_run_library(cfg: &RunConfig) -> Result<ShapeLibrary<f64>> {
    if let Some(n) = cfg.synthetic_n {
        return generate_corpus_with_params::<f64>(n, cfg.synthetic_seed, cfg.resolution)
            .map(|(lib, _)| lib)
            .map_err(corpus_err);
    }
    CorpusSource {
        pack: cfg.pack.clone(),
        pgm_dir: cfg.pgm_dir.clone(),
    }
    .load()
}

/// Reads a property CSV covering shapes `0..n` in order.
fn read_population(path: &Path, n: usize) -> Result<Vec<PropertyVector<f64>>> {
    let rows = read_properties::<f64>(path).map_err(homogenize_err)?;
    if rows.len() != n || rows.iter().enumerate().any(|(i, (id, _))| *id != i) {
        return Err(CliError::Data(format!(
            "{} must list shapes 0..{n} in order ({} rows found)",
            path.display(),
            rows.len()
        )));
    }
    Ok(rows.into_iter().map(|(_, p)| p).collect())
}

fn write_outputs(dir: &Path, state: &AcquisitionState<f64>) -> Result<()> {
    write_checkpoint(&dir.join("checkpoint.json"), state).map_err(acquire_err)?;
    write_history(&dir.join("history.csv"), state.history()).map_err(acquire_err)?;
    write_manifest(
        &dir.join("manifest.csv"),
        state.selected(),
        &state.selected_quality(),
    )
    .map_err(acquire_err)
}

pub fn run(
    config: PathBuf,
    seed: Option<u64>,
    resume: bool,
    max_iterations: Option<usize>,
) -> Result<()> {
    let mut cfg = RunConfig::load(&config).map_err(CliError::Usage)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    print_resolved("run", &cfg);
    let acq = cfg.acquisition().map_err(CliError::Usage)?;
    let material = material(cfg.e_solid, cfg.e_void, cfg.nu)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let resolved = out.join("config.toml");
    std::fs::write(&resolved, cfg.to_toml()).map_err(io_err(&resolved))?;

    let started = Instant::now();
    let lib = load_run_library(&cfg)?;
    let latents = match &cfg.latents {
        Some(p) => import_latents::<f64>(p, lib.len()).map_err(descriptor_err)?,
        None => {
            let (l, comments) = pca_latents(&lib, cfg.d_z, cfg.descriptor_seed)?;
            write_latents(&out.join("latents.csv"), &l, &comments).map_err(descriptor_err)?;
            l
        }
    };
    log::info!(
        "library of {} shapes, {}-d latents ({:.1?})",
        lib.len(),
        latents.dim(),
        started.elapsed()
    );

    let population = if cfg.track_property_gain {
        let cached = out.join("population_properties.csv");
        let path = cfg.population_properties.clone().unwrap_or(cached.clone());
        if path.exists() {
            Some(read_population(&path, lib.len())?)
        } else {
            log::info!(
                "homogenizing all {} shapes for the property gain",
                lib.len()
            );
            let shapes: Vec<_> = lib.shapes().iter().collect();
            let props = homogenize_batch(&shapes, &material).map_err(homogenize_err)?;
            let ids: Vec<usize> = (0..lib.len()).collect();
            write_properties(&path, &ids, &props).map_err(homogenize_err)?;
            // read back so a resumed run sees exactly the same values
            Some(read_population(&path, lib.len())?)
        }
    } else {
        None
    };

    let vf = lib.volume_fractions().to_vec();
    let checkpoint = out.join("checkpoint.json");
    let mut state = if resume {
        let cp: Checkpoint<f64> = read_checkpoint(&checkpoint).map_err(acquire_err)?;
        if cp.config != acq {
            return Err(CliError::Usage(
                "checkpoint was written with a different acquisition configuration".into(),
            ));
        }
        log::info!(
            "resuming at iteration {} with {} selected",
            cp.iteration,
            cp.selected.len()
        );
        AcquisitionState::resume(latents.z.clone(), vf, population.as_deref(), cp)
            .map_err(acquire_err)?
    } else {
        AcquisitionState::new(latents.z.clone(), vf, population.as_deref(), acq)
            .map_err(acquire_err)?
    };

    let mut evaluator: Box<dyn Evaluator<f64>> = match &population {
        Some(p) => Box::new(LookupEvaluator {
            properties: p.clone(),
        }),
        None => Box::new(HomogenizeEvaluator {
            library: &lib,
            material,
        }),
    };
    let mut steps = 0usize;
    loop {
        if max_iterations.is_some_and(|m| steps >= m) {
            break;
        }
        let progressed = state.step(&mut evaluator).map_err(|e| {
            // the last checkpoint on disk is the state before this iteration
            log::error!(
                "iteration {} failed; resume from {}",
                state.iteration(),
                checkpoint.display()
            );
            acquire_err(e)
        })?;
        if !progressed {
            break;
        }
        steps += 1;
        if state.iteration() % cfg.checkpoint_every == 0 {
            write_outputs(out, &state)?;
        }
    }
    write_outputs(out, &state)?;

    let last = state.history().last();
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!(
        "iterations {} selected {} stage {} transitions {:?}",
        state.iteration(),
        state.selected().len(),
        state.stage().as_str(),
        state.transitions()
    );
    println!(
        "gain_shape {} gain_property {} elapsed {:.1?}",
        fmt(last.and_then(|h| h.gain_shape)),
        fmt(last.and_then(|h| h.gain_property)),
        started.elapsed()
    );
    println!("outputs in {}", out.display());
    Ok(())
}

#[derive(clap::Args, Serialize)]
pub struct MetricsArgs {
    /// Manifest CSV of the selection.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Latent CSV of the whole library.
    #[arg(long)]
    pub latents: PathBuf,
    /// Property CSV of the whole library; enables the property gain.
    #[arg(long)]
    pub properties: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub n_rep: usize,
    /// Master seed; replicates match those of a run with the same seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

struct Manifest {
    ids: Vec<usize>,
    props: Option<Vec<[f64; 3]>>,
}

fn read_manifest(path: &Path, need_props: bool) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or_default().trim().split(',').collect();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| CliError::Data(format!("{} is missing column {name}", path.display())))
    };
    let id_col = col("id")?;
    let prop_cols = if need_props {
        Some([col("C11")?, col("C12")?, col("C22")?])
    } else {
        None
    };
    let mut ids = Vec::new();
    let mut props = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.trim().split(',').collect();
        let get = |c: usize| -> Result<&str> {
            f.get(c).copied().ok_or_else(|| {
                CliError::Data(format!("{} row {}: too few fields", path.display(), i + 1))
            })
        };
        let bad =
            |s: &str| CliError::Data(format!("{} row {}: bad value {s:?}", path.display(), i + 1));
        let id_s = get(id_col)?;
        ids.push(id_s.parse::<usize>().map_err(|_| bad(id_s))?);
        if let Some(cols) = prop_cols {
            let mut v = [0.0; 3];
            for (j, &c) in cols.iter().enumerate() {
                let s = get(c)?;
                v[j] = s.parse().map_err(|_| bad(s))?;
            }
            props.push(v);
        }
    }
    Ok(Manifest {
        ids,
        props: prop_cols.map(|_| props),
    })
}

fn standardize_by(pop: &mut DMatrix<f64>, other: &mut DMatrix<f64>) {
    let n = pop.nrows() as f64;
    for j in 0..pop.ncols() {
        let mean = pop.column(j).iter().sum::<f64>() / n;
        let var = pop
            .column(j)
            .iter()
            .map(|x| (x - mean).powi(2))
            .sum::<f64>()
            / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        pop.column_mut(j)
            .iter_mut()
            .for_each(|x| *x = (*x - mean) / sd);
        other
            .column_mut(j)
            .iter_mut()
            .for_each(|x| *x = (*x - mean) / sd);
    }
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    print_resolved("metrics", &a);
    let m = read_manifest(&a.manifest, a.properties.is_some())?;
    let text = std::fs::read_to_string(&a.latents).map_err(io_err(&a.latents))?;
    let n = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .count()
        .saturating_sub(1);
    let latents = divacq::descriptor::parse_latents::<f64>(&text, n).map_err(descriptor_err)?;
    if let Some(&bad) = m.ids.iter().find(|&&i| i >= n) {
        return Err(CliError::Data(format!(
            "manifest id {bad} is not in the latent file ({n} rows)"
        )));
    }
    let seed = derive_seed(a.seed, labels::METRICS, 0);
    let shape = distance_gain(&latents.z.select_rows(&m.ids), &latents.z, a.n_rep, seed)
        .map_err(metrics_err)?;
    println!("n_selected = {}", m.ids.len());
    println!("shape_mean_distance = {}", shape.mean_distance);
    println!("gain_shape = {}", shape.gain);
    if let Some(path) = &a.properties {
        let pop = read_population(path, n)?;
        let mut p = DMatrix::from_fn(n, 3, |i, j| pop[i].response()[j]);
        let sel = m.props.expect("property columns were requested");
        let mut s = DMatrix::from_fn(sel.len(), 3, |i, j| sel[i][j]);
        standardize_by(&mut p, &mut s);
        let prop = distance_gain(&s, &p, a.n_rep, seed).map_err(metrics_err)?;
        println!("property_mean_distance = {}", prop.mean_distance);
        println!("gain_property = {}", prop.gain);
    }
    Ok(())
}

#[derive(clap::Args, Serialize)]
pub struct ExportArgs {
    /// Checkpoint written by `run`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for manifest.csv and history.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Shape pack of the run; enables volume-fraction based quality values
    /// and PGM export of the selected shapes.
    #[arg(long)]
    pub pack: Option<PathBuf>,
    /// Also write each selected shape as `selected/<rank>_<id>.pgm`.
    #[arg(long, requires = "pack")]
    pub pgm: bool,
}

pub fn export(a: ExportArgs) -> Result<()> {
    print_resolved("export", &a);
    let cp: Checkpoint<f64> = read_checkpoint(&a.checkpoint).map_err(acquire_err)?;
    std::fs::create_dir_all(&a.out_dir).map_err(io_err(&a.out_dir))?;
    let lib = match &a.pack {
        Some(p) => Some(
            CorpusSource {
                pack: Some(p.clone()),
                pgm_dir: None,
            }
            .load()?,
        ),
        None => None,
    };
    if let Some(l) = &lib {
        if l.len() != cp.n_items {
            return Err(CliError::Data(format!(
                "pack has {} shapes, checkpoint expects {}",
                l.len(),
                cp.n_items
            )));
        }
    }
    let quality: Vec<Option<f64>> = cp
        .selected
        .iter()
        .map(|s| {
            let vf = lib
                .as_ref()
                .map_or(f64::NAN, |l| l.volume_fractions()[s.id]);
            raw_quality(&s.properties, vf, &cp.config.quality).filter(|q| q.is_finite())
        })
        .collect();
    write_manifest(&a.out_dir.join("manifest.csv"), &cp.selected, &quality).map_err(acquire_err)?;
    write_history(&a.out_dir.join("history.csv"), &cp.history).map_err(acquire_err)?;
    if a.pgm {
        let lib = lib.as_ref().expect("clap enforces --pack with --pgm");
        let dir = a.out_dir.join("selected");
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (rank, s) in cp.selected.iter().enumerate() {
            write_pgm(
                &dir.join(format!("{rank:05}_{}.pgm", s.id)),
                lib.shape(s.id),
            )
            .map_err(corpus_err)?;
        }
    }
    println!(
        "exported {} selections to {}",
        cp.selected.len(),
        a.out_dir.display()
    );
    Ok(())
}
