//! Tuning-parameter selection: an information criterion adapted to the
//! kernel-weighted pair expansion, joint grid search over the roughness and
//! sparseness parameters, and subject-level cross-validation for the basis
//! dimension.

use nalgebra::{Cholesky, DMatrix};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bspline::SplineBasis;
use crate::error::{LockerError, Result};
use crate::family::Family;
use crate::irls::{fit, roughness_block, FitConfig, FitResult};
use crate::kernel::{default_bandwidth, pair_expand, KernelFamily, KernelSpec, PairDesign};
use crate::longdata::LongDataset;

/// Weight on the dimension term of the criterion.
pub const DEFAULT_EBIC_NU: f64 = 0.5;

/// Deviance floor applied before the log; the criterion is undefined at
/// zero deviance.
pub const DEV_FLOOR: f64 = 1e-12;

/// Criterion value together with its ingredients.
#[derive(Debug, Clone, Copy)]
pub struct EbicBreakdown {
    pub dev: f64,
    pub df: f64,
    /// Count of nonzero kernel weights (effective sample size).
    pub n0: usize,
    pub nu: f64,
    pub score: f64,
}

/// `log(max(dev, floor)) + df·log(n0)/n0 + ν·df·log(2L)/n0`.
pub fn ebic_score(dev: f64, df: f64, n0: usize, two_l: usize, nu: f64) -> f64 {
    let n = n0 as f64;
    dev.max(DEV_FLOOR).ln() + df * n.ln() / n + nu * df * (two_l as f64).ln() / n
}

/// Effective degrees of freedom of a fit: the trace of the hat operator of
/// the kernel-weighted penalized least-squares problem restricted to the
/// active columns,
/// `df = tr{X_A (X_AᵀWX_A + N₀V_ρ,A)⁻¹ X_AᵀW}`.
///
/// `W` is the diagonal of kernel weights over rows and is not restricted;
/// the active set only removes columns.
pub fn effective_df(
    pairs: &PairDesign,
    active: &[usize],
    basis: &SplineBasis,
    rho0: f64,
    rho1: f64,
) -> Result<f64> {
    let x = pairs.design();
    let w = pairs.weights();
    let n0 = pairs.total_pairs() as f64;
    let p = active.len();
    // G = X_Aᵀ W X_A / N0 (the trace is invariant to the common scale).
    let mut g = DMatrix::<f64>::zeros(p, p);
    for r in 0..x.nrows() {
        let wr = w[r] / n0;
        for (i, &ci) in active.iter().enumerate() {
            let xi = x[(r, ci)];
            if xi == 0.0 {
                continue;
            }
            for (j, &cj) in active.iter().enumerate() {
                g[(i, j)] += wr * xi * x[(r, cj)];
            }
        }
    }
    let v_rho = roughness_block(basis, rho0, rho1);
    let mut m = g.clone();
    for (i, &ci) in active.iter().enumerate() {
        for (j, &cj) in active.iter().enumerate() {
            m[(i, j)] += v_rho[(ci, cj)];
        }
    }
    let chol = Cholesky::new(m).ok_or(LockerError::SingularSystem {
        context: "degrees of freedom",
    })?;
    let solved = chol.solve(&g);
    Ok(solved.trace())
}

/// Criterion for a completed fit, with the default dimension weight.
pub fn ebic(fitres: &FitResult, pairs: &PairDesign, cfg: &FitConfig) -> Result<EbicBreakdown> {
    ebic_with_nu(fitres, pairs, cfg, DEFAULT_EBIC_NU)
}

pub fn ebic_with_nu(
    fitres: &FitResult,
    pairs: &PairDesign,
    cfg: &FitConfig,
    nu: f64,
) -> Result<EbicBreakdown> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(LockerError::param("nu", format!("must be in [0, 1], got {nu}")));
    }
    let eta = pairs.design() * &fitres.gamma;
    let means: Vec<f64> = eta.iter().map(|&e| cfg.family.mean(e)).collect();
    let dev = cfg.family.deviance(pairs, &means)?;
    let df = effective_df(pairs, &fitres.active_set, fitres.basis(), cfg.rho0, cfg.rho1)?;
    let n0 = pairs.num_retained();
    let two_l = 2 * fitres.basis().num_basis();
    Ok(EbicBreakdown {
        dev,
        df,
        n0,
        nu,
        score: ebic_score(dev, df, n0, two_l, nu),
    })
}

/// One grid cell of the joint (ρ̃, λ) search.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub rho: f64,
    pub lambda: f64,
    pub ebic: Option<EbicBreakdown>,
    pub error: Option<String>,
}

/// Outcome of the joint grid search.
#[derive(Debug, Clone)]
pub struct Selection {
    pub rho: f64,
    pub lambda: f64,
    pub ebic: EbicBreakdown,
    /// All cells in grid order, failures included, for diagnostics.
    pub table: Vec<GridCell>,
    pub fit: FitResult,
}

/// Log-spaced default grid `1e-6 … 1e-1` for the shared roughness parameter.
pub fn default_rho_grid() -> Vec<f64> {
    (0..6).map(|i| 10f64.powi(i - 6)).collect()
}

/// Default sparseness grid `{0} ∪ logspace(1e-4, 1, 9)`.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    for i in 0..9 {
        grid.push(10f64.powf(-4.0 + 4.0 * i as f64 / 8.0));
    }
    grid
}

/// Fits every `(ρ̃, λ)` pair with `ρ₀ = ρ₁ = ρ̃` and picks the criterion
/// minimizer. Ties break toward larger λ, then larger ρ̃.
pub fn select_rho_lambda(
    pairs: &PairDesign,
    basis: &SplineBasis,
    family: Family,
    rho_grid: &[f64],
    lambda_grid: &[f64],
) -> Result<Selection> {
    if rho_grid.is_empty() || lambda_grid.is_empty() {
        return Err(LockerError::param("grids", "grids must be nonempty"));
    }
    let cells: Vec<(f64, f64)> = rho_grid
        .iter()
        .flat_map(|&r| lambda_grid.iter().map(move |&l| (r, l)))
        .collect();

    let outcomes: Vec<(GridCell, Option<FitResult>)> = cells
        .par_iter()
        .map(|&(rho, lambda)| {
            let run = || -> Result<(EbicBreakdown, FitResult)> {
                let cfg = FitConfig::new(family).with_roughness(rho).with_lambda(lambda);
                let fitres = fit(pairs, &cfg, basis)?;
                let breakdown = ebic(&fitres, pairs, &cfg)?;
                Ok((breakdown, fitres))
            };
            match run() {
                Ok((breakdown, fitres)) => (
                    GridCell {
                        rho,
                        lambda,
                        ebic: Some(breakdown),
                        error: None,
                    },
                    Some(fitres),
                ),
                Err(e) => (
                    GridCell {
                        rho,
                        lambda,
                        ebic: None,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();

    let mut best: Option<(usize, EbicBreakdown)> = None;
    for (idx, (cell, _)) in outcomes.iter().enumerate() {
        let Some(b) = cell.ebic else { continue };
        let replace = match &best {
            None => true,
            Some((bi, bb)) => {
                let (brho, blambda) = (outcomes[*bi].0.rho, outcomes[*bi].0.lambda);
                b.score < bb.score
                    || (b.score == bb.score
                        && (cell.lambda > blambda
                            || (cell.lambda == blambda && cell.rho > brho)))
            }
        };
        if replace {
            best = Some((idx, b));
        }
    }

    match best {
        Some((idx, breakdown)) => {
            let rho = outcomes[idx].0.rho;
            let lambda = outcomes[idx].0.lambda;
            let fitres = outcomes[idx].1.clone().expect("successful cell keeps its fit");
            let table = outcomes.into_iter().map(|(c, _)| c).collect();
            Ok(Selection {
                rho,
                lambda,
                ebic: breakdown,
                table,
                fit: fitres,
            })
        }
        None => {
            let details: Vec<String> = outcomes
                .iter()
                .filter_map(|(c, _)| {
                    c.error
                        .as_ref()
                        .map(|e| format!("rho={} lambda={}: {}", c.rho, c.lambda, e))
                })
                .collect();
            Err(LockerError::GridExhausted {
                details: details.join("; "),
            })
        }
    }
}

/// Cross-validation options for the basis-dimension search.
#[derive(Debug, Clone)]
pub struct CvOptions {
    pub degree: usize,
    pub folds: usize,
    pub seed: u64,
    pub kernel: KernelFamily,
    /// Fixed bandwidth; when absent the bandwidth rule runs on each
    /// training split.
    pub bandwidth: Option<f64>,
    pub rho_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            degree: 3,
            folds: 5,
            seed: 0,
            kernel: KernelFamily::Epanechnikov,
            bandwidth: None,
            rho_grid: default_rho_grid(),
            lambda_grid: default_lambda_grid(),
        }
    }
}

/// One (L, fold) cell of the cross-validation table.
#[derive(Debug, Clone)]
pub struct CvCell {
    pub l: usize,
    pub fold: usize,
    /// Held-out kernel-weighted deviance; `None` when the fold was skipped.
    pub score: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LSelection {
    pub l: usize,
    pub table: Vec<CvCell>,
    /// Mean held-out score per candidate, `None` when every fold skipped.
    pub mean_scores: Vec<(usize, Option<f64>)>,
}

/// Deterministic subject-level fold assignment keyed on `(subject id, seed)`:
/// ids are sorted, shuffled by a seeded generator, and dealt round-robin.
pub fn fold_assignment(ds: &LongDataset, folds: usize, seed: u64) -> Vec<usize> {
    let mut ids: Vec<&str> = ds.subjects().iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let fold_of = |id: &str| ids.iter().position(|&x| x == id).unwrap() % folds;
    ds.subjects().iter().map(|s| fold_of(&s.id)).collect()
}

/// Picks the basis dimension by subject-level K-fold cross-validation. For
/// each candidate the tuning grid is re-run on every training split and the
/// held-out pairs are scored with the same kernel-weighted deviance used by
/// the criterion.
pub fn select_l(
    ds: &LongDataset,
    family: Family,
    candidate_ls: &[usize],
    opts: &CvOptions,
) -> Result<LSelection> {
    if candidate_ls.is_empty() {
        return Err(LockerError::param("candidate_ls", "no candidates"));
    }
    for &l in candidate_ls {
        if l < opts.degree + 2 {
            return Err(LockerError::param(
                "candidate_ls",
                format!("L = {l} needs at least degree + 2 = {}", opts.degree + 2),
            ));
        }
    }
    if opts.folds < 2 {
        return Err(LockerError::param("folds", "need at least 2 folds"));
    }
    if ds.num_subjects() < opts.folds {
        return Err(LockerError::param(
            "folds",
            format!(
                "{} folds but only {} subjects",
                opts.folds,
                ds.num_subjects()
            ),
        ));
    }

    let assignment = fold_assignment(ds, opts.folds, opts.seed);
    let tasks: Vec<(usize, usize)> = candidate_ls
        .iter()
        .flat_map(|&l| (0..opts.folds).map(move |f| (l, f)))
        .collect();

    // Fold datasets are canonicalized by subject id so the held-out scores
    // are bit-identical under permutations of the input subject order.
    let canonical = |keep: &dyn Fn(usize) -> bool| -> std::result::Result<LongDataset, String> {
        let mut subjects: Vec<_> = ds
            .subjects()
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, s)| s.clone())
            .collect();
        subjects.sort_by(|a, b| a.id.cmp(&b.id));
        if subjects.is_empty() {
            return Err("empty fold".into());
        }
        LongDataset::new(subjects, ds.domain()).map_err(|e| e.to_string())
    };

    let run_cell = |&(l, fold): &(usize, usize)| -> CvCell {
        let body = || -> std::result::Result<f64, String> {
            let train = canonical(&|i| assignment[i] != fold)?;
            let test = canonical(&|i| assignment[i] == fold)?;
            let h = match opts.bandwidth {
                Some(h) => h,
                None => default_bandwidth(&train).map_err(|e| e.to_string())?,
            };
            let spec = KernelSpec::new(opts.kernel, h).map_err(|e| e.to_string())?;
            let (lo, hi) = ds.domain();
            let basis = SplineBasis::uniform(opts.degree, l - opts.degree - 1, lo, hi)
                .map_err(|e| e.to_string())?;
            let train_pairs = pair_expand(&train, &basis, &spec).map_err(|e| e.to_string())?;
            if train_pairs.num_retained() == 0 {
                return Err("no retained training pairs".into());
            }
            let selection =
                select_rho_lambda(&train_pairs, &basis, family, &opts.rho_grid, &opts.lambda_grid)
                    .map_err(|e| e.to_string())?;
            let test_pairs = pair_expand(&test, &basis, &spec).map_err(|e| e.to_string())?;
            if test_pairs.num_retained() == 0 {
                return Err("no retained held-out pairs".into());
            }
            let eta = test_pairs.design() * &selection.fit.gamma;
            let means: Vec<f64> = eta.iter().map(|&e| family.mean(e)).collect();
            family
                .deviance(&test_pairs, &means)
                .map_err(|e| e.to_string())
        };
        match body() {
            Ok(score) => CvCell {
                l,
                fold,
                score: Some(score),
                note: None,
            },
            Err(note) => CvCell {
                l,
                fold,
                score: None,
                note: Some(note),
            },
        }
    };

    let table: Vec<CvCell> = tasks.par_iter().map(run_cell).collect();

    let mut mean_scores = Vec::new();
    for &l in candidate_ls {
        let scores: Vec<f64> = table
            .iter()
            .filter(|c| c.l == l)
            .filter_map(|c| c.score)
            .collect();
        let mean = if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        };
        mean_scores.push((l, mean));
    }

    let best = mean_scores
        .iter()
        .filter_map(|&(l, s)| s.map(|s| (l, s)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    match best {
        Some((l, _)) => Ok(LSelection {
            l,
            table,
            mean_scores,
        }),
        None => Err(LockerError::AllFoldsSkipped),
    }
}
