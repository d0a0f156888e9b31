use std::path::Path;

use nalgebra::{DMatrix, DVector};
use pmphi::{BetaMatrix, FitResult};
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::CliError;

pub fn read_input(path: &Path, manifest: &mut RunManifest) -> Result<Vec<u8>, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    manifest.record_input(path, &bytes);
    Ok(bytes)
}

/// Headerless numeric CSV, one matrix row per line.
pub fn parse_matrix(bytes: &[u8], what: &str) -> Result<DMatrix<f64>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::usage(format!("{what}: {e}")))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::usage(format!("{what} line {}: {e}", i + 1)))?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::usage(format!(
            "{what} must be a nonempty rectangular numeric table"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// A vector given either as one column or as one row.
pub fn parse_vector(bytes: &[u8], what: &str) -> Result<DVector<f64>, CliError> {
    let m = parse_matrix(bytes, what)?;
    if m.ncols() == 1 || m.nrows() == 1 {
        Ok(DVector::from_iterator(m.len(), m.iter().copied()))
    } else {
        Err(CliError::usage(format!(
            "{what} must be a single row or column"
        )))
    }
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Machine-readable fit output; matrices are stored as row lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOutput {
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    pub score_norm: f64,
    pub objective: f64,
    pub n_clusters: usize,
    /// Coefficient rows β_r, one per non-baseline category.
    pub beta_hat: Vec<Vec<f64>>,
    /// Row-major flattening of `beta_hat`, the parameter order of V_hat.
    pub beta_hat_flat: Vec<f64>,
    pub v_hat: Vec<Vec<f64>>,
    pub j_hat: Vec<Vec<f64>>,
    pub g_hat: Vec<Vec<f64>>,
    pub warnings: Vec<pmphi::estimator::FitWarning>,
    pub objective_history: Vec<f64>,
}

impl From<&FitResult> for FitOutput {
    fn from(r: &FitResult) -> Self {
        Self {
            lambda: r.lambda.value(),
            converged: r.converged,
            iterations: r.iterations,
            score_norm: r.score_norm,
            objective: r.objective,
            n_clusters: r.n_clusters,
            beta_hat: r.beta_hat.rows(),
            beta_hat_flat: r.beta_hat.flat().to_vec(),
            v_hat: rows_of(&r.v_hat),
            j_hat: rows_of(&r.j_hat),
            g_hat: rows_of(&r.g_hat),
            warnings: r.warnings.clone(),
            objective_history: r.objective_history.clone(),
        }
    }
}

impl FitOutput {
    pub fn beta(&self) -> Result<BetaMatrix, CliError> {
        Ok(BetaMatrix::from_rows(&self.beta_hat)?)
    }

    pub fn v_matrix(&self) -> Result<DMatrix<f64>, CliError> {
        matrix_from_rows(&self.v_hat, "v_hat")
    }
}

#[derive(Deserialize)]
struct FitFile {
    fit: FitOutput,
}

pub fn parse_fit(bytes: &[u8], path: &Path) -> Result<FitOutput, CliError> {
    serde_json::from_slice::<FitFile>(bytes)
        .map(|f| f.fit)
        .map_err(|e| CliError::usage(format!("{} is not a fit output: {e}", path.display())))
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::usage(format!(
            "{what} must be a nonempty rectangular matrix"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Coefficients from a JSON file: either a list of rows `[[..],[..]]` or a
/// fit output. Returns V̂ too when the file is a fit output.
pub fn parse_beta(
    bytes: &[u8],
    path: &Path,
) -> Result<(BetaMatrix, Option<DMatrix<f64>>), CliError> {
    if let Ok(rows) = serde_json::from_slice::<Vec<Vec<f64>>>(bytes) {
        return Ok((BetaMatrix::from_rows(&rows)?, None));
    }
    let fit = parse_fit(bytes, path).map_err(|_| {
        CliError::usage(format!(
            "{}: expected a list of coefficient rows or a fit output",
            path.display()
        ))
    })?;
    Ok((fit.beta()?, Some(fit.v_matrix()?)))
}
