//! Long-format CSV ingestion: one row per observation, grouped by an id
//! column in order of first appearance.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use occamlme_core::IndividualData;

use crate::config::RunConfig;
use crate::error::CliError;

/// Column roles resolved against a CSV header.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRoles {
    pub id: String,
    pub response: String,
    pub time: Option<(String, usize)>,
    pub fixed: Vec<String>,
    pub random: Vec<String>,
}

impl ColumnRoles {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            id: cfg.id_column.clone(),
            response: cfg.response_column.clone(),
            time: cfg.time_column.clone().map(|t| (t, cfg.poly_degree)),
            fixed: cfg.fixed_columns.clone(),
            random: cfg.random_columns.clone(),
        }
    }

    /// Names of the columns of `X`, intercept first.
    pub fn fixed_names(&self) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        if let Some((t, degree)) = &self.time {
            names.extend((1..=*degree).map(|d| if d == 1 { t.clone() } else { format!("{t}^{d}") }));
        }
        names.extend(self.fixed.iter().cloned());
        names
    }

    /// The fixed-effect row of one observation.
    pub fn fixed_row(&self, time: Option<f64>, covariates: &[f64]) -> Vec<f64> {
        let mut row = vec![1.0];
        if let (Some((_, degree)), Some(t)) = (&self.time, time) {
            row.extend((1..=*degree as i32).map(|d| t.powi(d)));
        }
        row.extend_from_slice(covariates);
        row
    }
}

struct Rows {
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
}

pub fn load_csv(path: &Path, roles: &ColumnRoles) -> Result<Vec<IndividualData>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
    read_csv(file, roles)
}

pub fn read_csv(reader: impl std::io::Read, roles: &ColumnRoles) -> Result<Vec<IndividualData>, CliError> {
    if roles.random.is_empty() {
        return Err(CliError::Config("random_columns must name at least one column".into()));
    }
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = csv.headers().map_err(|e| CliError::Data(format!("reading header: {e}")))?.clone();
    let locate = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("column `{name}` not found in header")))
    };
    let id_col = locate(&roles.id)?;
    let y_col = locate(&roles.response)?;
    let time_col = roles.time.as_ref().map(|(t, _)| locate(t)).transpose()?;
    let fixed_cols = roles.fixed.iter().map(|c| locate(c)).collect::<Result<Vec<_>, _>>()?;
    let random_cols = roles.random.iter().map(|c| locate(c)).collect::<Result<Vec<_>, _>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Rows> = HashMap::new();
    for (index, record) in csv.records().enumerate() {
        let line = index + 2;
        let record = record.map_err(|e| CliError::Data(format!("line {line}: {e}")))?;
        let number = |col: usize| -> Result<f64, CliError> {
            let field = record.get(col).unwrap_or("");
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Data(format!("line {line}: `{field}` in column `{}` is not a finite number", &header[col])))
        };
        let id = record.get(id_col).unwrap_or("").to_string();
        let y = number(y_col)?;
        let time = time_col.map(number).transpose()?;
        let covariates = fixed_cols.iter().map(|&c| number(c)).collect::<Result<Vec<_>, _>>()?;
        let s = random_cols.iter().map(|&c| number(c)).collect::<Result<Vec<_>, _>>()?;
        let rows = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            Rows {
                y: Vec::new(),
                x: Vec::new(),
                s: Vec::new(),
            }
        });
        rows.y.push(y);
        rows.x.push(roles.fixed_row(time, &covariates));
        rows.s.push(s);
    }
    if order.is_empty() {
        return Err(CliError::Data("the input has no observations".into()));
    }
    order
        .into_iter()
        .map(|id| {
            let rows = groups.remove(&id).expect("every id has a group");
            let n = rows.y.len();
            let x = DMatrix::from_fn(n, rows.x[0].len(), |r, c| rows.x[r][c]);
            let s = DMatrix::from_fn(n, rows.s[0].len(), |r, c| rows.s[r][c]);
            IndividualData::new(id.clone(), rows.y, x, s).map_err(|e| CliError::Data(format!("individual {id}: {e}")))
        })
        .collect()
}
