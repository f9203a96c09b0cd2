//! Price relatives from CSV files.

use std::path::Path;

use calibrated_kelly::discretization::MarketSpec;

use crate::error::CliError;

/// One CSV row: the raw signal, if the file has a signal column, and the
/// return vector.
pub type MarketRow = (Option<f64>, Vec<f64>);

/// Reads a header row naming `spec.k` asset columns and at most one signal
/// column, then one row of price relatives per period. Rows are numbered from
/// 1, not counting the header. Values outside the spec are reported, never
/// clamped.
pub fn load_market_csv(
    path: &Path,
    spec: &MarketSpec,
    signal_column: Option<&str>,
) -> Result<Vec<MarketRow>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config {
            message: format!("cannot read market file: {e}"),
            path: Some(path.to_path_buf()),
        })?;
    let parse_err = |row: usize, column: &str, message: String| CliError::Parse {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(0, "", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();

    let signal_at = match signal_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| parse_err(0, name, "signal column missing from header".into()))?,
        ),
        None => headers.iter().position(|h| h == "signal"),
    };
    let assets: Vec<usize> = (0..headers.len())
        .filter(|&i| Some(i) != signal_at)
        .collect();
    if assets.len() != spec.k {
        return Err(parse_err(
            0,
            "",
            format!(
                "header has {} asset columns, expected {}",
                assets.len(),
                spec.k
            ),
        ));
    }

    let mut rows = Vec::new();
    let mut bad_returns = Vec::new();
    let mut bad_signals = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| parse_err(row, "", e.to_string()))?;
        let field = |col: usize| -> Result<f64, CliError> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(row, &headers[col], format!("not a number: {raw:?}")))
        };
        let x = assets
            .iter()
            .map(|&c| field(c))
            .collect::<Result<Vec<_>, _>>()?;
        let z = signal_at.map(field).transpose()?;
        if !spec.contains_return(&x) {
            bad_returns.push(row);
        }
        if z.is_some_and(|z| !spec.contains_signal(z)) {
            bad_signals.push(row);
        }
        rows.push((z, x));
    }
    if !bad_returns.is_empty() {
        return Err(CliError::Range {
            path: path.to_path_buf(),
            rows: bad_returns,
            lo: spec.lambda1,
            hi: spec.lambda2,
        });
    }
    if !bad_signals.is_empty() {
        return Err(CliError::Range {
            path: path.to_path_buf(),
            rows: bad_signals,
            lo: spec.signal_lo,
            hi: spec.signal_hi,
        });
    }
    Ok(rows)
}
