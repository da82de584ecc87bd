use std::io::Write;

use super::NeighborSet;
use crate::error::Result;

/// Nine significant digits in scientific notation.
pub fn format_sig(v: f64) -> String {
    format!("{v:.8e}")
}

/// Square or rectangular distance matrix; the header row lists column ids,
/// each data row starts with its row id.
pub fn write_distance_matrix<W: Write>(
    out: W,
    row_ids: &[usize],
    col_ids: &[usize],
    dist: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend(col_ids.iter().map(|i| i.to_string()));
    w.write_record(&header)?;
    for (r, row) in row_ids.iter().zip(dist.chunks_exact(col_ids.len().max(1))) {
        let mut rec = vec![r.to_string()];
        rec.extend(row.iter().map(|&d| format_sig(d)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (query, rank) pair.
pub fn write_neighbor_table<W: Write>(out: W, sets: &[(usize, NeighborSet)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query", "rank", "neighbor", "distance"])?;
    for (q, set) in sets {
        for (rank, (id, d)) in set.ids.iter().zip(&set.distances).enumerate() {
            w.write_record([
                q.to_string(),
                (rank + 1).to_string(),
                id.to_string(),
                format_sig(*d),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
